"""Phase-space grid and DG P1 function spaces.

The computational domain is a rectangle [x_lo, x_hi] x [v_lo, v_hi] covered by
a uniform Cartesian grid of nx * nv open cells.  Distribution functions live in
the broken P1 space with the scaled, cell-centered monomial basis

    {1, (x - x_c)/dx, (v - v_c)/dv},

so each phase cell carries three coefficients (c0, c1, c2) and each spatial
cell carries two (c0, c1).  The velocity line v = 0 must fall on a cell
interface whenever the domain straddles it, because the sweeping solver splits
the grid into the half-spaces v > 0 and v < 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Gauss-Legendre nodes/weights on the reference cell [-1/2, 1/2].
# Weights sum to 1, so a cell integral is measure * sum(w_q * f(q)).
GAUSS2_X = np.array([-0.5, 0.5]) / np.sqrt(3.0)
GAUSS2_W = np.array([0.5, 0.5])
_g4 = np.array([0.3399810435848563, 0.8611363115940526])
_w4 = np.array([0.6521451548625461, 0.3478548451374538])
GAUSS4_X = 0.5 * np.array([-_g4[1], -_g4[0], _g4[0], _g4[1]])
GAUSS4_W = 0.5 * np.array([_w4[1], _w4[0], _w4[0], _w4[1]])


class MeshError(ValueError):
    """Invalid grid geometry."""


@dataclass(frozen=True)
class PhaseMesh:
    """Uniform rectangular phase-space grid.

    ``nv_neg`` counts the velocity cells with v < 0; cells ``j < nv_neg`` form
    the downward (v < 0) subdomain and cells ``j >= nv_neg`` the upward one.
    """

    x_lo: float
    x_hi: float
    v_lo: float
    v_hi: float
    nx: int
    nv: int
    x_periodic: bool = False
    dx: float = field(init=False)
    dv: float = field(init=False)
    nv_neg: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "dx", (self.x_hi - self.x_lo) / self.nx)
        object.__setattr__(self, "dv", (self.v_hi - self.v_lo) / self.nv)
        if self.v_lo >= 0.0:
            jz = 0
        elif self.v_hi <= 0.0:
            jz = self.nv
        else:
            jz_f = -self.v_lo / self.dv
            jz = int(round(jz_f))
            if abs(jz_f - jz) > 1e-12 * self.nv:
                raise MeshError(
                    "v = 0 must lie on a cell interface, got fractional index "
                    f"{jz_f!r}"
                )
        object.__setattr__(self, "nv_neg", jz)

    @property
    def nv_pos(self) -> int:
        return self.nv - self.nv_neg

    @property
    def n_cells(self) -> int:
        return self.nx * self.nv

    @property
    def n_unknowns(self) -> int:
        return 3 * self.nx * self.nv

    @property
    def x_centers(self) -> np.ndarray:
        return self.x_lo + (np.arange(self.nx) + 0.5) * self.dx

    @property
    def v_centers(self) -> np.ndarray:
        return self.v_lo + (np.arange(self.nv) + 0.5) * self.dv

    @property
    def x_nodes(self) -> np.ndarray:
        return self.x_lo + np.arange(self.nx + 1) * self.dx

    def x_cell_of(self, x: float) -> int:
        i = int(np.floor((x - self.x_lo) / self.dx))
        return min(max(i, 0), self.nx - 1)

    def v_cell_of(self, v: float) -> int:
        j = int(np.floor((v - self.v_lo) / self.dv))
        return min(max(j, 0), self.nv - 1)


def build_mesh(x_lo: float, x_hi: float, v_lo: float, v_hi: float,
               nx: int, nv: int, x_periodic: bool = False) -> PhaseMesh:
    """Validate bounds/counts and construct the grid."""
    if not (x_hi > x_lo and v_hi > v_lo):
        raise MeshError("domain bounds must be ordered with positive extent")
    if nx < 1 or nv < 1:
        raise MeshError("cell counts must be positive")
    return PhaseMesh(float(x_lo), float(x_hi), float(v_lo), float(v_hi),
                     int(nx), int(nv), bool(x_periodic))


@dataclass
class PhaseField:
    """Broken P1 function on the phase grid; coeffs has shape (nx, nv, 3)."""

    mesh: PhaseMesh
    coeffs: np.ndarray

    def __post_init__(self):
        expected = (self.mesh.nx, self.mesh.nv, 3)
        if self.coeffs.shape != expected:
            raise ValueError(f"coefficient array must have shape {expected}")

    @classmethod
    def zeros(cls, mesh: PhaseMesh) -> "PhaseField":
        return cls(mesh, np.zeros((mesh.nx, mesh.nv, 3)))

    def copy(self) -> "PhaseField":
        return PhaseField(self.mesh, self.coeffs.copy())

    def check_finite(self):
        if not np.all(np.isfinite(self.coeffs)):
            raise FloatingPointError("non-finite phase-field coefficients")

    def l2_norm(self) -> float:
        """Exact L2 norm from coefficients (basis is L2-orthogonal)."""
        c = self.coeffs
        cell = self.mesh.dx * self.mesh.dv
        return float(np.sqrt(cell * np.sum(
            c[:, :, 0] ** 2 + (c[:, :, 1] ** 2 + c[:, :, 2] ** 2) / 12.0)))


@dataclass
class SpatialField:
    """Broken P1 function of x alone; coeffs has shape (nx, 2)."""

    mesh: PhaseMesh
    coeffs: np.ndarray

    def __post_init__(self):
        expected = (self.mesh.nx, 2)
        if self.coeffs.shape != expected:
            raise ValueError(f"coefficient array must have shape {expected}")

    @classmethod
    def zeros(cls, mesh: PhaseMesh) -> "SpatialField":
        return cls(mesh, np.zeros((mesh.nx, 2)))

    def copy(self) -> "SpatialField":
        return SpatialField(self.mesh, self.coeffs.copy())

    def l2_norm(self) -> float:
        c = self.coeffs
        return float(np.sqrt(self.mesh.dx * np.sum(
            c[:, 0] ** 2 + c[:, 1] ** 2 / 12.0)))

    def values_at(self, x: np.ndarray) -> np.ndarray:
        """Pointwise evaluation (vectorized); edge points use the left cell."""
        x = np.asarray(x, dtype=float)
        i = np.clip(np.floor((x - self.mesh.x_lo) / self.mesh.dx).astype(int),
                    0, self.mesh.nx - 1)
        xh = (x - self.mesh.x_lo) / self.mesh.dx - i - 0.5
        return self.coeffs[i, 0] + self.coeffs[i, 1] * xh


def project(fn, mesh: PhaseMesh, npts: int = 4) -> PhaseField:
    """Cell-wise L2 projection of fn(x, v) onto the broken P1 space.

    Uses a tensor Gauss rule with ``npts`` points per direction (4 by default
    so smooth non-polynomial data is integrated well beyond discretization
    accuracy; exact for polynomials already in the local space).
    """
    gx, gw = (GAUSS4_X, GAUSS4_W) if npts == 4 else (GAUSS2_X, GAUSS2_W)
    xq = mesh.x_centers[:, None] + mesh.dx * gx[None, :]      # (nx, q)
    vq = mesh.v_centers[:, None] + mesh.dv * gx[None, :]      # (nv, q)
    vals = fn(xq[:, None, :, None], vq[None, :, None, :])     # (nx, nv, q, q)
    vals = np.broadcast_to(vals, (mesh.nx, mesh.nv, gx.size, gx.size))
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError("projection data is not finite")
    wx = gw[:, None] * gw[None, :]
    c0 = np.einsum("ijpq,pq->ij", vals, wx)
    c1 = 12.0 * np.einsum("ijpq,pq->ij", vals, gx[:, None] * wx)
    c2 = 12.0 * np.einsum("ijpq,pq->ij", vals, gx[None, :] * wx)
    return PhaseField(mesh, np.stack([c0, c1, c2], axis=-1))


def project_spatial(fn, mesh: PhaseMesh, npts: int = 4) -> SpatialField:
    """Cell-wise L2 projection of fn(x) onto broken P1 in x."""
    gx, gw = (GAUSS4_X, GAUSS4_W) if npts == 4 else (GAUSS2_X, GAUSS2_W)
    xq = mesh.x_centers[:, None] + mesh.dx * gx[None, :]
    vals = np.broadcast_to(np.asarray(fn(xq), dtype=float), xq.shape)
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError("projection data is not finite")
    c0 = vals @ gw
    c1 = 12.0 * (vals @ (gx * gw))
    return SpatialField(mesh, np.stack([c0, c1], axis=-1))


def evaluate(f: PhaseField, x: float, v: float) -> float:
    """Point value from the owning cell (ties on interfaces go left/down)."""
    m = f.mesh
    if not (m.x_lo <= x <= m.x_hi and m.v_lo <= v <= m.v_hi):
        raise ValueError("evaluation point outside the domain")
    i, j = m.x_cell_of(x), m.v_cell_of(v)
    xh = (x - m.x_lo) / m.dx - i - 0.5
    vh = (v - m.v_lo) / m.dv - j - 0.5
    c = f.coeffs[i, j]
    return float(c[0] + c[1] * xh + c[2] * vh)


def edge_limits(f: PhaseField, axis: str, k: int, s: float) -> tuple[float, float]:
    """One-sided limits (minus, plus) across an interior cell interface.

    ``axis='x'`` selects the vertical interface at x_nodes[k] (1 <= k < nx)
    with transverse coordinate s = v; ``axis='v'`` the horizontal interface at
    v_lo + k*dv with s = x.  Minus is the limit from the lower-index cell.
    """
    m = f.mesh
    if axis == "x":
        if not 1 <= k < m.nx:
            raise ValueError("interior x-interface index required")
        j = m.v_cell_of(s)
        vh = (s - m.v_lo) / m.dv - j - 0.5
        cm, cp = f.coeffs[k - 1, j], f.coeffs[k, j]
        return (float(cm[0] + 0.5 * cm[1] + cm[2] * vh),
                float(cp[0] - 0.5 * cp[1] + cp[2] * vh))
    if axis == "v":
        if not 1 <= k < m.nv:
            raise ValueError("interior v-interface index required")
        i = m.x_cell_of(s)
        xh = (s - m.x_lo) / m.dx - i - 0.5
        cm, cp = f.coeffs[i, k - 1], f.coeffs[i, k]
        return (float(cm[0] + cm[1] * xh + 0.5 * cm[2]),
                float(cp[0] + cp[1] * xh - 0.5 * cp[2]))
    raise ValueError("axis must be 'x' or 'v'")


def jump_and_average(f: PhaseField, axis: str, k: int, s: float) -> tuple[float, float]:
    """[g] = g+ - g- and <g> = (g+ + g-)/2 at an interior interface."""
    gm, gp = edge_limits(f, axis, k, s)
    return gp - gm, 0.5 * (gp + gm)
