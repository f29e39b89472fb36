"""Poisson solve, velocity moments, and the v = 0 trace operator.

The potential is globally continuous piecewise linear on the spatial grid
(P1 finite elements); its gradient, and hence the advection speed in v, is
constant on every spatial cell.  Load integrals are exact because the density
and doping are stored as broken P1 fields.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .mesh import PhaseField, PhaseMesh, SpatialField
from .transport import BoundaryTrace, EffectiveField


class PeriodicCompatibilityError(ValueError):
    """Periodic Poisson problem with a load whose mean is not zero."""


@dataclass
class Potential:
    """Nodal values of the continuous piecewise-linear potential.

    For periodic problems ``nodes[nx] == nodes[0]`` and the zero-mean gauge
    fixes the additive constant.
    """

    mesh: PhaseMesh
    nodes: np.ndarray  # (nx + 1,)
    periodic: bool = False

    def __post_init__(self):
        if self.nodes.shape != (self.mesh.nx + 1,):
            raise ValueError("one value per spatial grid node required")
        if not np.all(np.isfinite(self.nodes)):
            raise FloatingPointError("non-finite potential")

    def mean(self) -> float:
        """Domain average of the piecewise-linear interpolant."""
        if self.periodic:
            return float(np.mean(self.nodes[:-1]))
        w = np.ones(self.mesh.nx + 1)
        w[0] = w[-1] = 0.5
        return float(np.sum(w * self.nodes) / self.mesh.nx)


def _load_vector(p: np.ndarray, dx: float, periodic: bool) -> np.ndarray:
    """b_j = -int p phi_j dx for hat functions phi_j (exact, p is broken P1)."""
    left = dx * (p[:, 0] / 2.0 + p[:, 1] / 12.0)    # cell contribution to its right node
    right = dx * (p[:, 0] / 2.0 - p[:, 1] / 12.0)   # contribution to its left node
    nx = p.shape[0]
    if periodic:
        b = np.zeros(nx)
        b += right
        b[(np.arange(nx) + 1) % nx] += left
        return -b
    b = np.zeros(nx + 1)
    b[:-1] += right
    b[1:] += left
    return -b


def poisson_solve(rho: SpatialField, doping: SpatialField,
                  bc: tuple[float, float] | None, load_scale: float = 1.0,
                  zeta: float = 1.0, compat_tol: float | None = 1e-10) -> Potential:
    """Solve the P1 finite element Poisson system for the potential.

    The weak form is  int Phi' w' dx = -int load_scale*(zeta*rho - D) w dx.
    ``bc`` gives the two Dirichlet values; ``bc=None`` selects periodic
    boundary conditions with the zero-mean gauge, which requires the load to
    integrate to zero (checked against ``compat_tol`` unless it is None; the
    projected, solvable problem is what gets solved either way).
    """
    mesh = rho.mesh
    nx, dx = mesh.nx, mesh.dx
    p = load_scale * (zeta * rho.coeffs - doping.coeffs)
    if bc is not None:
        b = _load_vector(p, dx, periodic=False)
        psi0, psil = float(bc[0]), float(bc[1])
        if nx == 1:
            return Potential(mesh, np.array([psi0, psil]))
        rhs = b[1:-1].copy()
        rhs[0] += psi0 / dx
        rhs[-1] += psil / dx
        ab = np.zeros((3, nx - 1))
        ab[0, 1:] = -1.0 / dx
        ab[1, :] = 2.0 / dx
        ab[2, :-1] = -1.0 / dx
        interior = solve_banded((1, 1), ab, rhs)
        nodes = np.concatenate([[psi0], interior, [psil]])
        return Potential(mesh, nodes)

    # periodic: the stiffness matrix is circulant, solve in Fourier space
    total = float(np.sum(dx * p[:, 0]))
    scale = float(np.sum(dx * np.abs(p[:, 0]))) + 1e-300
    if compat_tol is not None and abs(total) > compat_tol * max(scale, 1e-300):
        raise PeriodicCompatibilityError(
            f"periodic load must have zero mean, relative imbalance {abs(total) / scale:.3e}")
    b = _load_vector(p, dx, periodic=True)
    b = b - np.mean(b)
    bh = np.fft.rfft(b)
    k = np.arange(bh.size)
    lam = (2.0 - 2.0 * np.cos(2.0 * np.pi * k / nx)) / dx
    lam[0] = 1.0
    ph = bh / lam
    ph[0] = 0.0
    interior = np.fft.irfft(ph, n=nx)
    interior -= np.mean(interior)
    nodes = np.concatenate([interior, [interior[0]]])
    return Potential(mesh, nodes, periodic=True)


def electric_field(pot: Potential, field_scale: float = 1.0) -> EffectiveField:
    """Cell-constant effective field: field_scale * dPhi/dx per cell."""
    vals = field_scale * np.diff(pot.nodes) / pot.mesh.dx
    return EffectiveField(pot.mesh, vals)


def moment_P(f: PhaseField) -> SpatialField:
    """Velocity integral over the truncated domain (exact for broken P1)."""
    dv = f.mesh.dv
    c = f.coeffs
    out = dv * np.stack([c[:, :, 0].sum(axis=1), c[:, :, 1].sum(axis=1)], axis=-1)
    return SpatialField(f.mesh, out)


def v0_traces(f: PhaseField) -> tuple[np.ndarray, np.ndarray]:
    """Unmasked one-sided P1 traces of f on the v = 0 line.

    Returns (from-above, from-below) coefficient arrays of shape (nx, 2).
    These are smooth functions of the coefficients; the field-sign indicator
    masks are applied downstream (the sweep couplings weight them by
    |E| times the indicator, which vanishes continuously at sign changes).
    """
    mesh = f.mesh
    jz = mesh.nv_neg
    t1 = np.zeros((mesh.nx, 2))
    t2 = np.zeros((mesh.nx, 2))
    if 0 < jz < mesh.nv:
        cu = f.coeffs[:, jz, :]       # first cell above v = 0, bottom trace
        cd = f.coeffs[:, jz - 1, :]   # first cell below v = 0, top trace
        t1[:, 0] = cu[:, 0] - 0.5 * cu[:, 2]
        t1[:, 1] = cu[:, 1]
        t2[:, 0] = cd[:, 0] + 0.5 * cd[:, 2]
        t2[:, 1] = cd[:, 1]
    return t1, t2


def trace_T(f: PhaseField, E: EffectiveField) -> BoundaryTrace:
    """Upwind trace of f on v = 0 masked by the sign of the field.

    Where E < 0 the upwind side is v > 0, recorded in f1; where E > 0 it is
    v < 0, recorded in f2; zero-field cells carry no trace.
    """
    mesh = f.mesh
    t1, t2 = v0_traces(f)
    f1 = np.where((E.values < 0.0)[:, None], t1, 0.0)
    f2 = np.where((E.values > 0.0)[:, None], t2, 0.0)
    return BoundaryTrace(mesh, f1, f2)
