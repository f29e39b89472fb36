"""Upwind DG transport operators and the subdomain sweep.

The implicit step couples a reaction term (c0*eps/dt + omega/eps) f with phase
advection by a = (v, E).  Splitting the grid at v = 0 removes characteristic
cycles: on each half the advection has a fixed x-direction, so the operator is
block lower triangular in the sweep ordering and inverts cell by cell.  The
two halves talk only through the upwind trace of f on the v = 0 line, masked
by the sign of the field (nonzero field moves particles across v = 0; a zero
field column carries no flux there at all).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .mesh import GAUSS4_W, GAUSS4_X, PhaseField, PhaseMesh, SpatialField


@dataclass(frozen=True)
class EffectiveField:
    """Cell-constant advection speed in v (field scale already applied)."""

    mesh: PhaseMesh
    values: np.ndarray  # (nx,)

    def __post_init__(self):
        if self.values.shape != (self.mesh.nx,):
            raise ValueError("one field value per spatial cell required")
        if not np.all(np.isfinite(self.values)):
            raise FloatingPointError("non-finite field values")

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0


@dataclass
class BoundaryTrace:
    """Upwind P1 traces of f on v = 0, masked by the sign of the field.

    ``f1`` holds the trace taken from the v > 0 side (support where E < 0),
    ``f2`` the trace from below (support where E > 0); both shape (nx, 2).
    """

    mesh: PhaseMesh
    f1: np.ndarray
    f2: np.ndarray

    def __post_init__(self):
        for arr in (self.f1, self.f2):
            if arr.shape != (self.mesh.nx, 2):
                raise ValueError("traces carry two coefficients per spatial cell")

    @classmethod
    def zeros(cls, mesh: PhaseMesh) -> "BoundaryTrace":
        return cls(mesh, np.zeros((mesh.nx, 2)), np.zeros((mesh.nx, 2)))

    def check_masks(self, E: EffectiveField, tol: float = 0.0):
        """Supports must be disjoint: f1 only where E < 0, f2 only where E > 0."""
        bad1 = np.any(np.abs(self.f1[E.values >= 0.0]) > tol)
        bad2 = np.any(np.abs(self.f2[E.values <= 0.0]) > tol)
        if bad1 or bad2:
            raise ValueError("trace support violates the field-sign masks")


def upwind_trace(minus: float, plus: float, advect_normal: float) -> float:
    """Upwind edge value <g> - sgn(a.n)[g]/2; the average when a.n == 0."""
    if advect_normal > 0.0:
        return minus
    if advect_normal < 0.0:
        return plus
    return 0.5 * (minus + plus)


class SweepContext:
    """Per-timestep data for the sweep operator.

    ``explicit`` is the P1 projection of eps*(q + time-history) appearing on
    the right-hand side; ``omega`` is the pointwise collision frequency on X;
    ``time_coeff`` is 1 for implicit Euler and 3/2 for BDF2.  All quadrature
    moments consumed by the kernels are precomputed here once per step.
    """

    def __init__(self, mesh: PhaseMesh, eps: float, dt: float, omega,
                 theta: float, explicit: PhaseField, time_coeff: float = 1.0,
                 f_minus=None):
        if eps <= 0.0 or dt <= 0.0 or theta <= 0.0:
            raise ValueError("eps, dt and theta must be positive")
        self.mesh = mesh
        self.eps = float(eps)
        self.dt = float(dt)
        self.time_coeff = float(time_coeff)
        self.omega = omega
        self.theta = float(theta)
        self.explicit = explicit
        self.f_minus = f_minus
        self.sweep_count = 0

        dx, dv = mesh.dx, mesh.dv
        xq = mesh.x_centers[:, None] + dx * GAUSS4_X[None, :]
        om = np.broadcast_to(np.asarray(omega(xq), dtype=float), xq.shape)
        if np.any(om < 0.0) or np.any(om > 1.0):
            raise ValueError("collision frequency must satisfy 0 <= omega <= 1")
        self.omega_q = om
        lam = self.time_coeff * eps / dt + om / eps
        wq = GAUSS4_W * dx
        # reaction x-moments of lambda against {1, xh, xh^2}
        self.l00 = lam @ wq
        self.l01 = lam @ (wq * GAUSS4_X)
        self.l11 = lam @ (wq * GAUSS4_X ** 2)
        # scattering x-moments of omega/eps (same rule keeps the discrete
        # collision mass identity exact)
        w_over_eps = om / eps
        self.w00 = w_over_eps @ wq
        self.w01 = w_over_eps @ (wq * GAUSS4_X)
        self.w11 = w_over_eps @ (wq * GAUSS4_X ** 2)

        # Maxwellian v-moments per cell against {1, vh}
        vq = mesh.v_centers[:, None] + dv * GAUSS4_X[None, :]
        mq = maxwellian(vq, theta)
        wv = GAUSS4_W * dv
        self.m0 = mq @ wv
        self.m1 = mq @ (wv * GAUSS4_X)
        self.m_trunc = float(np.sum(self.m0))

        # explicit-source moments against the (unnormalized) local basis
        e = explicit.coeffs
        cell = dx * dv
        self.expl_mom = np.stack(
            [cell * e[:, :, 0], cell * e[:, :, 1] / 12.0,
             cell * e[:, :, 2] / 12.0], axis=-1)

        # x-boundary inflow flux moments (J0, J2) per velocity cell
        self.xin1 = self._inflow_flux(+1)
        self.xin2 = self._inflow_flux(-1)

    def _inflow_flux(self, sx: int) -> np.ndarray:
        mesh = self.mesh
        nvh = mesh.nv_pos if sx > 0 else mesh.nv_neg
        out = np.zeros((nvh, 2))
        if self.f_minus is None or nvh == 0 or mesh.x_periodic:
            return out
        xb = mesh.x_lo if sx > 0 else mesh.x_hi
        vc = self.v_half(sx)
        vq = vc[:, None] + mesh.dv * GAUSS4_X[None, :]
        fq = np.broadcast_to(np.asarray(self.f_minus(xb, vq), dtype=float), vq.shape)
        wv = GAUSS4_W * mesh.dv
        out[:, 0] = (sx * vq * fq) @ wv
        out[:, 1] = (sx * vq * fq) @ (wv * GAUSS4_X)
        return out

    def v_half(self, sx: int) -> np.ndarray:
        """Cell-center velocities of one subdomain, ascending."""
        jz = self.mesh.nv_neg
        vc = self.mesh.v_centers
        return vc[jz:] if sx > 0 else vc[:jz]

    def scatter_moments(self, sigma: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """x-moments of (omega/eps) * sigma against {1, xh} per cell."""
        s0 = sigma[:, 0] * self.w00 + sigma[:, 1] * self.w01
        s1 = sigma[:, 0] * self.w01 + sigma[:, 1] * self.w11
        return s0, s1


def maxwellian(v, theta):
    """Gaussian equilibrium M_theta(v) in one velocity dimension."""
    return np.exp(-np.square(v) / (2.0 * theta)) / np.sqrt(2.0 * np.pi * theta)


def sweep_ordering(subdomain: int, E: EffectiveField) -> np.ndarray:
    """Cell visitation order for one subdomain as (i, j_global) rows.

    Columns advance downstream in x; inside a column the v-run starts from
    the column's v-inflow side (the v = 0 trace when the field pushes into
    the subdomain, the outer v boundary otherwise).
    """
    mesh = E.mesh
    jz = mesh.nv_neg
    if subdomain == 1:
        cols = range(mesh.nx)
        jlocal = np.arange(jz, mesh.nv)
    elif subdomain == 2:
        cols = range(mesh.nx - 1, -1, -1)
        jlocal = np.arange(0, jz)
    else:
        raise ValueError("subdomain must be 1 or 2")
    order = []
    for i in cols:
        e = E.values[i]
        up = e > 0.0 or e == 0.0
        js = jlocal if up else jlocal[::-1]
        for j in js:
            order.append((i, j))
    return np.array(order, dtype=np.int64).reshape(-1, 2)


def _rhs_base(ctx: SweepContext, sx: int, sigma: np.ndarray) -> np.ndarray:
    mesh = ctx.mesh
    jz = mesh.nv_neg
    sl = slice(jz, mesh.nv) if sx > 0 else slice(0, jz)
    s0, s1 = ctx.scatter_moments(sigma)
    m0 = ctx.m0[sl]
    m1 = ctx.m1[sl]
    rhs = ctx.expl_mom[:, sl, :].copy()
    rhs[:, :, 0] += s0[:, None] * m0[None, :]
    rhs[:, :, 1] += s1[:, None] * m0[None, :]
    rhs[:, :, 2] += s0[:, None] * m1[None, :]
    return rhs


def sweep(subdomain: int, E: EffectiveField, ctx: SweepContext,
          sigma: SpatialField, trace: BoundaryTrace,
          xin: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Invert the subdomain operator; returns (coeffs, downstream traces).

    ``xin`` overrides the upstream inflow flux moments (used for the periodic
    coupling); by default the context's boundary data is used.
    """
    sx = +1 if subdomain == 1 else -1
    mesh = ctx.mesh
    vc = ctx.v_half(sx)
    nvh = vc.size
    out = np.zeros((mesh.nx, nvh, 3))
    xout = np.zeros((nvh, 2))
    if nvh == 0:
        return out, xout
    rhs = _rhs_base(ctx, sx, sigma.coeffs)
    rc = trace.f2 if subdomain == 1 else trace.f1
    influx = (ctx.xin1 if subdomain == 1 else ctx.xin2) if xin is None else xin
    kernels.sweep_half(sx, mesh.nx, nvh, mesh.dx, mesh.dv, vc, E.values,
                       ctx.l00, ctx.l01, ctx.l11, rhs,
                       np.ascontiguousarray(rc), np.ascontiguousarray(influx),
                       out, xout)
    return out, xout


@dataclass
class NResult:
    """Output of one full sweep pair plus downstream x-boundary traces."""

    f: PhaseField
    out1: np.ndarray  # sub-1 traces at x_hi, (nv_pos, 2)
    out2: np.ndarray  # sub-2 traces at x_lo, (nv_neg, 2)


def apply_N(E: EffectiveField, ctx: SweepContext, sigma: SpatialField,
            trace: BoundaryTrace,
            periodic_in: tuple[np.ndarray, np.ndarray] | None = None) -> NResult:
    """One sweep in each subdomain; counts as a single sweep in accounting."""
    xin1 = xin2 = None
    if periodic_in is not None:
        xin1, xin2 = (_trace_to_influx(ctx, +1, periodic_in[0]),
                      _trace_to_influx(ctx, -1, periodic_in[1]))
    up, out1 = sweep(1, E, ctx, sigma, trace, xin1)
    dn, out2 = sweep(2, E, ctx, sigma, trace, xin2)
    coeffs = np.concatenate([dn, up], axis=1)
    ctx.sweep_count += 1
    return NResult(PhaseField(ctx.mesh, coeffs), out1, out2)


def _trace_to_influx(ctx: SweepContext, sx: int, tr: np.ndarray) -> np.ndarray:
    """Exact flux moments of a P1-in-v trace used as inflow data."""
    vc = ctx.v_half(sx)
    dv = ctx.mesh.dv
    out = np.empty((vc.size, 2))
    out[:, 0] = sx * dv * (vc * tr[:, 0] + dv * tr[:, 1] / 12.0)
    out[:, 1] = sx * dv * (dv * tr[:, 0] + vc * tr[:, 1]) / 12.0
    return out


def boundary_outflow_traces(f: PhaseField) -> tuple[np.ndarray, np.ndarray]:
    """Traces of f at the downstream x walls of each subdomain."""
    jz = f.mesh.nv_neg
    c_up = f.coeffs[-1, jz:, :]   # sub 1 leaves at x_hi
    c_dn = f.coeffs[0, :jz, :]    # sub 2 leaves at x_lo
    out1 = np.stack([c_up[:, 0] + 0.5 * c_up[:, 1], c_up[:, 2]], axis=-1)
    out2 = np.stack([c_dn[:, 0] - 0.5 * c_dn[:, 1], c_dn[:, 2]], axis=-1)
    return out1, out2


def global_residual(f: PhaseField, E: EffectiveField, ctx: SweepContext) -> float:
    """l2 norm of the full nonlinear residual tested with every basis function.

    Evaluates A_E(f, g) - S(P f, g) - L(g) directly (matrix free); the v = 0
    coupling uses f's own upwind traces, so this measures how far f is from
    solving the complete implicit step for the supplied field.  Verification
    only; never used inside the solver loop.
    """
    return float(np.sqrt(np.sum(residual_vector(f, E, ctx) ** 2)))


def residual_vector(f: PhaseField, E: EffectiveField, ctx: SweepContext) -> np.ndarray:
    """Per-test-function residual array (nx, nv, 3); see global_residual."""
    mesh = ctx.mesh
    nx, nv, dx, dv = mesh.nx, mesh.nv, mesh.dx, mesh.dv
    c = f.coeffs
    vc = mesh.v_centers
    res = np.zeros((nx, nv, 3))

    # reaction
    res[:, :, 0] += dv * (ctx.l00[:, None] * c[:, :, 0] + ctx.l01[:, None] * c[:, :, 1])
    res[:, :, 1] += dv * (ctx.l01[:, None] * c[:, :, 0] + ctx.l11[:, None] * c[:, :, 1])
    res[:, :, 2] += dv * ctx.l00[:, None] * c[:, :, 2] / 12.0

    # volume advection
    res[:, :, 1] -= dv * (vc[None, :] * c[:, :, 0] + dv * c[:, :, 2] / 12.0)
    res[:, :, 2] -= dx * E.values[:, None] * c[:, :, 0]

    # x-direction fluxes (upwind by the sign of v; v never vanishes on a cell)
    tl = np.stack([c[:, :, 0] + 0.5 * c[:, :, 1], c[:, :, 2]], axis=-1)  # right traces
    tr = np.stack([c[:, :, 0] - 0.5 * c[:, :, 1], c[:, :, 2]], axis=-1)  # left traces
    up = vc > 0.0
    # edge k sits between cells k-1 and k, k = 0..nx; value by upwinding
    t_edge = np.zeros((nx + 1, nv, 2))
    t_edge[1:, up] = tl[:, up]
    t_edge[:-1, ~up] = tr[:, ~up]
    if mesh.x_periodic:
        t_edge[0, up] = tl[-1, up]
        t_edge[-1, ~up] = tr[0, ~up]
    elif ctx.f_minus is not None:
        for sx, row in ((+1, 0), (-1, nx)):
            mask = up if sx > 0 else ~up
            xb = mesh.x_lo if sx > 0 else mesh.x_hi
            vq = vc[mask, None] + dv * GAUSS4_X[None, :]
            fq = np.broadcast_to(np.asarray(ctx.f_minus(xb, vq), dtype=float), vq.shape)
            # equivalent P1 trace reproducing the exact inflow flux moments
            vj = vc[mask]
            j0 = (vq * fq) @ (GAUSS4_W * dv)
            j2 = (vq * fq) @ (GAUSS4_W * dv * GAUSS4_X)
            det = dv * (vj * vj / 12.0 - dv * dv / 144.0)
            t_edge[row, mask, 0] = (vj * j0 / 12.0 - dv * j2 / 12.0) / det
            t_edge[row, mask, 1] = (vj * j2 - dv * j0 / 12.0) / det
    flux0 = dv * (vc[None, :] * t_edge[:, :, 0] + dv * t_edge[:, :, 1] / 12.0)
    flux2 = dv * (dv * t_edge[:, :, 0] + vc[None, :] * t_edge[:, :, 1]) / 12.0
    # right edge of cell i is edge i+1 (outward +x), left edge is i (outward -x)
    res[:, :, 0] += flux0[1:] - flux0[:-1]
    res[:, :, 1] += 0.5 * (flux0[1:] + flux0[:-1])
    res[:, :, 2] += flux2[1:] - flux2[:-1]

    # v-direction fluxes (upwind by the sign of E per column; zero field
    # columns carry no v-flux, outer-boundary inflow data is zero)
    sb = np.stack([c[:, :, 0] - 0.5 * c[:, :, 2], c[:, :, 1]], axis=-1)  # bottom
    st = np.stack([c[:, :, 0] + 0.5 * c[:, :, 2], c[:, :, 1]], axis=-1)  # top
    s_edge = np.zeros((nx, nv + 1, 2))
    epos = E.values > 0.0
    eneg = E.values < 0.0
    s_edge[epos, 1:] = st[epos]
    s_edge[eneg, :-1] = sb[eneg]
    g0 = dx * E.values[:, None] * s_edge[:, :, 0]
    g1 = dx * E.values[:, None] * s_edge[:, :, 1] / 12.0
    res[:, :, 0] += g0[:, 1:] - g0[:, :-1]
    res[:, :, 1] += g1[:, 1:] - g1[:, :-1]
    res[:, :, 2] += 0.5 * (g0[:, 1:] + g0[:, :-1])

    # scattering source S(P f, .)
    rho = dv * np.stack([c[:, :, 0].sum(axis=1), c[:, :, 1].sum(axis=1)], axis=-1)
    s0, s1 = ctx.scatter_moments(rho)
    res[:, :, 0] -= s0[:, None] * ctx.m0[None, :]
    res[:, :, 1] -= s1[:, None] * ctx.m0[None, :]
    res[:, :, 2] -= s0[:, None] * ctx.m1[None, :]

    # explicit data L
    res -= ctx.expl_mom
    return res
