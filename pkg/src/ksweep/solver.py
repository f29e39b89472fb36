"""Fixed-point drivers for the coupled density/trace system.

The implicit step is recast as a fixed point of the couple (rho, f-tilde): a
single sweep pair maps the couple to its update, which is cheap enough to
wrap in plain Picard iteration or windowed Anderson extrapolation.  The
nested variant freezes the field per outer density iterate and resolves the
trace coupling with an inner matrix-free Krylov solve.

Residuals are relative fixed-point residuals ||G(y) - y||_2 / ||y||_2 on the
flat coefficient vector; with Picard this coincides with the iterate
difference, and it is exactly the quantity Anderson minimizes over.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .field import electric_field, moment_P, poisson_solve, trace_T, v0_traces
from .mesh import PhaseField, PhaseMesh, SpatialField
from .transport import (BoundaryTrace, EffectiveField, SweepContext, apply_N,
                        maxwellian)

METHODS = ("nls-pic", "nls-aa", "nest-pic", "nest-aa")

_FLOOR = 1e-300  # guards relative norms against an identically zero state


@dataclass
class SolverConfig:
    method: str = "nls-aa"
    ddsa: bool = False
    outer_tol: float = 1e-8
    inner_tol: float = 1e-10
    aa_window: int = 15
    aa_beta: float = 1.0
    max_sweeps_per_step: int = 50_000
    fc_bounds: tuple[float, float] | None = (5e4, 2e5)
    inner_method: str = "krylov"  # or "picard", study use only

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.outer_tol <= 0 or self.inner_tol <= 0:
            raise ValueError("tolerances must be positive")
        if not 0.0 < self.aa_beta <= 1.0:
            raise ValueError("relaxation must lie in (0, 1]")
        if self.aa_window < 1:
            raise ValueError("window must be at least 1")


@dataclass
class SolverState:
    """The fixed-point unknown (rho, f-tilde) plus optional periodic block.

    Flat layout: rho (2 nx), f1 (2 nx), f2 (2 nx), then for periodic runs the
    two inflow trace blocks (2 nv_pos and 2 nv_neg entries).

    The trace blocks store the *unmasked* one-sided values on v = 0; the
    field-sign indicators of the coupling operators are applied inside the
    sweep, where they belong.  Masked storage makes the state a discontinuous
    function of the iterate whenever the field changes sign somewhere (the
    upwind value jumps between the two one-sided limits), which wrecks the
    least-squares extrapolation during violent transients even though the
    downstream effect |E| * indicator * trace is continuous.  Entries whose
    gate is closed are algorithmically inert, so any fixed point here
    projects onto the masked trace of the converged solution.
    """

    mesh: PhaseMesh
    rho: np.ndarray                 # (nx, 2)
    f1: np.ndarray                  # (nx, 2)
    f2: np.ndarray                  # (nx, 2)
    pin1: np.ndarray | None = None  # (nv_pos, 2) inflow for v > 0 at x_lo
    pin2: np.ndarray | None = None  # (nv_neg, 2) inflow for v < 0 at x_hi

    def flatten(self) -> np.ndarray:
        parts = [self.rho.ravel(), self.f1.ravel(), self.f2.ravel()]
        if self.pin1 is not None:
            parts += [self.pin1.ravel(), self.pin2.ravel()]
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, mesh: PhaseMesh, vec: np.ndarray,
                  periodic: bool) -> "SolverState":
        nx = mesh.nx
        rho = vec[:2 * nx].reshape(nx, 2)
        f1 = vec[2 * nx:4 * nx].reshape(nx, 2)
        f2 = vec[4 * nx:6 * nx].reshape(nx, 2)
        pin1 = pin2 = None
        if periodic:
            npos, nneg = mesh.nv_pos, mesh.nv_neg
            pin1 = vec[6 * nx:6 * nx + 2 * npos].reshape(npos, 2)
            pin2 = vec[6 * nx + 2 * npos:].reshape(nneg, 2)
        return cls(mesh, rho, f1, f2, pin1, pin2)


@dataclass
class StepOutcome:
    status: str
    iterations: int
    sweeps: int
    residual: float
    wall_time: float = 0.0
    residual_history: np.ndarray = dc_field(default_factory=lambda: np.zeros(0))
    solution_norm_sq: float | None = None

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def format_residual(r: float) -> str:
    """Two-significant-digit scientific form without exponent zero padding,
    e.g. 8.4E-1 or 1.5E+0."""
    s = f"{r:.1E}"
    mant, expo = s.split("E")
    e = int(expo)
    return f"{mant}E{'+' if e >= 0 else '-'}{abs(e)}"


def classify(history, budget_hit: bool, norm_sq: float | None = None,
             fc_bounds: tuple[float, float] | None = None) -> str:
    """Apply the non-convergence taxonomy to a finished iteration history."""
    hist = np.asarray(history, dtype=float)
    if hist.size:
        if not np.all(np.isfinite(hist)):
            return "INF"
        if hist[-1] > 1e10 * max(hist[0], _FLOOR):
            return "INF"
    if budget_hit:
        return f"R({format_residual(hist[-1])})" if hist.size else "R(NA)"
    if norm_sq is not None and fc_bounds is not None:
        lo, hi = fc_bounds
        if not lo < norm_sq < hi:
            return "FC"
    return "converged"


class FixedPointProblem:
    """Wires Poisson, sweeps, moments and traces into the solver maps.

    One instance serves one implicit step: it owns the sweep context (and so
    the sweep counter) and the Poisson data for the step's field solves.
    """

    def __init__(self, ctx: SweepContext, doping: SpatialField,
                 bc: tuple[float, float] | None, load_scale: float = 1.0,
                 zeta: float = 1.0, field_scale: float = 1.0):
        self.ctx = ctx
        self.mesh = ctx.mesh
        self.doping = doping
        self.bc = bc
        self.load_scale = load_scale
        self.zeta = zeta
        self.field_scale = field_scale
        self.periodic = ctx.mesh.x_periodic
        if self.periodic and bc is not None:
            raise ValueError("periodic mesh cannot carry Dirichlet potential data")
        self._last_field: PhaseField | None = None

    @property
    def sweeps(self) -> int:
        return self.ctx.sweep_count

    def electric(self, rho: np.ndarray) -> EffectiveField:
        pot = poisson_solve(SpatialField(self.mesh, rho), self.doping, self.bc,
                            self.load_scale, self.zeta,
                            compat_tol=None if self.periodic else 1e-10)
        return electric_field(pot, self.field_scale)

    # --- NLS ------------------------------------------------------------
    def nls_map(self, y: SolverState) -> SolverState:
        """One sweep pair: (rho, f~) -> (P N, T_E N) at E = F(rho)."""
        E = self.electric(y.rho)
        trace = BoundaryTrace(self.mesh, y.f1, y.f2)
        per = (y.pin1, y.pin2) if self.periodic else None
        res = apply_N(E, self.ctx, SpatialField(self.mesh, y.rho), trace, per)
        self._last_field = res.f
        rho = moment_P(res.f).coeffs
        t1, t2 = v0_traces(res.f)
        pin1 = res.out1 if self.periodic else None
        pin2 = res.out2 if self.periodic else None
        return SolverState(self.mesh, rho, t1, t2, pin1, pin2)

    def nls_map_flat(self, vec: np.ndarray) -> np.ndarray:
        y = SolverState.from_flat(self.mesh, vec, self.periodic)
        return self.nls_map(y).flatten()

    def reconstruct(self, y: SolverState) -> PhaseField:
        """Final sweep at the converged couple; costs one counted sweep."""
        E = self.electric(y.rho)
        trace = BoundaryTrace(self.mesh, y.f1, y.f2)
        per = (y.pin1, y.pin2) if self.periodic else None
        return apply_N(E, self.ctx, SpatialField(self.mesh, y.rho), trace, per).f

    # --- NEST -----------------------------------------------------------
    def nest_inner_solve(self, E: EffectiveField, sigma: SpatialField,
                         z0: np.ndarray, tol: float, budget: int,
                         method: str = "krylov") -> np.ndarray:
        """Solve f~ = T_E N(rho, f~) at frozen E to relative tolerance tol.

        The affine map is split as H(z) = K z + b with b = H(0) (one sweep)
        and each K application another sweep; the linear system (I - K) z = b
        is then solved matrix-free.
        """
        nx = self.mesh.nx

        def H(zvec):
            tr = BoundaryTrace(self.mesh, zvec[:2 * nx].reshape(nx, 2),
                               zvec[2 * nx:].reshape(nx, 2))
            res = apply_N(E, self.ctx, sigma, tr)
            self._last_field = res.f
            out = trace_T(res.f, E)
            return np.concatenate([out.f1.ravel(), out.f2.ravel()])

        b = H(np.zeros(4 * nx))
        if not np.all(np.isfinite(b)):
            raise NonFiniteIterate("inner affine data is not finite")
        if np.linalg.norm(b) == 0.0:
            return b  # no coupling anywhere (e.g. zero field): f~ = 0 exactly

        def apply_ImK(zvec):
            return zvec - (H(zvec) - b)

        if method == "picard":
            z = z0.copy()
            for _ in range(budget):
                z_new = H(z)
                if np.linalg.norm(z_new - z) <= tol * max(np.linalg.norm(z), _FLOOR):
                    return z_new
                z = z_new
            raise InnerBudgetExhausted(np.linalg.norm(H(z) - z) / max(np.linalg.norm(z), _FLOOR))
        z, ok = gmres(apply_ImK, b, x0=z0, tol=tol, maxiter=budget)
        if not ok:
            raise InnerBudgetExhausted(float(np.linalg.norm(apply_ImK(z) - b) / np.linalg.norm(b)))
        return z

    def nest_outer_map(self, rho_vec: np.ndarray, cfg: SolverConfig) -> np.ndarray:
        """Freeze E = F(rho), converge the trace, final sweep, return P."""
        nx = self.mesh.nx
        rho = rho_vec.reshape(nx, 2)
        E = self.electric(rho)
        sigma = SpatialField(self.mesh, rho)
        budget = max(cfg.max_sweeps_per_step - self.sweeps, 1)
        z = self.nest_inner_solve(E, sigma, self._warm_trace, cfg.inner_tol,
                                  budget, cfg.inner_method)
        self._warm_trace = z
        tr = BoundaryTrace(self.mesh, z[:2 * nx].reshape(nx, 2),
                           z[2 * nx:].reshape(nx, 2))
        res = apply_N(E, self.ctx, sigma, tr)
        self._last_field = res.f
        self._warm_state = SolverState(self.mesh, rho, tr.f1, tr.f2)
        return moment_P(res.f).coeffs.ravel()

    def start_nest(self, y0: SolverState):
        if self.periodic:
            raise NotImplementedError("nested solver supports Dirichlet problems only")
        self._warm_trace = np.concatenate([y0.f1.ravel(), y0.f2.ravel()])
        self._warm_state = y0


class NonFiniteIterate(FloatingPointError):
    """Raised when a fixed-point evaluation produces non-finite data."""


class InnerBudgetExhausted(RuntimeError):
    def __init__(self, residual: float):
        super().__init__(f"inner solve stalled at relative residual {residual:.3e}")
        self.residual = residual


def gmres(apply_A, b: np.ndarray, x0: np.ndarray | None = None,
          tol: float = 1e-10, maxiter: int = 1000) -> tuple[np.ndarray, bool]:
    """Plain full-memory GMRES with Givens rotations; no restart.

    Returns (x, converged) with convergence meaning ||b - A x|| <= tol ||b||.
    Deterministic: no randomization, fixed reduction order.
    """
    n = b.size
    x0 = np.zeros(n) if x0 is None else x0
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), True
    r0 = b - apply_A(x0)
    beta = np.linalg.norm(r0)
    if beta <= tol * bnorm:
        return x0, True
    maxiter = min(maxiter, n)
    V = np.zeros((maxiter + 1, n))
    H = np.zeros((maxiter + 1, maxiter))
    cs = np.zeros(maxiter)
    sn = np.zeros(maxiter)
    g = np.zeros(maxiter + 1)
    g[0] = beta
    V[0] = r0 / beta
    k_used = 0
    for k in range(maxiter):
        w = apply_A(V[k])
        for i in range(k + 1):
            H[i, k] = w @ V[i]
            w -= H[i, k] * V[i]
        H[k + 1, k] = np.linalg.norm(w)
        if H[k + 1, k] > 0.0:
            V[k + 1] = w / H[k + 1, k]
        for i in range(k):
            t = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
            H[i + 1, k] = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
            H[i, k] = t
        denom = np.hypot(H[k, k], H[k + 1, k])
        cs[k] = H[k, k] / denom if denom else 1.0
        sn[k] = H[k + 1, k] / denom if denom else 0.0
        H[k, k] = denom
        H[k + 1, k] = 0.0
        g[k + 1] = -sn[k] * g[k]
        g[k] = cs[k] * g[k]
        k_used = k + 1
        if abs(g[k + 1]) <= tol * bnorm or H[k, k] == 0.0:
            break
    y = np.linalg.solve(np.triu(H[:k_used, :k_used]), g[:k_used])
    x = x0 + V[:k_used].T @ y
    return x, abs(g[k_used]) <= tol * bnorm


def picard_drive(G, y0: np.ndarray, cfg: SolverConfig,
                 tol: float | None = None,
                 sweep_count=None) -> tuple[np.ndarray, StepOutcome]:
    """Plain fixed-point iteration y <- G(y) with the failure taxonomy."""
    return _drive(G, y0, cfg, accelerate=False, tol=tol, sweep_count=sweep_count)


def anderson_drive(G, y0: np.ndarray, cfg: SolverConfig,
                   tol: float | None = None,
                   sweep_count=None) -> tuple[np.ndarray, StepOutcome]:
    """Windowed Anderson acceleration of the fixed-point iteration.

    Implements the standard constrained least-squares extrapolation: with the
    last m+1 residuals r^i = G(y^i) - y^i, minimize ||sum a_i r^i|| subject to
    sum a_i = 1 via the difference reformulation and a QR factorization, then
    update with relaxation beta.  Ill-conditioned difference columns (R-diag
    ratio beyond 1e12) drop oldest-first.
    """
    return _drive(G, y0, cfg, accelerate=True, tol=tol, sweep_count=sweep_count)


def _drive(G, y0, cfg, accelerate, tol, sweep_count):
    tol = cfg.outer_tol if tol is None else tol
    sweeps0 = sweep_count() if sweep_count is not None else 0

    def used():
        return (sweep_count() - sweeps0) if sweep_count is not None else len(history)

    history: list[float] = []
    ys: list[np.ndarray] = []
    gs: list[np.ndarray] = []
    y = np.asarray(y0, dtype=float).copy()

    while True:
        try:
            g = G(y)
        except (NonFiniteIterate, FloatingPointError, np.linalg.LinAlgError):
            # diverged iterates surface as non-finite data or singular
            # subsidiary solves; classify, never crash
            history.append(np.inf)
            return y, _outcome("INF", history, used())
        except InnerBudgetExhausted as exc:
            history.append(exc.residual)
            return y, _outcome(f"R({format_residual(history[-1])})", history, used())
        r = g - y
        ny = np.linalg.norm(y)
        denom = ny if ny > 0.0 else max(np.linalg.norm(g), 1.0)
        res = float(np.linalg.norm(r) / denom)
        history.append(res)
        if not np.isfinite(res) or res > 1e10 * max(history[0], _FLOOR):
            return y, _outcome("INF", history, used())
        if res <= tol:
            return g, _outcome("converged", history, used())
        if used() >= cfg.max_sweeps_per_step:
            return g, _outcome(f"R({format_residual(res)})", history, used())

        if not accelerate:
            y = g
            continue

        ys.append(y)
        gs.append(g)
        if len(ys) > cfg.aa_window + 1:
            ys.pop(0)
            gs.pop(0)
        m_k = len(ys) - 1
        if m_k == 0:
            y = y + cfg.aa_beta * r
            continue
        Y = np.stack(ys, axis=1)
        Gm = np.stack(gs, axis=1)
        R = Gm - Y
        dR = np.diff(R, axis=1)
        dY = np.diff(Y, axis=1)
        dG = np.diff(Gm, axis=1)
        lo = 0
        while True:
            Q, Rq = np.linalg.qr(dR[:, lo:])
            d = np.abs(np.diag(Rq))
            if d.size <= 1 or d.min() == 0.0 or d.max() / max(d.min(), _FLOOR) <= 1e12:
                break
            lo += 1
        gamma = np.linalg.lstsq(Rq, Q.T @ r, rcond=None)[0]
        y_lin = y - dY[:, lo:] @ gamma
        g_lin = g - dG[:, lo:] @ gamma
        y = (1.0 - cfg.aa_beta) * y_lin + cfg.aa_beta * g_lin


def _outcome(status, history, sweeps):
    hist = np.array(history)
    return StepOutcome(status=status, iterations=len(hist), sweeps=int(sweeps),
                       residual=float(hist[-1]) if hist.size else 0.0,
                       residual_history=hist)


# --- analytic contraction constants and diagnostic norms -----------------

@dataclass(frozen=True)
class KappaEstimates:
    nls1: float
    nls2: float | None
    nest: float


def kappa_nest(eps: float, dt: float, omega_max: float) -> float:
    """Closed-form outer contraction estimate sqrt(w / (2 eps^2/dt + w))."""
    return float(np.sqrt(omega_max / (2.0 * eps ** 2 / dt + omega_max)))


def kappa_estimates(eps: float, dt: float, omega_max: float, e_inf: float,
                    dv: float, c_inv: float,
                    omega_min: float | None = None) -> KappaEstimates:
    """The three analytic contraction constants.

    ``c_inv`` is the trace-inequality constant returned by
    :func:`inverse_inequality_constant`; the sharper second estimate exists
    only when eta = 2 eps^2/dt + omega - 2 eps^(5/2) stays positive.
    """
    k1 = np.sqrt(max(omega_max / (eps ** 2 / dt + omega_max),
                     e_inf / (c_inv * dv * eps / dt + e_inf) if e_inf > 0 else 0.0))
    omega_min = omega_max if omega_min is None else omega_min
    eta_min = 2.0 * eps ** 2 / dt + omega_min - 2.0 * eps ** 2.5
    k2 = None
    if eta_min > 0.0:
        k2 = float(np.sqrt(max(
            omega_max / (2.0 * eps ** 2 / dt + omega_max - 2.0 * eps ** 2.5),
            e_inf / (c_inv * dv * eps ** 1.5 + e_inf) if e_inf > 0 else 0.0)))
    return KappaEstimates(float(k1), k2, kappa_nest(eps, dt, omega_max))


def inverse_inequality_constant(mesh: PhaseMesh) -> float:
    """Largest C with C dv ||T u||^2 <= ||u||^2 for local P1 functions.

    Computed numerically as the inverse of the top eigenvalue of the trace
    Gram matrix against the cell mass matrix (independent of dx, dv with the
    scaled basis; the literal value is 1/4).
    """
    from scipy.linalg import eigh
    mass = np.diag([1.0, 1.0 / 12.0, 1.0 / 12.0])
    # trace at the bottom edge of a cell: u(xh, -1/2) = c0 - c2/2 + c1 xh
    tr = np.array([[1.0, 0.0, -0.5], [0.0, 1.0 / 12.0, 0.0], [-0.5, 0.0, 0.25]])
    top = eigh(tr, mass, eigvals_only=True)[-1]
    return float(1.0 / top)


def weighted_state_norms(state: SolverState, E: EffectiveField, omega,
                         phi_nodes: np.ndarray, theta: float, eps: float,
                         dt: float, c_inv: float) -> dict[str, float]:
    """Diagnostic NLS/NEST norms of a (sigma, r) couple, by quadrature."""
    from .mesh import GAUSS4_W, GAUSS4_X
    mesh = state.mesh
    dx, dv = mesh.dx, mesh.dv
    m0 = maxwellian(0.0, theta)
    xq = mesh.x_centers[:, None] + dx * GAUSS4_X[None, :]
    om = np.broadcast_to(np.asarray(omega(xq), dtype=float), xq.shape)
    phi_cell = (phi_nodes[:-1, None] * (0.5 - GAUSS4_X)[None, :]
                + phi_nodes[1:, None] * (0.5 + GAUSS4_X)[None, :])
    wgt = np.exp(-phi_cell / theta)
    sig = state.rho[:, 0:1] + state.rho[:, 1:2] * GAUSS4_X[None, :]
    rr = (state.f1[:, 0:1] + state.f1[:, 1:2] * GAUSS4_X[None, :]
          + state.f2[:, 0:1] + state.f2[:, 1:2] * GAUSS4_X[None, :])
    absE = np.abs(E.values)[:, None]
    wq = (GAUSS4_W * dx)[None, :]

    def integrate(fvals):
        return float(np.sum(fvals * wgt * wq))

    nls1 = 0.5 * integrate((eps ** 2 / dt + om) * sig ** 2
                           + eps * (c_inv * eps * dv / dt + absE) * rr ** 2 / m0)
    eta = 2.0 * eps ** 2 / dt + om - 2.0 * eps ** 2.5
    nls2 = None
    if np.all(eta > 0.0):
        nls2 = 0.5 * integrate(eta * sig ** 2
                               + eps * (2.0 * c_inv * eps ** 1.5 * dv + absE) * rr ** 2 / m0)
    nest = 0.5 * float(np.sum((2.0 * eps ** 2 / dt + om) * sig ** 2 * wq))
    out = {"nls1": np.sqrt(nls1), "nest": np.sqrt(nest)}
    if nls2 is not None:
        out["nls2"] = np.sqrt(nls2)
    return out


# --- step-level orchestration --------------------------------------------

def solve_step(fp: FixedPointProblem, y0: SolverState, cfg: SolverConfig,
               tol: float | None = None,
               dd_corrector=None) -> tuple[SolverState, StepOutcome]:
    """Run the configured method on one implicit step's fixed point."""
    flat0 = y0.flatten()
    periodic = fp.periodic

    if cfg.method.startswith("nls"):
        base = fp.nls_map_flat
        if dd_corrector is not None:
            def G(vec):
                return dd_corrector(fp, vec, base(vec))
        else:
            G = base
        drive = anderson_drive if cfg.method.endswith("aa") else picard_drive
        vec, outcome = drive(G, flat0, cfg, tol=tol, sweep_count=lambda: fp.sweeps)
        return SolverState.from_flat(fp.mesh, vec, periodic), outcome

    # nested: outer iteration on rho alone
    fp.start_nest(y0)
    base = lambda rho_vec: fp.nest_outer_map(rho_vec, cfg)
    if dd_corrector is not None:
        def G(rho_vec):
            return dd_corrector(fp, rho_vec, base(rho_vec))
    else:
        G = base
    drive = anderson_drive if cfg.method.endswith("aa") else picard_drive
    rho_vec, outcome = drive(G, y0.rho.ravel().copy(), cfg, tol=tol,
                             sweep_count=lambda: fp.sweeps)
    warm = fp._warm_state
    y = SolverState(fp.mesh, rho_vec.reshape(fp.mesh.nx, 2), warm.f1, warm.f2)
    return y, outcome
