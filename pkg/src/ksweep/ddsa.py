"""Drift-diffusion synthetic acceleration.

Near the stiff limit the slowly converging error component of the fixed-point
iteration is governed by an implicit drift-diffusion operator in x alone.
After each map evaluation the iterate increment is turned into a source for
that low-order operator and the resulting correction is added to the density
(and, scaled by the Maxwellian peak, to the v = 0 traces).

The operator

    eps * ( c0/dt - d/dx( (theta_dd/omega) d/dx . ) + d/dx( (Ehat/omega) . ) )

is discretized with P1 DG in x using the interface-corrected diffusion flux
beta0 [phi]/dx + <phi'> (symmetrized; the second-derivative correction term
vanishes for linears) and sign-of-field upwinding for the drift, with
homogeneous Dirichlet walls.  ``theta_dd`` rescales the diffusion coefficient
for experiments; the default 1 is the operator that keeps plain Picard
corrections stable at moderate timesteps on the diode (scaling the diffusion
down by the Maxwellian variance makes the corrector over-shoot and diverge
exactly where acceleration is supposed to help).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .mesh import GAUSS4_W, GAUSS4_X, PhaseMesh
from .transport import EffectiveField, maxwellian

BAND = 3  # P1 DG with nearest-neighbor edge coupling


@dataclass
class DriftDiffusionOperator:
    """Banded low-order correction operator with homogeneous Dirichlet walls."""

    mesh: PhaseMesh
    ab: np.ndarray        # (2*BAND + 1, 2 nx) banded storage
    eps: float
    beta0: float

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return solve_banded((BAND, BAND), self.ab, rhs)

    def apply(self, phi: np.ndarray) -> np.ndarray:
        """Banded matvec (tests and diagnostics)."""
        n = phi.size
        out = np.zeros(n)
        for d in range(-BAND, BAND + 1):
            row = np.arange(max(0, -d), min(n, n - d))
            col = row + d
            out[row] += self.ab[BAND - d, col] * phi[col]
        return out


def _scatter(ab: np.ndarray, rows: np.ndarray, cols: np.ndarray,
             vals: np.ndarray):
    np.add.at(ab, (BAND + rows - cols, cols), vals)


def dd_assemble(E: EffectiveField, omega, eps: float, dt: float,
                c0: float, mesh: PhaseMesh, theta_dd: float = 1.0,
                beta0: float = 2.0) -> DriftDiffusionOperator:
    """Assemble the banded drift-diffusion blocks for the current field."""
    nx, dx = mesh.nx, mesh.dx
    xq = mesh.x_centers[:, None] + dx * GAUSS4_X[None, :]
    om = np.broadcast_to(np.asarray(omega(xq), dtype=float), xq.shape)
    if np.any(om <= 0.0):
        raise ValueError("drift-diffusion acceleration requires omega > 0")
    wq = GAUSS4_W * dx
    a_cell = (theta_dd / om) @ wq                       # int A dx per cell
    b0 = (E.values[:, None] / om) @ wq                  # int b dx
    b1 = (E.values[:, None] / om) @ (wq * GAUSS4_X)     # int b xh dx

    ab = np.zeros((2 * BAND + 1, 2 * nx))
    idx0 = 2 * np.arange(nx)

    # cell blocks: mass + diffusion volume + drift volume
    _scatter(ab, idx0, idx0, np.full(nx, eps * c0 / dt * dx))
    _scatter(ab, idx0 + 1, idx0 + 1,
             eps * (c0 / dt * dx / 12.0 + a_cell / dx ** 2))
    _scatter(ab, idx0 + 1, idx0, -eps * b0 / dx)
    _scatter(ab, idx0 + 1, idx0 + 1, -eps * b1 / dx)

    # edge blocks; interior edge k couples cells k-1 (L) and k (R)
    x_edges = mesh.x_nodes
    om_e = np.asarray(omega(x_edges), dtype=float)
    a_e = theta_dd / om_e
    e_pad = np.concatenate([[E.values[0]], 0.5 * (E.values[1:] + E.values[:-1]),
                            [E.values[-1]]])
    b_e = e_pad / om_e

    for k in range(nx + 1):
        dofs, jv, gv = _edge_vectors(k, nx, dx)
        ae, be = a_e[k], b_e[k]
        # symmetric interface-corrected diffusion + penalty
        block = eps * ae * (np.outer(gv, jv) + np.outer(jv, gv)
                            + (beta0 / dx) * np.outer(jv, jv))
        # upwinded drift: -b_e * phat(phi) * J(g)
        if be != 0.0:
            ph = _upwind_vector(k, nx, be)
            if ph is not None:
                block -= eps * be * np.outer(jv, ph)
        rows = np.repeat(dofs, dofs.size)
        cols = np.tile(dofs, dofs.size)
        _scatter(ab, rows, cols, block.ravel())

    return DriftDiffusionOperator(mesh, ab, eps, beta0)


def _edge_vectors(k: int, nx: int, dx: float):
    """Local dofs plus jump/average-gradient coefficient vectors at edge k."""
    if k == 0:
        dofs = np.array([0, 1])
        jv = np.array([1.0, -0.5])          # J = phi_int - ghost(0)
        gv = np.array([0.0, 1.0 / dx])      # one-sided gradient
    elif k == nx:
        dofs = np.array([2 * nx - 2, 2 * nx - 1])
        jv = np.array([-1.0, -0.5])         # J = ghost(0) - phi_int
        gv = np.array([0.0, 1.0 / dx])
    else:
        dofs = np.array([2 * k - 2, 2 * k - 1, 2 * k, 2 * k + 1])
        jv = np.array([-1.0, -0.5, 1.0, -0.5])
        gv = np.array([0.0, 0.5 / dx, 0.0, 0.5 / dx])
    return dofs, jv, gv


def _upwind_vector(k: int, nx: int, be: float):
    """Trace coefficients of the upwind side at edge k; None if it is data."""
    if k == 0:
        if be > 0.0:
            return None  # inflow, Dirichlet data 0
        return np.array([1.0, -0.5])
    if k == nx:
        if be < 0.0:
            return None
        return np.array([1.0, 0.5])  # interior left trace L0 + L1/2
    if be > 0.0:
        return np.array([1.0, 0.5, 0.0, 0.0])
    return np.array([0.0, 0.0, 1.0, -0.5])


def dd_rhs(E: EffectiveField, ctx, d_trace: np.ndarray,
           d_rho: np.ndarray) -> np.ndarray:
    """Weak right-hand side |E| (f~* - f~) + (omega/eps) (rho* - rho)."""
    mesh = ctx.mesh
    dx = mesh.dx
    absE = np.abs(E.values)
    rhs = np.zeros(2 * mesh.nx)
    rhs[0::2] = absE * dx * d_trace[:, 0]
    rhs[1::2] = absE * dx * d_trace[:, 1] / 12.0
    s0 = d_rho[:, 0] * ctx.w00 + d_rho[:, 1] * ctx.w01
    s1 = d_rho[:, 0] * ctx.w01 + d_rho[:, 1] * ctx.w11
    rhs[0::2] += s0
    rhs[1::2] += s1
    return rhs


def ddsa_correct(fp, y_prev_flat: np.ndarray, y_star_flat: np.ndarray,
                 theta_dd: float = 1.0, beta0: float = 2.0) -> np.ndarray:
    """Correct an NLS iterate pair (state-in, state-out) in place of y_star.

    Solves the low-order operator at the same field used for the sweep
    (the one induced by y_prev's density) and adds phi0 to the density and
    M(0) phi0, under the same sign masks, to the traces.
    """
    from .solver import SolverState  # local import avoids a cycle

    mesh = fp.mesh
    y_prev = SolverState.from_flat(mesh, y_prev_flat, fp.periodic)
    y_star = SolverState.from_flat(mesh, y_star_flat, fp.periodic)
    E = fp.electric(y_prev.rho)
    op = dd_assemble(E, fp.ctx.omega, fp.ctx.eps, fp.ctx.dt,
                     fp.ctx.time_coeff, mesh, theta_dd, beta0)
    # the source sees the masked upwind trace (one side per cell, by field sign)
    neg = (E.values < 0.0)[:, None]
    pos = (E.values > 0.0)[:, None]

    def masked_sum(y):
        return np.where(neg, y.f1, 0.0) + np.where(pos, y.f2, 0.0)

    d_trace = masked_sum(y_star) - masked_sum(y_prev)
    d_rho = y_star.rho - y_prev.rho
    phi0 = op.solve(dd_rhs(E, fp.ctx, d_trace, d_rho)).reshape(mesh.nx, 2)
    if not np.all(np.isfinite(phi0)):
        from .solver import NonFiniteIterate
        raise NonFiniteIterate("drift-diffusion correction diverged")

    m0 = maxwellian(0.0, fp.ctx.theta)
    rho = y_star.rho + phi0
    f1 = np.where(neg, y_star.f1 + m0 * phi0, y_star.f1)
    f2 = np.where(pos, y_star.f2 + m0 * phi0, y_star.f2)
    return SolverState(mesh, rho, f1, f2, y_star.pin1, y_star.pin2).flatten()


def ddsa_correct_density(fp, rho_prev_flat: np.ndarray,
                         rho_star_flat: np.ndarray,
                         theta_dd: float = 1.0,
                         beta0: float = 2.0) -> np.ndarray:
    """Density-only correction for the nested solver's outer iterate."""
    mesh = fp.mesh
    rho_prev = rho_prev_flat.reshape(mesh.nx, 2)
    rho_star = rho_star_flat.reshape(mesh.nx, 2)
    E = fp.electric(rho_prev)
    op = dd_assemble(E, fp.ctx.omega, fp.ctx.eps, fp.ctx.dt,
                     fp.ctx.time_coeff, mesh, theta_dd, beta0)
    rhs = dd_rhs(E, fp.ctx, np.zeros((mesh.nx, 2)), rho_star - rho_prev)
    phi0 = op.solve(rhs).reshape(mesh.nx, 2)
    if not np.all(np.isfinite(phi0)):
        from .solver import NonFiniteIterate
        raise NonFiniteIterate("drift-diffusion correction diverged")
    return (rho_star + phi0).ravel()
