"""Numba kernels for the cell-by-cell transport sweep.

A sweep inverts the advection-plus-reaction operator on one velocity-sign
subdomain by visiting cells so that every upwind neighbor is solved first,
then solving the local 3x3 variational system.  The x-direction always flows
away from the inflow wall (sign of v is fixed on a subdomain); the v-direction
follows the sign of the cell-constant field value in each spatial column.

No global matrix is ever formed here; the per-cell blocks below are the
closed-form Gauss integrals of the upwind DG bilinear form on the scaled
monomial basis {1, xh, vh}, xh, vh in [-1/2, 1/2].
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True, fastmath=False)
def solve3(a, b):
    """Cramer solve of a 3x3 system (in-place result returned as tuple)."""
    a00, a01, a02 = a[0, 0], a[0, 1], a[0, 2]
    a10, a11, a12 = a[1, 0], a[1, 1], a[1, 2]
    a20, a21, a22 = a[2, 0], a[2, 1], a[2, 2]
    m00 = a11 * a22 - a12 * a21
    m01 = a12 * a20 - a10 * a22
    m02 = a10 * a21 - a11 * a20
    det = a00 * m00 + a01 * m01 + a02 * m02
    inv = 1.0 / det
    c0 = (b[0] * m00 + b[1] * (a02 * a21 - a01 * a22)
          + b[2] * (a01 * a12 - a02 * a11)) * inv
    c1 = (b[0] * m01 + b[1] * (a00 * a22 - a02 * a20)
          + b[2] * (a02 * a10 - a00 * a12)) * inv
    c2 = (b[0] * m02 + b[1] * (a01 * a20 - a00 * a21)
          + b[2] * (a00 * a11 - a01 * a10)) * inv
    return c0, c1, c2


@njit(cache=True, nogil=True, fastmath=False)
def sweep_half(sx, nx, nvh, dx, dv, vc, eh, l00, l01, l11,
               rhs_base, rcouple, xin_flux, out, xout_trace):
    """Sweep one subdomain; fills ``out`` (nx, nvh, 3) and ``xout_trace``.

    sx        +1 for the v > 0 subdomain, -1 for v < 0.
    vc        (nvh,) cell-center velocities of this half, ascending.
    eh        (nx,) cell-constant effective field.
    l00..l11  (nx,) reaction x-moments of (c0*eps/dt + omega/eps).
    rhs_base  (nx, nvh, 3) source moments (explicit data + scattering).
    rcouple   (nx, 2) P1 trace feeding this subdomain across v = 0.
    xin_flux  (nvh, 2) inflow flux moments (J0, J2) at the upstream wall.
    """
    xflux = xin_flux.copy()

    i0, i1, istep = (0, nx, 1) if sx > 0 else (nx - 1, -1, -1)
    amat = np.empty((3, 3))
    bvec = np.empty(3)

    for i in range(i0, i1, istep):
        e = eh[i]
        abse = abs(e)
        sv = 0.0
        if e > 0.0:
            sv = 1.0
        elif e < 0.0:
            sv = -1.0

        # v visitation order: from the v-inflow side of the column.
        # For sv=0 every order works; keep ascending.
        if sv > 0.0 or sv == 0.0:
            j0, j1, jstep = 0, nvh, 1
        else:
            j0, j1, jstep = nvh - 1, -1, -1

        # Inflow for the first cell of the column: the v=0 coupling trace if
        # the flow enters through v = 0, otherwise zero (outer v boundary).
        enters_at_zero = (sx > 0 and sv > 0) or (sx < 0 and sv < 0)
        if enters_at_zero:
            s0 = rcouple[i, 0]
            s1 = rcouple[i, 1]
        else:
            s0 = 0.0
            s1 = 0.0

        la, lb, lc = l00[i], l01[i], l11[i]
        for j in range(j0, j1, jstep):
            vj = vc[j]
            av = sx * vj  # |v| at the cell center, positive on the subdomain

            # --- local matrix: reaction + volume advection + outflow edges
            amat[0, 0] = dv * la + dv * av
            amat[0, 1] = dv * lb + 0.5 * dv * vj
            amat[0, 2] = sx * dv * dv / 12.0
            amat[1, 0] = dv * lb - dv * vj + 0.5 * dv * vj
            amat[1, 1] = dv * lc + 0.25 * sx * dv * vj
            amat[1, 2] = -dv * dv / 12.0 + dv * dv / 24.0
            amat[2, 0] = sx * dv * dv / 12.0 - dx * e
            amat[2, 1] = dv * dv / 24.0
            amat[2, 2] = dv * la / 12.0 + sx * dv * vj / 12.0
            if sv != 0.0:
                amat[0, 0] += abse * dx
                amat[0, 2] += 0.5 * sv * abse * dx
                amat[1, 1] += abse * dx / 12.0
                amat[2, 0] += 0.5 * sv * abse * dx
                amat[2, 2] += 0.25 * abse * dx

            # --- right-hand side: sources + upwind inflow data
            j0f = xflux[j, 0]
            j2f = xflux[j, 1]
            bvec[0] = rhs_base[i, j, 0] + j0f
            bvec[1] = rhs_base[i, j, 1] - 0.5 * sx * j0f
            bvec[2] = rhs_base[i, j, 2] + j2f
            if sv != 0.0:
                bvec[0] += abse * dx * s0
                bvec[1] += abse * dx * s1 / 12.0
                bvec[2] -= 0.5 * sv * abse * dx * s0

            c0, c1, c2 = solve3(amat, bvec)
            out[i, j, 0] = c0
            out[i, j, 1] = c1
            out[i, j, 2] = c2

            # downstream x-trace of this cell -> flux moments for next column
            t0 = c0 + 0.5 * sx * c1
            t2 = c2
            xflux[j, 0] = sx * dv * (vj * t0 + dv * t2 / 12.0)
            xflux[j, 1] = sx * dv * (dv * t0 + vj * t2) / 12.0
            xout_trace[j, 0] = t0
            xout_trace[j, 1] = t2

            # downstream v-trace carried to the next cell in the column
            if sv != 0.0:
                s0 = c0 + 0.5 * sv * c2
                s1 = c1
