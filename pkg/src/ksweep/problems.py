"""Problem registry: the nondimensional diode family and the manufactured test.

The diode lives on [0, 0.6] x [-2, 2] with unit potential drop, Maxwellian
inflow weighted by the doping at the contacts, and the doping/collision
profiles switching between plateaus through cubic smoothstep transitions.
The manufactured configuration is periodic in x with an analytic solution
pair (f, E) and the matching volumetric source.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .transport import maxwellian

# nondimensional constants of the diode scaling
ALPHA = 0.129
BETA = 0.803
GAMMA = 1.0
ZETA = 1.0
TRANSITION_WIDTH = 0.05  # smoothstep width for the doping/omega plateaus

DIODE_VARIANTS = {"single": None, "silicon": 0.277, "multiscale": 0.01}


def smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def _plateau(x, value_outside, value_inside, lo=0.1, hi=0.5,
             w=TRANSITION_WIDTH):
    """C1 profile: value_outside beyond [lo, hi], value_inside within."""
    x = np.asarray(x, dtype=float)
    down = smoothstep((x - (lo - 0.5 * w)) / w)
    up = smoothstep((x - (hi - 0.5 * w)) / w)
    return value_outside + (value_inside - value_outside) * (down - up)


def doping_profile(x, w: float = TRANSITION_WIDTH):
    """Contact doping 500 dropping to 2 across the channel [0.1, 0.5]."""
    return _plateau(x, 500.0, 2.0, w=w)


def omega_profile(x, omega_min: float | None, w: float = TRANSITION_WIDTH):
    """Collision frequency: 1 at the contacts, omega_min in the channel."""
    if omega_min is None:
        return np.ones_like(np.asarray(x, dtype=float))
    return _plateau(x, 1.0, omega_min, w=w)


@dataclass
class ProblemConfig:
    name: str
    x_lo: float
    x_hi: float
    v_lo: float
    v_hi: float
    eps: float
    theta: float
    omega: Callable
    doping: Callable
    f0: Callable
    t_final: float
    bc: tuple[float, float] | None = None
    periodic: bool = False
    field_scale: float = 1.0          # multiplies E in the advection term
    load_scale: float = 1.0           # multiplies the Poisson right-hand side
    zeta: float = 1.0
    f_minus: Callable | None = None   # inflow data at the x walls
    q: Callable | None = None         # volumetric source (x, v, t)
    fc_bounds: tuple[float, float] | None = None
    solver_tol: float | None = None   # overrides the configured tolerance
    exact_f: Callable | None = None
    exact_e: Callable | None = None
    omega_min: float | None = None
    transition_width: float = TRANSITION_WIDTH
    default_nx: int = 200
    default_nv: int = 200

    def __post_init__(self):
        if self.eps <= 0.0:
            raise ValueError("eps must be positive")
        if self.periodic and self.bc is not None:
            raise ValueError("periodic problems carry no Dirichlet data")


def diode(eps: float, variant: str = "single") -> ProblemConfig:
    """The scaled diode with one of the three collision-frequency profiles."""
    if variant not in DIODE_VARIANTS:
        raise ValueError(f"unknown diode variant {variant!r}")
    omega_min = DIODE_VARIANTS[variant]
    theta = ALPHA ** 2
    dop = lambda x: doping_profile(x)
    return ProblemConfig(
        name=f"diode-{variant}",
        x_lo=0.0, x_hi=0.6, v_lo=-2.0, v_hi=2.0,
        eps=eps, theta=theta,
        omega=lambda x: omega_profile(x, omega_min),
        doping=dop,
        f0=lambda x, v: dop(x) * maxwellian(v, theta),
        f_minus=lambda x, v: dop(x) * maxwellian(v, theta),
        t_final=0.5,
        bc=(0.0, 1.0),
        field_scale=BETA ** 2,
        load_scale=GAMMA ** 2 / BETA ** 2,
        zeta=ZETA,
        fc_bounds=(5e4, 2e5),
        omega_min=omega_min,
    )


def manufactured(eps: float = 1.0) -> ProblemConfig:
    """Traveling-wave solution on the periodic torus, used for rate studies.

    f(x,v,t) = (sqrt(pi)/2) (2 - cos(2x - 2 pi t)) M_{1/8}(v) with
    E = -(sqrt(pi)/4) sin(2x - 2 pi t); collisions vanish identically on this
    f, so the source carries the pure transport imbalance.
    """
    theta = 0.125
    sp = np.sqrt(np.pi)

    def exact_f(x, v, t):
        return 0.5 * sp * (2.0 - np.cos(2.0 * x - 2.0 * np.pi * t)) * maxwellian(v, theta)

    def exact_e(x, t):
        return -0.25 * sp * np.sin(2.0 * x - 2.0 * np.pi * t)

    def source(x, v, t):
        u = 2.0 * x - 2.0 * np.pi * t
        return (2.0 / eps) * np.exp(-4.0 * v ** 2) * np.sin(u) * (
            v - eps * np.pi + v * sp * (2.0 - np.cos(u)))

    return ProblemConfig(
        name="manufactured",
        x_lo=-np.pi, x_hi=np.pi, v_lo=-np.pi, v_hi=np.pi,
        eps=eps, theta=theta,
        omega=lambda x: np.ones_like(np.asarray(x, dtype=float)),
        doping=lambda x: np.full_like(np.asarray(x, dtype=float), sp),
        f0=lambda x, v: exact_f(x, v, 0.0),
        t_final=1.0,
        periodic=True,
        q=source,
        solver_tol=1e-10,
        exact_f=exact_f,
        exact_e=exact_e,
        default_nx=64, default_nv=64,
    )


def by_name(name: str, eps: float | None = None) -> ProblemConfig:
    """CLI-facing lookup: 'diode-<variant>' or 'manufactured'."""
    if name == "manufactured":
        return manufactured() if eps is None else manufactured(eps)
    if name.startswith("diode-"):
        variant = name.split("-", 1)[1]
        if eps is None:
            defaults = {"single": 0.2, "silicon": 0.056, "multiscale": 0.002}
            eps = defaults[variant]
        return diode(eps, variant)
    raise ValueError(f"unknown problem {name!r}")
