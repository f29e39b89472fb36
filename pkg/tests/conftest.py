import numpy as np
import pytest

from ksweep.mesh import PhaseField, SpatialField, build_mesh, project
from ksweep.transport import BoundaryTrace, EffectiveField, SweepContext


@pytest.fixture
def small_mesh():
    return build_mesh(0.0, 1.0, -1.0, 1.0, 8, 8)


@pytest.fixture
def random_problem(small_mesh):
    """Generic sweep data with varying omega and mixed-sign field."""
    m = small_mesh
    rng = np.random.default_rng(42)
    expl = PhaseField(m, rng.normal(size=(m.nx, m.nv, 3)))
    ctx = SweepContext(m, eps=0.5, dt=0.1,
                       omega=lambda x: 0.5 + 0.3 * np.sin(2 * np.pi * x) ** 2,
                       theta=0.2, explicit=expl)
    E = EffectiveField(m, rng.normal(size=m.nx))
    sigma = SpatialField(m, rng.normal(size=(m.nx, 2)))
    trace = BoundaryTrace(m, rng.normal(size=(m.nx, 2)),
                          rng.normal(size=(m.nx, 2)))
    return m, ctx, E, sigma, trace


def equilibrium_setup(nx=16, nv=64, theta=0.125, rho0=2.5, eps=0.3, dt=0.05):
    """Spatially homogeneous Maxwellian on the periodic torus."""
    from ksweep.transport import maxwellian

    m = build_mesh(-np.pi, np.pi, -np.pi, np.pi, nx, nv, x_periodic=True)
    f0 = project(lambda x, v: rho0 * maxwellian(v, theta) + 0.0 * x, m)
    expl = PhaseField(m, eps * f0.coeffs / dt)
    ctx = SweepContext(m, eps=eps, dt=dt,
                       omega=lambda x: np.ones_like(np.asarray(x, dtype=float)),
                       theta=theta, explicit=expl)
    return m, ctx, f0
