import warnings

import numpy as np
import pytest

import clflab as c
from clflab import poincare


@pytest.fixture(scope="session", autouse=True)
def compiled_kernels():
    """Compile (or load from cache) every kernel once so timed tests measure the algorithms."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lin = c.make_linear([[1.0, 0.0], [0.0, -1.0]])
        c.benettin_spectrum(lin, [1.0, 1.0], c.IntegratorConfig(), 1.0, 0.1)
        c.ginelli_clv(lin, [1.0, 1.0], c.IntegratorConfig(), 1.0, 1.0, 1.0, 0.1, sample_every=0.01)
        c.evolve(lin, [1.0, 1.0], np.eye(2), c.IntegratorConfig(), 1.0)
        lin.evaluate_many(np.ones((3, 2)))
        for sys in (c.make_henon_heiles(1.0), c.make_harmonic(), c.make_zero(2)):
            for scheme in ("rk4", "leapfrog"):
                cfg = c.IntegratorConfig(scheme, 1e-3)
                x0 = np.full(sys.dim, 0.1)
                c.benettin_spectrum(sys, x0, cfg, 0.1, 0.01)
                c.ginelli_clv(sys, x0, cfg, 0.1, 0.1, 0.1, 0.01, sample_every=0.001)
                c.evolve(sys, x0, np.eye(sys.dim), cfg, 0.01)
                poincare.orbit_section(sys, poincare.SectionSpec(0, 0.0, 1, (1, sys.dim - 1)), x0, cfg, 0.01,
                                       t_align=0.01)
                sys.evaluate_many(np.ones((3, sys.dim)))


@pytest.fixture
def diag_sys():
    return c.make_linear([[1.0, 0.0], [0.0, -1.0]])


@pytest.fixture
def swap_sys():
    return c.make_linear([[0.0, 1.0], [1.0, 0.0]])


@pytest.fixture(scope="session")
def hh_chaotic():
    spec = c.HenonHeilesSpec(1.0, 1 / 8)
    return spec, spec.system(), spec.default_state()
