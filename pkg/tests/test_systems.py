import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import clflab as c
from clflab.systems import henon_heiles_energy, linear_oracle


def test_linear_rejects_trace():
    with pytest.raises(c.ContractViolation):
        c.make_linear([[1.0, 0.0], [0.0, 0.0]])


def test_linear_rejects_non_square():
    with pytest.raises(c.ContractViolation):
        c.make_linear([[1.0, 0.0, 0.0]])


def test_oracle_diag():
    ex, V = linear_oracle([[1.0, 0.0], [0.0, -1.0]])
    assert np.array_equal(ex, [1.0, -1.0])
    assert np.array_equal(V, np.eye(2))


def test_oracle_swap():
    ex, V = linear_oracle([[0.0, 1.0], [1.0, 0.0]])
    assert np.allclose(ex, [1.0, -1.0], atol=1e-15)
    s = 1 / np.sqrt(2)
    assert np.allclose(V, [[s, s], [s, -s]], atol=1e-15)


def test_oracle_zero():
    ex, _ = linear_oracle(np.zeros((2, 2)))
    assert np.array_equal(ex, [0.0, 0.0])


def test_oracle_complex_spectrum():
    ex, V = linear_oracle([[0.0, -1.0], [1.0, 0.0]])
    assert V is None and np.array_equal(ex, [0.0, 0.0])


def test_portrait_configuration():
    spec = c.HenonHeilesSpec(2.0, 0.037)
    sys = spec.system()
    assert sys.parameters == {"coupling": 2.0, "energy": 0.037}
    assert sys.is_hamiltonian and sys.dim == 4


def test_state_on_energy_surface():
    spec = c.HenonHeilesSpec(1.0, 0.1)
    for y in (-0.3, 0.0, 0.2):
        x = spec.state(y, 0.0)
        assert x[0] == 0 and x[3] == 0 and x[2] > 0
        assert abs(spec.system().invariant_eval(x) - 0.1) < 1e-12


def test_inaccessible_state_rejected():
    with pytest.raises(c.ContractViolation, match="inaccessible"):
        c.HenonHeilesSpec(1.0, 0.01).state(0.5, 0.0)


def test_energy_above_escape_rejected():
    with pytest.raises(c.ContractViolation):
        c.HenonHeilesSpec(1.0, 0.2).y_range()


def test_y_range_endpoints_on_zero_velocity_curve():
    spec = c.HenonHeilesSpec(2.0, 0.037)
    lo, hi = spec.y_range()
    for y in (lo, hi):
        assert henon_heiles_energy([0.0, y, 0.0, 0.0], 2.0) == pytest.approx(0.037, abs=1e-12)


def test_sampling_deterministic():
    spec = c.HenonHeilesSpec(1.0, 1 / 8)
    a = c.sample_energy_surface(spec, 10, seed=42)
    b = c.sample_energy_surface(spec, 10, seed=42)
    assert all(np.array_equal(u, v) for u, v in zip(a, b))
    assert not np.array_equal(a[0], c.sample_energy_surface(spec, 1, seed=43)[0])
    for x in a:
        assert x[0] == 0 and x[2] > 0
        assert abs(henon_heiles_energy(x, 1.0) - 1 / 8) < 1e-12


def test_origin_momentum():
    spec = c.HenonHeilesSpec(1.0, 0.1)
    assert spec.state(0.0, 0.0)[2] == pytest.approx(np.sqrt(0.2), rel=1e-15)


def test_zero_energy_only_origin():
    pts = c.sample_energy_surface(c.HenonHeilesSpec(1.0, 0.0), 3, seed=0)
    assert all(np.array_equal(p, np.zeros(4)) for p in pts)


def test_decoupled_limit_zero_exponents():
    spec = c.HenonHeilesSpec(0.0, 0.1)
    sys = spec.system()
    res = c.benettin_spectrum(sys, spec.state(0.2, 0.1), c.default_config(sys), 2000.0, 1.0)
    assert np.abs(res.exponents).max() < 5e-3


def test_harmonic_invariant():
    sys = c.make_harmonic(2.0)
    assert sys.invariant_eval([1.0, 1.0]) == pytest.approx(0.5 * (1 + 4), rel=1e-15)


@settings(max_examples=60, deadline=None)
@given(coupling=st.floats(0.5, 2.0), frac=st.floats(0.05, 0.95), u=st.floats(0.0, 1.0), w=st.floats(-1.0, 1.0))
def test_state_on_surface_property(coupling, frac, u, w):
    energy = frac / (6 * coupling ** 2)  # below the escape energy
    spec = c.HenonHeilesSpec(coupling, energy)
    lo, hi = spec.y_range()
    y = min(max(lo + u * (hi - lo), lo), hi)  # lo + (hi - lo) can round past hi
    # largest |py| still leaving px >= 0 at this y
    room = 2 * (energy - henon_heiles_energy([0.0, y, 0.0, 0.0], coupling))
    py = w * np.sqrt(max(room, 0.0)) * 0.99
    x = spec.state(y, py)
    assert x[2] >= 0 and abs(henon_heiles_energy(x, coupling) - energy) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=2))
def test_linear_field_is_matrix_product(x):
    A = np.array([[0.4, -1.3], [2.0, -0.4]])
    sys = c.make_linear(A)
    assert np.allclose(sys.field(x), A @ x, rtol=0, atol=1e-14)
    assert np.array_equal(sys.jacobian(x), A)
