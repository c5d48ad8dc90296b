"""Scalar multipliers of covariant Lyapunov fields along trajectories.

A covariant field v satisfies L_F v + b v = 0. For the unit-normalized field
w the multiplier is c = (1/2) w^T (L_F g) w, and its time average is the
exponent. Everything here works on uniformly sampled trajectories.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from ._stats import batch_means
from .core import ContractViolation, SystemDefinition, metric_tensor
from .integrate import TangentTrajectory
from .lyapunov import ClvSeries

UNIT_TOL = 1e-8
NBATCH = 10


@dataclass
class ScalarFieldSeries:
    times: np.ndarray
    values: np.ndarray
    running_average: np.ndarray

    @classmethod
    def from_values(cls, times, values) -> "ScalarFieldSeries":
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if times.shape != values.shape or times.ndim != 1:
            raise ContractViolation("times and values must be 1-d and of equal length")
        if not np.all(np.isfinite(values)):
            raise ContractViolation("series values must be finite")
        run = np.empty_like(values)
        if values.size:
            run[0] = values[0]
            if values.size > 1:
                run[1:] = cumulative_trapezoid(values, times) / (times[1:] - times[0])
        return cls(times, values, run)

    def __len__(self):
        return self.times.shape[0]

    def to_csv(self, path) -> None:
        write_series_csv(path, self)


@dataclass(frozen=True)
class GaugeFunction:
    """a(x) = exp(phi(x)).

    ``phi_eval`` receives states with components on the last axis, either a
    single state (n,) or a stack (k, n), and must broadcast accordingly.
    """

    phi_eval: Callable[[np.ndarray], np.ndarray]
    bound: float
    name: str = "phi"

    def values(self, states) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        out = np.broadcast_to(np.asarray(self.phi_eval(states), dtype=float), states.shape[:-1])
        if np.any(np.abs(out) > self.bound * (1 + 1e-12)):
            raise ContractViolation(f"|{self.name}| exceeds its declared bound {self.bound} on the trajectory")
        return np.array(out)


def standard_gauges(constant=0.7):
    """The gauges exercised by the checks: 0, a constant, x1 and sin(x1 x2).

    Bounds for the unbounded ones are filled in per trajectory by
    ``bounded_on``.
    """
    return {
        "zero": GaugeFunction(lambda X: np.zeros(np.shape(X)[:-1]), 0.0, "zero"),
        "const": GaugeFunction(lambda X: np.full(np.shape(X)[:-1], constant), abs(constant), "const"),
        "x1": GaugeFunction(lambda X: np.asarray(X)[..., 0], np.inf, "x1"),
        "sin_x1x2": GaugeFunction(lambda X: np.sin(np.asarray(X)[..., 0] * np.asarray(X)[..., 1]), 1.0, "sin_x1x2"),
    }


def bounded_on(phi: GaugeFunction, states) -> GaugeFunction:
    """Same gauge with ``bound`` = sup |phi| over the given states (never above the declared bound)."""
    sup = float(np.max(np.abs(np.asarray(phi.phi_eval(np.asarray(states, dtype=float)), dtype=float)),
                       initial=0.0))
    return GaugeFunction(phi.phi_eval, min(sup, phi.bound), phi.name)


def time_derivative(values, dt, endpoints="second-order"):
    """d/dt of uniformly sampled values along axis 0.

    Interior points use centered differences. ``endpoints`` is
    ``"second-order"`` (one-sided three-point stencils) or ``"telescoping"``
    (one-sided two-point stencils, chosen so the trapezoid integral of the
    derivative equals the end-point difference exactly).
    """
    y = np.asarray(values, dtype=float)
    k = y.shape[0]
    if k < 3:
        raise ContractViolation("need at least 3 samples for a time derivative")
    d = np.empty_like(y)
    d[1:-1] = (y[2:] - y[:-2]) / (2 * dt)
    if endpoints == "second-order":
        d[0] = (-3 * y[0] + 4 * y[1] - y[2]) / (2 * dt)
        d[-1] = (3 * y[-1] - 4 * y[-2] + y[-3]) / (2 * dt)
    elif endpoints == "telescoping":
        d[0] = (y[1] - y[0]) / dt
        d[-1] = (y[-1] - y[-2]) / dt
    else:
        raise ContractViolation(f"unknown endpoint rule {endpoints!r}")
    return d


def _uniform_dt(times):
    times = np.asarray(times, dtype=float)
    if times.shape[0] < 2:
        raise ContractViolation("need at least 2 samples")
    dt = np.diff(times)
    if np.any(np.abs(dt - dt[0]) > 1e-9 * max(abs(dt[0]), 1e-300)) or dt[0] == 0:
        raise ContractViolation("samples must be uniformly spaced in time")
    return float(dt[0])


def _unpack(series, index=0):
    """(times, states, vectors (k, n)) from a ClvSeries, a list of ClvSample or a tuple."""
    if isinstance(series, ClvSeries):
        return series.times, series.states, series.vectors[:, :, index]
    if isinstance(series, tuple):
        t, X, V = series
        V = np.asarray(V, dtype=float)
        return np.asarray(t, dtype=float), np.asarray(X, dtype=float), V if V.ndim == 2 else V[:, :, index]
    samples = list(series)
    return (np.array([s.time for s in samples]), np.array([s.state for s in samples]),
            np.array([s.vectors[:, index] if np.ndim(s.vectors) == 2 else s.vectors for s in samples]))


def _trajectory(trajectory):
    if isinstance(trajectory, (TangentTrajectory, ClvSeries)):
        return np.asarray(trajectory.times), np.asarray(trajectory.states)
    t, X = trajectory
    return np.asarray(t, dtype=float), np.asarray(X, dtype=float)


def align_signs(vectors) -> np.ndarray:
    """Flip samples so consecutive vectors have a non-negative overlap."""
    V = np.array(vectors, dtype=float)
    flips = np.ones(V.shape[0])
    dots = np.einsum("ki,ki->k", V[1:], V[:-1])
    flips[1:] = np.cumprod(np.where(dots < 0, -1.0, 1.0))
    return V * flips[:, None]


def _lie_forms(J, g):
    # (k, n, n) stack of g J + J^T g
    gJ = g @ J
    return gJ + np.swapaxes(gJ, 1, 2)


def lie_form_norms(J, g) -> np.ndarray:
    """||L_F g|| for a stack of Jacobians (constant metric)."""
    a = _lie_forms(J, g)
    if np.array_equal(g, np.eye(g.shape[0])):
        return np.sqrt(np.einsum("kij,kij->k", a, a))
    m = np.linalg.inv(g) @ a
    return np.sqrt(np.maximum(np.einsum("kij,kji->k", m, m), 0.0))


def scalar_c_along(sys: SystemDefinition, g, clv_series, index=0) -> ScalarFieldSeries:
    """c = (1/2) w^T (L_F g) w for unit vectors w along the trajectory."""
    t, X, W = _unpack(clv_series, index)
    g = metric_tensor(g, sys.dim)
    norms = np.sqrt(np.einsum("ki,ij,kj->k", W, g, W))
    if np.any(np.abs(norms - 1) > UNIT_TOL):
        raise ContractViolation(f"vectors must be unit in the metric (max deviation {np.abs(norms - 1).max():.3g})")
    _, J = sys.evaluate_many(X)
    c = 0.5 * np.einsum("ki,kij,kj->k", W, _lie_forms(J, g), W)
    return ScalarFieldSeries.from_values(t, c)


def scalar_b_from_c(series_c: ScalarFieldSeries, norms) -> ScalarFieldSeries:
    """b = c - d/dt ln||v(x(t))|| for the unnormalized field v."""
    norms = np.asarray(norms, dtype=float)
    if norms.shape != series_c.values.shape:
        raise ContractViolation("norm samples must match the series length")
    if np.any(~(norms > 0)):
        raise ContractViolation("norm samples must be positive")
    dt = _uniform_dt(series_c.times)
    b = series_c.values - time_derivative(np.log(norms), dt)
    return ScalarFieldSeries.from_values(series_c.times, b)


def _trapezoid_weights(k, dt):
    w = np.full(k, dt)
    w[0] = w[-1] = dt / 2
    return w


def time_average(series: ScalarFieldSeries, nbatch=NBATCH):
    """Trapezoid time average over the full span and its batch-means standard error."""
    if len(series) < 2:
        raise ContractViolation("need at least 2 samples")
    t, y = series.times, series.values
    T = t[-1] - t[0]
    avg = float(trapezoid(y, t) / T)
    if len(series) < nbatch:
        return avg, float("nan")
    _, err = batch_means(y, _trapezoid_weights(len(series), abs(t[1] - t[0])), nbatch)
    return avg, float(err)


def gauge_transform(series_b: ScalarFieldSeries, phi: GaugeFunction, trajectory) -> ScalarFieldSeries:
    """b' = b - d/dt phi(x(t)) for the rescaled field exp(phi) v.

    The derivative uses the telescoping stencil, so the trapezoid averages
    satisfy <b'>_T - <b>_T = (phi(x(0)) - phi(x(T))) / T to rounding.
    """
    t, X = _trajectory(trajectory)
    if t.shape != series_b.times.shape or np.any(t != series_b.times):
        raise ContractViolation("trajectory samples must match the series times")
    dt = _uniform_dt(t)
    ph = phi.values(X)
    return ScalarFieldSeries.from_values(t, series_b.values - time_derivative(ph, dt, "telescoping"))


def gauge_shift(series_b, series_b_prime) -> float:
    """<b'>_T - <b>_T from the trapezoid averages."""
    return time_average(series_b_prime)[0] - time_average(series_b)[0]


def le_integrand(sys, g, clv_series, index=0) -> ScalarFieldSeries:
    """v^T (L_F g) v / (2 ||v||^2): scale-free, any nonzero v per sample."""
    t, X, V = _unpack(clv_series, index)
    g = metric_tensor(g, sys.dim)
    _, J = sys.evaluate_many(X)
    num = np.einsum("ki,kij,kj->k", V, _lie_forms(J, g), V)
    den = 2 * np.einsum("ki,ij,kj->k", V, g, V)
    if np.any(~(den > 0)):
        raise ContractViolation("zero vector in the series")
    return ScalarFieldSeries.from_values(t, num / den)


def le_integral_estimate(sys, g, clv_series, index=0) -> float:
    """Exponent as the time average of v^T (L_F g) v / (2 ||v||^2)."""
    return time_average(le_integrand(sys, g, clv_series, index))[0]


def bound_series(sys, g, trajectory) -> ScalarFieldSeries:
    """(1/2) ||L_F g(x(t))|| along the trajectory."""
    t, X = _trajectory(trajectory)
    g = metric_tensor(g, sys.dim)
    _, J = sys.evaluate_many(X)
    return ScalarFieldSeries.from_values(t, 0.5 * lie_form_norms(J, g))


def le_upper_bound(sys, g, trajectory) -> float:
    """Time average of (1/2) ||L_F g||; bounds |lambda| for every exponent."""
    return time_average(bound_series(sys, g, trajectory))[0]


def clf_residuals(sys, clv_series, series_b, index=0) -> np.ndarray:
    """|| dv/dt - J v + b v || / ||v|| at every sample (Euclidean norms)."""
    t, X, V = _unpack(clv_series, index)
    b = series_b.values if isinstance(series_b, ScalarFieldSeries) else np.broadcast_to(series_b, t.shape)
    if b.shape != t.shape:
        raise ContractViolation("b series must match the vector series")
    dt = _uniform_dt(t)
    V = align_signs(V)
    _, J = sys.evaluate_many(X)
    r = time_derivative(V, dt) - np.einsum("kij,kj->ki", J, V) + b[:, None] * V
    return np.linalg.norm(r, axis=1) / np.linalg.norm(V, axis=1)


def clf_residual(sys, clv_series, series_b, index=0) -> float:
    """Largest normalized residual of dv/dt = J v - b v along the samples."""
    return float(clf_residuals(sys, clv_series, series_b, index).max())


def involutivity_residual(sys, analytic_v, b_eval, probes, step=1e-5) -> float:
    """max ||[v, F] - b v|| / ||v|| over probe states, [v, F] = J v - (Dv) F."""
    from .core import finite_difference_jacobian

    worst = 0.0
    for x in np.atleast_2d(np.asarray(probes, dtype=float)):
        v = np.asarray(analytic_v(x), dtype=float)
        Dv = finite_difference_jacobian(analytic_v, x, step)
        bracket = sys.jacobian(x) @ v - Dv @ sys.field(x)
        worst = max(worst, float(np.linalg.norm(bracket - b_eval(x) * v) / np.linalg.norm(v)))
    return worst


def flow_directions(sys, states) -> np.ndarray:
    """F / ||F|| at every state; the field itself is covariant with exponent 0."""
    F, _ = sys.evaluate_many(states)
    nrm = np.linalg.norm(F, axis=1)
    if np.any(nrm == 0):
        raise ContractViolation("F vanishes on the trajectory")
    return F / nrm[:, None]


def norm_range(vectors, g=None):
    """(min, max) of ||v|| over samples: finite-time proxy for ln||v|| being integrable."""
    V = np.asarray(vectors, dtype=float)
    g = metric_tensor(g, V.shape[1])
    n = np.sqrt(np.einsum("ki,ij,kj->k", V, g, V))
    return float(n.min()), float(n.max())


def write_series_csv(path, series: ScalarFieldSeries) -> None:
    data = np.column_stack([series.times, series.values, series.running_average])
    np.savetxt(path, data, delimiter=",", header="t,value,running_average", comments="", fmt="%.17g")
