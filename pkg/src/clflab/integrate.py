"""Fixed-step integration of the flow and of the variational equation.

Backward integration negates F and its Jacobian; stored forward steps are
never inverted.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .core import ContractViolation, IntegrationError, SystemDefinition, as_state

SCHEMES = {"rk4": K.SCHEME_RK4, "leapfrog": K.SCHEME_LEAPFROG}
DIRECTIONS = {"forward": 1.0, "backward": -1.0}

DEFAULT_STEP = {"henon_heiles": 1e-3, "linear": 1e-2}


@dataclass(frozen=True)
class IntegratorConfig:
    scheme: str = "rk4"
    step: float = 1e-2
    direction: str = "forward"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ContractViolation(f"unknown scheme {self.scheme!r}; choose from {sorted(SCHEMES)}")
        if self.direction not in DIRECTIONS:
            raise ContractViolation(f"unknown direction {self.direction!r}")
        if not (np.isfinite(self.step) and self.step > 0):
            raise ContractViolation(f"step must be > 0, got {self.step}")

    @property
    def sign(self) -> float:
        return DIRECTIONS[self.direction]

    def reversed(self) -> "IntegratorConfig":
        return IntegratorConfig(self.scheme, self.step, "backward" if self.direction == "forward" else "forward")

    def check(self, sys: SystemDefinition) -> None:
        if self.scheme == "leapfrog" and not sys.is_hamiltonian:
            raise ContractViolation(f"leapfrog needs a separable Hamiltonian system; {sys.name} is not")


def default_config(sys: SystemDefinition, direction="forward") -> IntegratorConfig:
    if sys.name == "henon_heiles":
        return IntegratorConfig("leapfrog", DEFAULT_STEP["henon_heiles"], direction)
    return IntegratorConfig("rk4", DEFAULT_STEP["linear"], direction)


@dataclass
class TangentTrajectory:
    times: np.ndarray   # (k,)
    states: np.ndarray  # (k, n)
    frames: np.ndarray  # (k, n, m)

    def __len__(self):
        return self.times.shape[0]

    @property
    def spacing(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self) > 1 else 0.0


def steps_in(duration, step, what="duration") -> int:
    """Number of whole steps in ``duration``; it must be a multiple of ``step``."""
    k = duration / step
    r = round(k)
    if r < 0 or abs(k - r) > 1e-6 * max(1.0, abs(k)):
        raise ContractViolation(f"{what}={duration} is not a non-negative multiple of the step {step}")
    return int(r)


class _CompiledEngine:
    """Built-in systems: every loop runs in the compiled kernels."""

    def __init__(self, sys):
        self.kind, self.params = sys.kernel

    def advance(self, sign, scheme, x, Y, h, nsteps):
        return K.bound(self.kind, scheme).advance(self.params, sign, x, Y, h, nsteps)

    def qr_sweep(self, sign, scheme, x, Y, h, steps_per_qr, nqr, logdiag, store, store_from):
        return K.bound(self.kind, scheme).qr_sweep(self.params, sign, x, Y, h, steps_per_qr, nqr, logdiag,
                                                   store, store_from)

    def evolve_samples(self, sign, scheme, x, Y, h, steps_per_sample, nsamples, X_out, Y_out, renorm, lognorm):
        return K.bound(self.kind, scheme).evolve_samples(self.params, sign, x, Y, h, steps_per_sample, nsamples,
                                                         X_out, Y_out, renorm, lognorm)

    def section_scan(self, sign, scheme, x, Y, h, nsteps, idx, value, direction, renorm_every,
                     t_lo, X_lo, Y_lo, X_hi):
        return K.bound(self.kind, scheme).section_scan(self.params, sign, x, Y, h, nsteps, idx, value, direction,
                                                       renorm_every, t_lo, X_lo, Y_lo, X_hi)


class _CallbackEngine:
    """User systems: the same algorithms as the kernels, driven from Python."""

    def __init__(self, sys):
        self.sys = sys

    def _step(self, sign, scheme, x, Y, h):
        F = lambda z: sign * np.asarray(self.sys.field_eval(z), dtype=float)  # noqa: E731
        J = lambda z: sign * np.asarray(self.sys.jacobian_eval(z), dtype=float)  # noqa: E731
        if scheme == K.SCHEME_LEAPFROG:
            d = x.shape[0] // 2
            x[d:] += 0.5 * h * F(x)[d:]
            Y[d:] += 0.5 * h * (J(x)[d:, :d] @ Y[:d])
            x[:d] += h * F(x)[:d]
            Y[:d] += h * (J(x)[:d, d:] @ Y[d:])
            x[d:] += 0.5 * h * F(x)[d:]
            Y[d:] += 0.5 * h * (J(x)[d:, :d] @ Y[:d])
            return
        k1, J1 = F(x), J(x)
        K1 = J1 @ Y
        x2, Y2 = x + 0.5 * h * k1, Y + 0.5 * h * K1
        k2, K2 = F(x2), J(x2) @ Y2
        x3, Y3 = x + 0.5 * h * k2, Y + 0.5 * h * K2
        k3, K3 = F(x3), J(x3) @ Y3
        x4, Y4 = x + h * k3, Y + h * K3
        k4, K4 = F(x4), J(x4) @ Y4
        x += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        Y += h / 6.0 * (K1 + 2 * K2 + 2 * K3 + K4)

    def advance(self, sign, scheme, x, Y, h, nsteps):
        for s in range(nsteps):
            xp, Yp = x.copy(), Y.copy()
            self._step(sign, scheme, x, Y, h)
            if not (np.all(np.isfinite(x)) and np.all(np.isfinite(Y))):
                x[:], Y[:] = xp, Yp
                return K.STATUS_NONFINITE, s
        if Y.size and np.abs(Y).max() > K.FRAME_OVERFLOW:
            return K.STATUS_OVERFLOW, nsteps
        return K.STATUS_OK, nsteps

    def qr_sweep(self, sign, scheme, x, Y, h, steps_per_qr, nqr, logdiag, store, store_from):
        n, m = Y.shape
        Q, R = np.empty((n, m)), np.empty((m, m))
        for k in range(nqr):
            status, _ = self.advance(sign, scheme, x, Y, h, steps_per_qr)
            if status == K.STATUS_NONFINITE:
                return status, k
            if not K.mgs_qr(Y, Q, R):
                return K.STATUS_COLLAPSE, k
            Y[:] = Q
            logdiag[k] = np.log(np.diag(R))
            if store.shape[0] > 0:
                store[store_from + k] = np.concatenate([x, Q.ravel(), R.ravel()])
        return K.STATUS_OK, nqr

    def evolve_samples(self, sign, scheme, x, Y, h, steps_per_sample, nsamples, X_out, Y_out, renorm, lognorm):
        for k in range(nsamples):
            status, _ = self.advance(sign, scheme, x, Y, h, steps_per_sample)
            if status == K.STATUS_NONFINITE:
                return status, k
            if renorm:
                r = np.linalg.norm(Y, axis=0)
                with np.errstate(divide="ignore"):
                    lognorm[k] = np.log(r)
                Y /= np.where(r > 0, r, 1.0)
            elif status == K.STATUS_OVERFLOW:
                return status, k
            X_out[k], Y_out[k] = x, Y
        return K.STATUS_OK, nsamples

    def section_scan(self, sign, scheme, x, Y, h, nsteps, idx, value, direction, renorm_every,
                     t_lo, X_lo, Y_lo, X_hi):
        loggrowth = np.zeros(Y.shape[1])
        count = 0
        for s in range(nsteps):
            xp, Yp = x.copy(), Y.copy()
            status, _ = self.advance(sign, scheme, x, Y, h, 1)
            if status == K.STATUS_NONFINITE:
                return status, s, count, loggrowth
            a, b = xp[idx] - value, x[idx] - value
            if ((direction > 0 and a < 0 <= b) or (direction < 0 and a > 0 >= b)) and count < t_lo.shape[0]:
                t_lo[count], X_lo[count], X_hi[count] = s * h, xp, x
                Y_lo[count] = Yp / np.linalg.norm(Yp, axis=0)
                count += 1
            if (s + 1) % renorm_every == 0 or s == nsteps - 1:
                r = np.linalg.norm(Y, axis=0)
                loggrowth += np.log(r)
                Y /= r
        return K.STATUS_OK, nsteps, count, loggrowth


def engine(sys: SystemDefinition):
    return _CompiledEngine(sys) if sys.kernel is not None else _CallbackEngine(sys)


def _frame(frame, n):
    if frame is None:
        return np.zeros((n, 0))
    Y = np.array(frame, dtype=float, order="C")
    if Y.ndim == 1:
        Y = Y[:, None].copy()
    if Y.shape[0] != n:
        raise ContractViolation(f"frame has {Y.shape[0]} rows, system dim is {n}")
    if not np.all(np.isfinite(Y)):
        raise ContractViolation("frame has non-finite entries")
    return Y


def step_pair(sys, x, frame, cfg: IntegratorConfig, h=None):
    """One step of the state and tangent columns together; returns copies."""
    cfg.check(sys)
    x = as_state(x, sys.dim).copy()
    Y = _frame(frame, sys.dim)
    h = cfg.step if h is None else h
    status, _ = engine(sys).advance(cfg.sign, SCHEMES[cfg.scheme], x, Y, h, 1)
    if status == K.STATUS_NONFINITE:
        raise IntegrationError("non-finite state after one step", time=0.0, state=x)
    if status == K.STATUS_OVERFLOW:
        raise IntegrationError("tangent frame overflow; shorten the re-orthonormalization interval", time=0.0, state=x)
    return x, Y


def step_flow(sys, x, cfg: IntegratorConfig) -> np.ndarray:
    return step_pair(sys, x, None, cfg)[0]


def step_tangent(sys, x, frame, cfg: IntegratorConfig) -> np.ndarray:
    """Advance tangent columns one step along the trajectory through ``x``."""
    Y = step_pair(sys, x, frame, cfg)[1]
    return Y[:, 0] if np.ndim(frame) == 1 else Y


def evolve(sys, x0, frame0, cfg: IntegratorConfig, t_span, sample_every=None, renormalize=False):
    """Uniformly sampled trajectory with co-evolved tangent frames.

    The first sample is the initial data. With ``renormalize`` the columns
    are rescaled to unit length at each sample (directions only).
    """
    cfg.check(sys)
    x = as_state(x0, sys.dim).copy()
    Y = _frame(frame0, sys.dim)
    sample_every = cfg.step if sample_every is None else sample_every
    if t_span < 0:
        raise ContractViolation("t_span must be >= 0")
    per = steps_in(sample_every, cfg.step, "sample_every")
    if per < 1:
        raise ContractViolation("sample_every must be a positive multiple of the step")
    nsamp = steps_in(t_span, sample_every, "t_span")
    X = np.empty((nsamp + 1, sys.dim))
    F = np.empty((nsamp + 1,) + Y.shape)
    X[0], F[0] = x, Y
    lognorm = np.zeros((nsamp, Y.shape[1]))
    status, done = engine(sys).evolve_samples(cfg.sign, SCHEMES[cfg.scheme], x, Y, cfg.step, per, nsamp,
                                              X[1:], F[1:], renormalize, lognorm)
    h_s = per * cfg.step
    if status == K.STATUS_NONFINITE:
        raise IntegrationError(f"non-finite state near t={cfg.sign * (done * h_s):.6g}",
                               time=cfg.sign * done * h_s, state=X[done])
    if status == K.STATUS_OVERFLOW:
        raise IntegrationError("tangent frame overflow; sample more often or renormalize",
                               time=cfg.sign * done * h_s, state=X[done])
    times = cfg.sign * h_s * np.arange(nsamp + 1)
    return TangentTrajectory(times, X, F)
