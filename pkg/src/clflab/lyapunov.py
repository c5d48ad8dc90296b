"""Lyapunov spectra by QR re-orthonormalization and covariant vectors by the dynamic method."""
from __future__ import annotations

import os
import tempfile
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from ._stats import batch_means
from .core import ContractViolation, IntegrationError, SystemDefinition, as_state, canonical_sign
from .integrate import SCHEMES, IntegratorConfig, engine, steps_in

COND_LIMIT = 1e12
DEFAULT_MEMORY_BUDGET = 512 * 2**20
DEGENERACY_FACTOR = 10.0
SCRATCH_HEADER = np.dtype([("n", "<i8"), ("m", "<i8"), ("count", "<i8")])


class DegenerateSpectrumWarning(UserWarning):
    pass


@dataclass
class LyapunovSpectrum:
    exponents: np.ndarray   # descending
    direction: str
    history: np.ndarray     # (nqr, m) running averages
    times: np.ndarray       # (nqr,) elapsed time after each QR step
    qr_interval: float
    stderr: np.ndarray      # batch-means error bar per exponent
    olvs: np.ndarray        # final orthonormal frame (n, m)
    final_state: np.ndarray

    def last_decade_fluctuation(self) -> np.ndarray:
        """Spread (max - min) of each running average over the last tenth of the run."""
        tail = self.history[-max(1, len(self.history) // 10):]
        return tail.max(axis=0) - tail.min(axis=0)


def _initial_frame(n, m, seed):
    if seed is None:
        return np.eye(n)[:, :m].copy()
    rng = np.random.default_rng(seed)
    Q, R = np.linalg.qr(rng.standard_normal((n, m)))
    return np.ascontiguousarray(Q * np.sign(np.diag(R)))


def _check_m(sys, m):
    m = sys.dim if m is None else int(m)
    if not 1 <= m <= sys.dim:
        raise ContractViolation(f"m must be in [1, {sys.dim}], got {m}")
    return m


def _sweep(sys, cfg, x, Y, nqr, per, logdiag, store=None, store_from=0, t0=0.0):
    store = np.empty((0, 1)) if store is None else store
    status, done = engine(sys).qr_sweep(cfg.sign, SCHEMES[cfg.scheme], x, Y, cfg.step, per, nqr,
                                        logdiag, store, store_from)
    t_fail = cfg.sign * (t0 + done * per * cfg.step)
    if status == K.STATUS_COLLAPSE:
        raise IntegrationError(f"tangent frame lost rank near t={t_fail:.6g} (|R_jj| < 1e-300); "
                               "use a smaller qr_interval", time=t_fail, state=x)
    if status == K.STATUS_NONFINITE:
        raise IntegrationError(f"non-finite state or frame near t={t_fail:.6g}; "
                               "if the state is finite, use a smaller qr_interval", time=t_fail, state=x)


def benettin_spectrum(sys: SystemDefinition, x0, cfg: IntegratorConfig, t_total, qr_interval, m=None,
                      t_transient=None, seed=0) -> LyapunovSpectrum:
    """Exponents from the running average of log R_jj over QR steps every ``qr_interval``.

    ``t_transient`` (default: a tenth of ``t_total``, rounded down to whole
    QR intervals) is integrated with re-orthonormalization before averaging
    starts. The initial frame is a seeded random orthonormal frame;
    ``seed=None`` uses the first ``m`` coordinate axes instead.
    """
    if t_transient is None:
        t_transient = qr_interval * int(0.1 * t_total / qr_interval)
    cfg.check(sys)
    m = _check_m(sys, m)
    x = as_state(x0, sys.dim).copy()
    per = steps_in(qr_interval, cfg.step, "qr_interval")
    nqr = steps_in(t_total, qr_interval, "t_total")
    ntr = steps_in(t_transient, qr_interval, "t_transient")
    if per < 1 or nqr < 1:
        raise ContractViolation("need qr_interval >= step and t_total >= qr_interval")
    Y = _initial_frame(sys.dim, m, seed)
    if ntr:
        _sweep(sys, cfg, x, Y, ntr, per, np.empty((ntr, m)))
    tau = per * cfg.step
    logdiag = np.empty((nqr, m))
    _sweep(sys, cfg, x, Y, nqr, per, logdiag, t0=ntr * per)
    times = tau * np.arange(1, nqr + 1)
    history = np.cumsum(logdiag, axis=0) / times[:, None]
    if nqr >= 10:
        _, err = batch_means(logdiag / tau)
    else:
        err = np.full(m, np.nan)
    return LyapunovSpectrum(exponents=history[-1].copy(), direction=cfg.direction, history=history, times=times,
                            qr_interval=tau, stderr=err, olvs=Y.copy(), final_state=x)


def backward_spectrum(sys, x0, cfg: IntegratorConfig, t_total, qr_interval, m=None, t_transient=None,
                      seed=0) -> LyapunovSpectrum:
    """Growth rates under the time-reversed field (F -> -F)."""
    if cfg.direction != "backward":
        cfg = cfg.reversed()
    return benettin_spectrum(sys, x0, cfg, t_total, qr_interval, m, t_transient, seed)


def opposition_error(forward, backward) -> float:
    """max_j |lambda_j + mu_(n+1-j)| for forward exponents lambda and backward growth rates mu.

    A direction growing at rate lambda forward in time grows at rate
    -lambda backward in time, so the sorted backward rates are the negated
    forward exponents in reverse order. Accepts arrays or LyapunovSpectrum.
    """
    f = getattr(forward, "exponents", forward)
    b = getattr(backward, "exponents", backward)
    f = np.sort(np.asarray(f, dtype=float))[::-1]
    b = np.sort(np.asarray(b, dtype=float))[::-1]
    if f.shape != b.shape:
        raise ContractViolation("forward and backward spectra must have the same length")
    return float(np.max(np.abs(f + b[::-1])))


def degenerate_mask(exponents, stderr, factor=DEGENERACY_FACTOR):
    """Flag exponents whose gap to a neighbour is below ``factor`` error bars."""
    ex = np.asarray(exponents, dtype=float)
    err = np.nan_to_num(np.asarray(stderr, dtype=float), nan=0.0)
    flag = np.zeros(ex.shape[0], dtype=bool)
    for j in range(ex.shape[0] - 1):
        if abs(ex[j] - ex[j + 1]) < factor * max(err[j], err[j + 1]):
            flag[j] = flag[j + 1] = True
    return flag


@dataclass
class ClvSample:
    time: float
    state: np.ndarray
    vectors: np.ndarray  # (n, m), unit columns

    def vector(self, j) -> np.ndarray:
        return self.vectors[:, j]


@dataclass
class ClvSeries:
    """CLVs on the converged window, sampled uniformly in time."""

    times: np.ndarray     # (k,)
    states: np.ndarray    # (k, n)
    vectors: np.ndarray   # (k, n, m)
    exponents: np.ndarray
    stderr: np.ndarray
    degenerate: np.ndarray
    qr_interval: float
    warnings: list = field(default_factory=list)

    def __len__(self):
        return self.times.shape[0]

    def __getitem__(self, k) -> ClvSample:
        return ClvSample(float(self.times[k]), self.states[k], self.vectors[k])

    def __iter__(self):
        return (self[k] for k in range(len(self)))

    def column(self, j) -> np.ndarray:
        """(k, n) samples of the j-th CLV."""
        return self.vectors[:, :, j]


class _Checkpoints:
    """Per-checkpoint records [x | Q | R] in memory or, above the budget, in a scratch file.

    The scratch file is a header of three little-endian int64 (n, m, count)
    followed by ``count`` records of little-endian doubles.
    """

    def __init__(self, n, m, count, memory_budget=DEFAULT_MEMORY_BUDGET, scratch_dir=None):
        self.n, self.m, self.count = n, m, count
        rec = n + n * m + m * m
        self.path = None
        if count * rec * 8 <= memory_budget:
            self.data = np.zeros((count, rec))
            return
        fd, self.path = tempfile.mkstemp(prefix="clflab-qr-", suffix=".bin", dir=scratch_dir)
        os.close(fd)
        header = np.array([(n, m, count)], dtype=SCRATCH_HEADER)
        with open(self.path, "wb") as fh:
            header.tofile(fh)
        self._mm = np.memmap(self.path, dtype="<f8", mode="r+", offset=SCRATCH_HEADER.itemsize,
                             shape=(count, rec))
        self.data = self._mm.view(np.ndarray)

    def states(self, a, b):
        return np.array(self.data[a:b, :self.n])

    def frames(self, a, b):
        return np.array(self.data[a:b, self.n:self.n + self.n * self.m]).reshape(b - a, self.n, self.m)

    def r_diagonals(self, a, b):
        off = self.n + self.n * self.m
        R = self.data[a:b, off:].reshape(b - a, self.m, self.m)
        return np.array(np.diagonal(R, axis1=1, axis2=2))

    def close(self):
        if self.path is not None:
            self.data = None
            self._mm._mmap.close()
            os.unlink(self.path)
            self.path = None


def read_scratch(path):
    """Read a checkpoint scratch file into (x, Q, R) arrays."""
    header = np.fromfile(path, dtype=SCRATCH_HEADER, count=1)[0]
    n, m, count = int(header["n"]), int(header["m"]), int(header["count"])
    data = np.fromfile(path, dtype="<f8", offset=SCRATCH_HEADER.itemsize).reshape(count, -1)
    x = data[:, :n]
    Q = data[:, n:n + n * m].reshape(count, n, m)
    R = data[:, n + n * m:].reshape(count, m, m)
    return x, Q, R


def ginelli_clv(sys: SystemDefinition, x0, cfg: IntegratorConfig, t_transient=None, t_store=None, t_discard=None,
                qr_interval=None, m=None, sample_every=None, seed=0, memory_budget=DEFAULT_MEMORY_BUDGET, scratch_dir=None,
                _retry=True) -> ClvSeries:
    """Covariant Lyapunov vectors on [t_transient, t_transient + t_store].

    Forward: converge the orthonormal frame over ``t_transient``, then store
    (x, Q, R) at every QR step for ``t_store + t_discard``. Backward: iterate
    random upper-triangular coefficients C <- R^-1 C with column
    normalization from the end; the last ``t_discard`` is the backward
    transient and is dropped. CLVs are Q C, unit length, first nonzero
    component positive. ``t_transient`` and ``t_discard`` default to a
    fifth of ``t_store`` (rounded to whole QR intervals).

    With ``sample_every`` below ``qr_interval`` the CLVs between checkpoints
    are obtained by pushing the checkpoint CLVs forward with the tangent map.
    """
    cfg.check(sys)
    m = _check_m(sys, m)
    n = sys.dim
    if t_store is None or qr_interval is None:
        raise ContractViolation("t_store and qr_interval are required")
    if t_transient is None or t_discard is None:
        fifth = max(1, int(0.2 * t_store / qr_interval + 1e-9)) * qr_interval
        t_transient = fifth if t_transient is None else t_transient
        t_discard = fifth if t_discard is None else t_discard
    for name, val in (("t_transient", t_transient), ("t_store", t_store), ("t_discard", t_discard)):
        if not val > 0:
            raise ContractViolation(f"{name} must be > 0")
    per = steps_in(qr_interval, cfg.step, "qr_interval")
    if per < 1:
        raise ContractViolation("qr_interval must be a positive multiple of the step")
    tau = per * cfg.step
    ntr = steps_in(t_transient, tau, "t_transient")
    nst = steps_in(t_store, tau, "t_store")
    ndi = steps_in(t_discard, tau, "t_discard")
    sub = per if sample_every is None else steps_in(sample_every, cfg.step, "sample_every")
    if sub < 1 or per % sub:
        raise ContractViolation("sample_every must divide qr_interval")

    rng = np.random.default_rng(seed)
    x = as_state(x0, n).copy()
    Y = _initial_frame(n, m, int(rng.integers(2**63)))
    _sweep(sys, cfg, x, Y, ntr, per, np.empty((ntr, m)))

    total = nst + ndi
    store = _Checkpoints(n, m, total + 1, memory_budget, scratch_dir)
    try:
        row0 = store.data[0]
        row0[:n] = x
        row0[n:n + n * m] = Y.ravel()
        row0[n + n * m:] = np.eye(m).ravel()
        logdiag = np.empty((total, m))
        _sweep(sys, cfg, x, Y, total, per, logdiag, store.data, 1, t0=ntr * per)

        diag = store.r_diagonals(1, total + 1)
        cond = diag.max(axis=1) / diag.min(axis=1)
        if cond.max() > COND_LIMIT:
            if _retry and per > 1:
                store.close()
                return ginelli_clv(sys, x0, cfg, t_transient, t_store, t_discard, (per // 2) * cfg.step, m,
                                   sample_every if sub <= per // 2 and (per // 2) % sub == 0 else None,
                                   seed, memory_budget, scratch_dir, _retry=False)
            raise IntegrationError(f"R factors ill-conditioned (cond {cond.max():.3g} > {COND_LIMIT:g}) even "
                                   f"at qr_interval={tau}", time=None)

        C = np.triu(rng.uniform(0.5, 1.0, (m, m)))
        C /= np.linalg.norm(C, axis=0)
        Cs = np.empty((nst + 1, m, m))
        lognorms = np.empty((total, m))
        K.ginelli_backward(store.data, n, m, C, 0, total, Cs, nst + 1, lognorms)

        Qs = store.frames(0, nst + 1)
        Xs = store.states(0, nst + 1)
    finally:
        store.close()

    V = np.einsum("kij,kjl->kil", Qs, Cs)
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    t_ck = cfg.sign * (ntr + np.arange(nst + 1)) * tau

    if sub == per:
        times, states, vecs = t_ck, Xs, V
    else:
        nsub = per // sub
        times = cfg.sign * (ntr * tau + sub * cfg.step * np.arange(nst * nsub + 1))
        states = np.empty((nst * nsub + 1, n))
        vecs = np.empty((nst * nsub + 1, n, m))
        eng = engine(sys)
        scheme = SCHEMES[cfg.scheme]
        lognorm = np.empty((nsub, m))
        for k in range(nst):
            a = k * nsub
            states[a], vecs[a] = Xs[k], V[k]
            xk, Yk = Xs[k].copy(), np.ascontiguousarray(V[k])
            eng.evolve_samples(cfg.sign, scheme, xk, Yk, cfg.step, sub, nsub - 1,
                               states[a + 1:a + nsub], vecs[a + 1:a + nsub], True, lognorm)
        states[-1], vecs[-1] = Xs[-1], V[-1]
    for k in range(vecs.shape[0]):
        vecs[k] = canonical_sign(vecs[k])

    rates = logdiag[:nst] / tau
    ex = rates.mean(axis=0)
    err = batch_means(rates)[1] if nst >= 10 else np.full(m, np.nan)
    flags = degenerate_mask(ex, err)
    notes = []
    if flags.any():
        idx = [int(j) for j in np.flatnonzero(flags)]
        notes.append(f"near-degenerate exponents at indices {idx}: {np.round(ex[idx], 6).tolist()}; "
                     "their CLVs are not trustworthy")
        warnings.warn(notes[-1], DegenerateSpectrumWarning, stacklevel=2)
    return ClvSeries(times=times, states=states, vectors=vecs, exponents=ex, stderr=err, degenerate=flags,
                     qr_interval=tau, warnings=notes)


def _growth(sys, x, v, cfg, t_probe, chunk):
    per = steps_in(chunk, cfg.step, "probe chunk")
    nchunk = steps_in(t_probe, chunk, "t_probe")
    Y = np.ascontiguousarray(np.asarray(v, dtype=float).reshape(-1, 1) / np.linalg.norm(v))
    X = np.empty((nchunk, sys.dim))
    F = np.empty((nchunk, sys.dim, 1))
    logs = np.empty((nchunk, 1))
    status, done = engine(sys).evolve_samples(cfg.sign, SCHEMES[cfg.scheme], as_state(x, sys.dim).copy(), Y,
                                              cfg.step, per, nchunk, X, F, True, logs)
    if status != K.STATUS_OK:
        raise IntegrationError("probe integration failed", time=cfg.sign * done * chunk)
    return float(logs.sum())


def clv_exponent_check(sys, clv, cfg: IntegratorConfig, t_probe, index=0, chunk=None):
    """(forward, backward) estimates ln||dx(+-t)|| / (+-t) for one vector.

    ``clv`` is a ClvSample (column ``index`` is used) or a (state, vector)
    pair. For a covariant vector both estimates approach the same exponent.
    """
    if isinstance(clv, ClvSample):
        x, v = clv.state, clv.vectors[:, index]
    else:
        x, v = clv
    if chunk is None:
        chunk = min(float(t_probe), 1.0)
    fwd = IntegratorConfig(cfg.scheme, cfg.step, "forward")
    lam_f = _growth(sys, x, v, fwd, t_probe, chunk) / t_probe
    lam_b = _growth(sys, x, v, fwd.reversed(), t_probe, chunk) / (-t_probe)
    return lam_f, lam_b
