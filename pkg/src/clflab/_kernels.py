"""Compiled inner loops.

Built-in systems are identified by an integer ``kind`` plus a flat ``params``
array so a single compiled kernel serves every built-in system. ``sign`` is
+1.0 for forward time and -1.0 for the time-reversed field.
"""
import numpy as np

from ._jit import literally, njit

KIND_ZERO = 0
KIND_LINEAR = 1
KIND_HENON_HEILES = 2

SCHEME_RK4 = 0
SCHEME_LEAPFROG = 1

STATUS_OK = 0
STATUS_NONFINITE = 1
STATUS_OVERFLOW = 2
STATUS_COLLAPSE = 3

FRAME_OVERFLOW = 1e150
COLLAPSE_TOL = 1e-300


@njit
def eval_field(kind, params, sign, x, out):
    n = x.shape[0]
    if kind == KIND_LINEAR:
        for i in range(n):
            s = 0.0
            for j in range(n):
                s += params[i * n + j] * x[j]
            out[i] = sign * s
    elif kind == KIND_HENON_HEILES:
        lam = params[0]
        q1 = x[0]
        q2 = x[1]
        out[0] = sign * x[2]
        out[1] = sign * x[3]
        out[2] = sign * (-q1 - 2.0 * lam * q1 * q2)
        out[3] = sign * (-q2 - lam * (q1 * q1 - q2 * q2))
    else:
        for i in range(n):
            out[i] = 0.0


@njit
def eval_jacobian(kind, params, sign, x, out):
    n = x.shape[0]
    if kind == KIND_LINEAR:
        for i in range(n):
            for j in range(n):
                out[i, j] = sign * params[i * n + j]
    elif kind == KIND_HENON_HEILES:
        lam = params[0]
        for i in range(4):
            for j in range(4):
                out[i, j] = 0.0
        out[0, 2] = sign
        out[1, 3] = sign
        out[2, 0] = sign * (-1.0 - 2.0 * lam * x[1])
        out[2, 1] = sign * (-2.0 * lam * x[0])
        out[3, 0] = sign * (-2.0 * lam * x[0])
        out[3, 1] = sign * (-1.0 + 2.0 * lam * x[1])
    else:
        for i in range(n):
            for j in range(n):
                out[i, j] = 0.0


@njit
def _matmul_into(a, b, out):
    n = a.shape[0]
    k = a.shape[1]
    m = b.shape[1]
    for i in range(n):
        for j in range(m):
            s = 0.0
            for p in range(k):
                s += a[i, p] * b[p, j]
            out[i, j] = s


@njit
def rk4_step(kind, params, sign, x, Y, h, kx, kY, xt, Yt, J):
    """Classical RK4 on the state and tangent columns together, in place."""
    n = x.shape[0]
    m = Y.shape[1]
    # stage 1
    eval_field(kind, params, sign, x, kx[0])
    eval_jacobian(kind, params, sign, x, J)
    _matmul_into(J, Y, kY[0])
    # stages 2, 3
    for st in range(1, 3):
        for i in range(n):
            xt[i] = x[i] + 0.5 * h * kx[st - 1, i]
            for j in range(m):
                Yt[i, j] = Y[i, j] + 0.5 * h * kY[st - 1, i, j]
        eval_field(kind, params, sign, xt, kx[st])
        eval_jacobian(kind, params, sign, xt, J)
        _matmul_into(J, Yt, kY[st])
    # stage 4
    for i in range(n):
        xt[i] = x[i] + h * kx[2, i]
        for j in range(m):
            Yt[i, j] = Y[i, j] + h * kY[2, i, j]
    eval_field(kind, params, sign, xt, kx[3])
    eval_jacobian(kind, params, sign, xt, J)
    _matmul_into(J, Yt, kY[3])
    c = h / 6.0
    for i in range(n):
        x[i] += c * (kx[0, i] + 2.0 * kx[1, i] + 2.0 * kx[2, i] + kx[3, i])
        for j in range(m):
            Y[i, j] += c * (kY[0, i, j] + 2.0 * kY[1, i, j] + 2.0 * kY[2, i, j] + kY[3, i, j])


@njit
def leapfrog_step(kind, params, sign, x, Y, h, f, J):
    """Kick-drift-kick for a separable field with layout (q, p).

    The tangent columns are advanced with the exact derivative of the
    same map, so the pair stays symplectic.
    """
    n = x.shape[0]
    d = n // 2
    m = Y.shape[1]
    for phase in range(3):
        eval_field(kind, params, sign, x, f)
        if m > 0:
            eval_jacobian(kind, params, sign, x, J)
        if phase == 1:
            # drift: dq/dt depends on p only
            for i in range(d):
                x[i] += h * f[i]
            for j in range(m):
                for i in range(d):
                    s = 0.0
                    for k in range(d):
                        s += J[i, d + k] * Y[d + k, j]
                    Y[i, j] += h * s
        else:
            # half kick: dp/dt depends on q only
            for i in range(d):
                x[d + i] += 0.5 * h * f[d + i]
            for j in range(m):
                for i in range(d):
                    s = 0.0
                    for k in range(d):
                        s += J[d + i, k] * Y[k, j]
                    Y[d + i, j] += 0.5 * h * s


@njit
def _finite(x):
    for i in range(x.shape[0]):
        if not np.isfinite(x[i]):
            return False
    return True


@njit
def _copy1(src, dst):
    for i in range(src.shape[0]):
        dst[i] = src[i]


@njit
def _copy2(src, dst):
    for i in range(src.shape[0]):
        for j in range(src.shape[1]):
            dst[i, j] = src[i, j]


@njit
def _max_abs2(Y):
    """Largest |entry| of a 2-d array; inf or nan propagate as inf."""
    big = 0.0
    for i in range(Y.shape[0]):
        for j in range(Y.shape[1]):
            a = abs(Y[i, j])
            if not a <= big:
                big = a if a == a else np.inf
    return big


@njit
def workspace(n, m):
    return (np.empty((4, n)), np.empty((4, n, m)), np.empty(n), np.empty((n, m)),
            np.empty((n, n)), np.empty(n), np.empty((n, m)))


@njit
def advance_ws(kind, params, sign, scheme, x, Y, h, nsteps, ws):
    kx, kY, xt, Yt, J, xprev, Yprev = ws
    n, m = Y.shape
    for s in range(nsteps):
        _copy1(x, xprev)
        _copy2(Y, Yprev)
        if scheme == SCHEME_LEAPFROG:
            leapfrog_step(kind, params, sign, x, Y, h, xt, J)
        else:
            rk4_step(kind, params, sign, x, Y, h, kx, kY, xt, Yt, J)
        if not _finite(x):
            _copy1(xprev, x)
            _copy2(Yprev, Y)
            return STATUS_NONFINITE, s
    big = _max_abs2(Y)
    if not np.isfinite(big):
        return STATUS_NONFINITE, nsteps
    if big > FRAME_OVERFLOW:
        return STATUS_OVERFLOW, nsteps
    return STATUS_OK, nsteps


@njit
def advance(kind, params, sign, scheme, x, Y, h, nsteps):
    """Take ``nsteps`` steps in place.

    Returns (status, steps_done). On a non-finite state the last valid
    state is restored and ``steps_done`` counts the good steps.
    """
    literally(kind)
    literally(scheme)
    n, m = Y.shape
    return advance_ws(kind, params, sign, scheme, x, Y, h, nsteps, workspace(n, m))


@njit
def mgs_qr(A, Q, R):
    """Modified Gram-Schmidt, R with positive diagonal.

    Returns False if a column collapses (|R_jj| < 1e-300).
    """
    n, m = A.shape
    Q[:, :] = A
    for i in range(m):
        for j in range(m):
            R[i, j] = 0.0
    for j in range(m):
        s = 0.0
        for i in range(n):
            s += Q[i, j] * Q[i, j]
        r = np.sqrt(s)
        if r < COLLAPSE_TOL:
            return False
        R[j, j] = r
        for i in range(n):
            Q[i, j] /= r
        for k in range(j + 1, m):
            d = 0.0
            for i in range(n):
                d += Q[i, j] * Q[i, k]
            R[j, k] = d
            for i in range(n):
                Q[i, k] -= d * Q[i, j]
    return True


@njit
def qr_sweep(kind, params, sign, scheme, x, Y, h, steps_per_qr, nqr, logdiag, store, store_from):
    """Advance and re-orthonormalize ``nqr`` times.

    ``logdiag[k]`` receives log R_jj of interval k. When ``store`` is non-empty,
    checkpoint ``store_from + k`` receives (x, Q, R) after interval k, packed
    as [x (n) | Q (n*m, row-major) | R (m*m, row-major)].
    Returns (status, intervals_done).
    """
    literally(kind)
    literally(scheme)
    n, m = Y.shape
    Q = np.empty((n, m))
    R = np.empty((m, m))
    ws = workspace(n, m)
    do_store = store.shape[0] > 0
    for k in range(nqr):
        status, _ = advance_ws(kind, params, sign, scheme, x, Y, h, steps_per_qr, ws)
        if status == STATUS_NONFINITE:
            return status, k
        if not mgs_qr(Y, Q, R):
            return STATUS_COLLAPSE, k
        Y[:, :] = Q
        for j in range(m):
            logdiag[k, j] = np.log(R[j, j])
        if do_store:
            row = store[store_from + k]
            for i in range(n):
                row[i] = x[i]
            for i in range(n):
                for j in range(m):
                    row[n + i * m + j] = Q[i, j]
            off = n + n * m
            for i in range(m):
                for j in range(m):
                    row[off + i * m + j] = R[i, j]
    return STATUS_OK, nqr


@njit
def ginelli_backward(store, n, m, C, first, last, Cs, keep_from, lognorms):
    """Backward iteration C <- R^-1 C from checkpoint ``last`` down to ``first``.

    ``C`` holds the coefficients at ``last`` on entry. Checkpoints at index
    >= ``keep_from`` are not kept; checkpoint ``k < keep_from`` writes its
    normalized coefficients to ``Cs[k - first]``. ``lognorms[k - first]``
    receives the log column growth of the step that produced checkpoint k.
    """
    off = n + n * m
    Cn = np.empty((m, m))
    for k in range(last, first - 1, -1):
        if k < keep_from:
            Cs[k - first, :, :] = C
        if k == first:
            break
        row = store[k]
        # solve R_k Cn = C by back substitution, column by column
        for j in range(m):
            for i in range(m - 1, -1, -1):
                s = C[i, j]
                for p in range(i + 1, m):
                    s -= row[off + i * m + p] * Cn[p, j]
                Cn[i, j] = s / row[off + i * m + i]
        for j in range(m):
            s = 0.0
            for i in range(m):
                s += Cn[i, j] * Cn[i, j]
            r = np.sqrt(s)
            lognorms[k - 1 - first, j] = np.log(r)
            for i in range(m):
                C[i, j] = Cn[i, j] / r


@njit
def evolve_samples(kind, params, sign, scheme, x, Y, h, steps_per_sample, nsamples, X_out, Y_out, renorm, lognorm):
    """Record ``nsamples`` samples after each block of steps.

    With ``renorm`` every column is rescaled to unit length after each
    sample and its log norm added into ``lognorm[k]``.
    Returns (status, samples_done).
    """
    literally(kind)
    literally(scheme)
    n, m = Y.shape
    ws = workspace(n, m)
    for k in range(nsamples):
        status, _ = advance_ws(kind, params, sign, scheme, x, Y, h, steps_per_sample, ws)
        if status == STATUS_NONFINITE:
            return status, k
        if renorm:
            for j in range(m):
                s = 0.0
                for i in range(n):
                    s += Y[i, j] * Y[i, j]
                r = np.sqrt(s)
                if r > 0.0:
                    lognorm[k, j] = np.log(r)
                    for i in range(n):
                        Y[i, j] /= r
                else:
                    lognorm[k, j] = -np.inf
        elif status == STATUS_OVERFLOW:
            return status, k
        X_out[k, :] = x
        Y_out[k, :, :] = Y
    return STATUS_OK, nsamples


@njit
def section_scan(kind, params, sign, scheme, x, Y, h, nsteps, idx, value, direction,
                 renorm_every, t_lo, X_lo, Y_lo, X_hi):
    """Integrate ``nsteps`` steps and record directed crossings of x[idx] = value.

    For every bracket the left state, left tangent columns (unit length) and
    right state are recorded. Columns are renormalized every ``renorm_every``
    steps; the accumulated log growth per column is returned.
    Returns (status, steps_done, count, loggrowth).
    """
    literally(kind)
    literally(scheme)
    n, m = Y.shape
    cap = t_lo.shape[0]
    loggrowth = np.zeros(m)
    xprev = np.empty(n)
    Yprev = np.empty((n, m))
    count = 0
    ws = workspace(n, m)
    for s in range(nsteps):
        xprev[:] = x
        Yprev[:, :] = Y
        status, _ = advance_ws(kind, params, sign, scheme, x, Y, h, 1, ws)
        if status == STATUS_NONFINITE:
            return status, s, count, loggrowth
        a = xprev[idx] - value
        b = x[idx] - value
        hit = (direction > 0 and a < 0.0 and b >= 0.0) or (direction < 0 and a > 0.0 and b <= 0.0)
        if hit and count < cap:
            t_lo[count] = s * h
            X_lo[count, :] = xprev
            X_hi[count, :] = x
            for j in range(m):
                r = 0.0
                for i in range(n):
                    r += Yprev[i, j] * Yprev[i, j]
                r = np.sqrt(r)
                for i in range(n):
                    Y_lo[count, i, j] = Yprev[i, j] / r
            count += 1
        if (s + 1) % renorm_every == 0 or s == nsteps - 1:
            for j in range(m):
                r = 0.0
                for i in range(n):
                    r += Y[i, j] * Y[i, j]
                r = np.sqrt(r)
                loggrowth[j] += np.log(r)
                for i in range(n):
                    Y[i, j] /= r
    return STATUS_OK, nsteps, count, loggrowth


@njit
def eval_batch(kind, params, sign, X, F_out, J_out):
    """Field and Jacobian at every row of X."""
    literally(kind)
    for k in range(X.shape[0]):
        eval_field(kind, params, sign, X[k], F_out[k])
        eval_jacobian(kind, params, sign, X[k], J_out[k])


class Bound:
    """Kernels with ``kind`` and ``scheme`` frozen in at compile time.

    Calling the generic kernels from Python re-resolves the literal
    arguments on every call (milliseconds); these wrappers do it once.
    """

    def __init__(self, kind, scheme):
        @njit
        def advance_(params, sign, x, Y, h, nsteps):
            return advance(kind, params, sign, scheme, x, Y, h, nsteps)

        @njit
        def qr_sweep_(params, sign, x, Y, h, steps_per_qr, nqr, logdiag, store, store_from):
            return qr_sweep(kind, params, sign, scheme, x, Y, h, steps_per_qr, nqr, logdiag, store, store_from)

        @njit
        def evolve_samples_(params, sign, x, Y, h, steps_per_sample, nsamples, X_out, Y_out, renorm, lognorm):
            return evolve_samples(kind, params, sign, scheme, x, Y, h, steps_per_sample, nsamples,
                                  X_out, Y_out, renorm, lognorm)

        @njit
        def section_scan_(params, sign, x, Y, h, nsteps, idx, value, direction, renorm_every,
                          t_lo, X_lo, Y_lo, X_hi):
            return section_scan(kind, params, sign, scheme, x, Y, h, nsteps, idx, value, direction,
                                renorm_every, t_lo, X_lo, Y_lo, X_hi)

        @njit
        def eval_batch_(params, sign, X, F_out, J_out):
            return eval_batch(kind, params, sign, X, F_out, J_out)

        self.advance = advance_
        self.qr_sweep = qr_sweep_
        self.evolve_samples = evolve_samples_
        self.section_scan = section_scan_
        self.eval_batch = eval_batch_


_BOUND = {}


def bound(kind, scheme=SCHEME_RK4) -> Bound:
    key = (int(kind), int(scheme))
    if key not in _BOUND:
        _BOUND[key] = Bound(*key)
    return _BOUND[key]
