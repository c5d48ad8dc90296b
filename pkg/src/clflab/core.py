"""System definitions and constant-metric tangent-space geometry."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _kernels as K


class ContractViolation(ValueError):
    """Raised when an operation's input violates its documented precondition."""


class IntegrationError(RuntimeError):
    """Integration produced a non-finite state or an unusable tangent frame.

    ``time`` is the time of the last valid state, ``state`` that state.
    """

    def __init__(self, message, time=None, state=None):
        super().__init__(message)
        self.time = time
        self.state = None if state is None else np.array(state, dtype=float)


@dataclass(frozen=True, eq=False)
class SystemDefinition:
    """An autonomous flow dx/dt = F(x) with its Jacobian.

    Built-in systems carry ``kernel = (kind, params)`` so the compiled
    integrators can evaluate them; user systems leave it ``None`` and run
    through the callables (slower, same algorithms).

    Hamiltonian systems use the layout (q_1..q_d, p_1..p_d) and must be
    separable: dq/dt depends on p only and dp/dt on q only.
    """

    dim: int
    field_eval: Callable[[np.ndarray], np.ndarray]
    jacobian_eval: Callable[[np.ndarray], np.ndarray]
    is_hamiltonian: bool = False
    invariant_eval: Optional[Callable[[np.ndarray], float]] = None
    name: str = "custom"
    parameters: dict = field(default_factory=dict)
    kernel: Optional[tuple] = None

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ContractViolation(f"dim must be >= 1, got {self.dim}")
        if self.is_hamiltonian and self.dim % 2:
            raise ContractViolation("Hamiltonian systems need an even dimension (q, p)")

    def field(self, x) -> np.ndarray:
        return np.asarray(self.field_eval(as_state(x, self.dim)), dtype=float)

    def jacobian(self, x) -> np.ndarray:
        return np.asarray(self.jacobian_eval(as_state(x, self.dim)), dtype=float)

    def divergence(self, x) -> float:
        return float(np.trace(self.jacobian(x)))

    def evaluate_many(self, X):
        """(F, J) at every row of X: shapes (k, n) and (k, n, n)."""
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
        if X.shape[1] != self.dim:
            raise ContractViolation(f"states have {X.shape[1]} components, system dim is {self.dim}")
        F = np.empty(X.shape)
        J = np.empty((X.shape[0], self.dim, self.dim))
        if self.kernel is not None:
            kind, params = self.kernel
            K.bound(kind).eval_batch(params, 1.0, X, F, J)
        else:
            for k, x in enumerate(X):
                F[k] = self.field_eval(x)
                J[k] = self.jacobian_eval(x)
        return F, J


def as_state(x, dim=None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ContractViolation(f"state must be a 1-d vector, got shape {x.shape}")
    if dim is not None and x.shape[0] != dim:
        raise ContractViolation(f"state has {x.shape[0]} components, system dim is {dim}")
    if not np.all(np.isfinite(x)):
        raise ContractViolation("state has non-finite components")
    return x


def kernel_system(kind: int, params, dim: int, **kwargs) -> SystemDefinition:
    """Wrap a compiled built-in field as a SystemDefinition."""
    params = np.ascontiguousarray(params, dtype=float)

    def f(x):
        out = np.empty(dim)
        K.eval_field(kind, params, 1.0, np.ascontiguousarray(x, dtype=float), out)
        return out

    def jac(x):
        out = np.empty((dim, dim))
        K.eval_jacobian(kind, params, 1.0, np.ascontiguousarray(x, dtype=float), out)
        return out

    return SystemDefinition(dim=dim, field_eval=f, jacobian_eval=jac, kernel=(kind, params), **kwargs)


def canonical_sign(V, tol=1e-12):
    """Flip columns so that the first component above ``tol``*norm is positive."""
    V = np.array(V, dtype=float)
    cols = V if V.ndim == 2 else V[:, None]
    for j in range(cols.shape[1]):
        c = cols[:, j]
        big = np.flatnonzero(np.abs(c) > tol * max(np.linalg.norm(c), 1e-300))
        if big.size and c[big[0]] < 0:
            cols[:, j] = -c
    return cols if V.ndim == 2 else cols[:, 0]


def metric_tensor(g=None, dim: int | None = None) -> np.ndarray:
    """Validate a constant metric; ``None`` means the Euclidean identity."""
    if g is None:
        if dim is None:
            raise ContractViolation("need dim for the default metric")
        return np.eye(dim)
    g = np.asarray(g, dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ContractViolation(f"metric must be square, got shape {g.shape}")
    if dim is not None and g.shape[0] != dim:
        raise ContractViolation(f"metric side {g.shape[0]} != dim {dim}")
    if not np.all(np.isfinite(g)) or not np.allclose(g, g.T, rtol=0, atol=1e-14 * max(1.0, np.abs(g).max())):
        raise ContractViolation("metric must be finite and symmetric")
    try:
        np.linalg.cholesky(g)
    except np.linalg.LinAlgError:
        raise ContractViolation("metric is not positive definite") from None
    return g


def tangent_norm(v, g=None) -> float:
    """sqrt(v^T g v)."""
    v = np.asarray(v, dtype=float)
    g = metric_tensor(g, v.shape[0])
    return float(np.sqrt(max(v @ g @ v, 0.0)))


def metric_lie_derivative(sys: SystemDefinition, g, x) -> np.ndarray:
    """Lie derivative of a constant metric along F: g J + J^T g."""
    g = metric_tensor(g, sys.dim)
    J = sys.jacobian(x)
    return g @ J + J.T @ g


def quadratic_form_norm(a, g=None) -> float:
    """Norm of a symmetric 2-tensor, sqrt(a_ij a_kl g^ik g^jl).

    With the identity metric this is the Frobenius norm.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractViolation(f"quadratic form must be square, got {a.shape}")
    if not np.allclose(a, a.T, rtol=1e-12, atol=1e-12 * max(1.0, np.abs(a).max(initial=0.0))):
        raise ContractViolation("quadratic form must be symmetric")
    g = metric_tensor(g, a.shape[0])
    ginv = np.linalg.inv(g)
    m = ginv @ a
    # a_ij a_kl g^ik g^jl = tr(g^-1 a g^-1 a)
    return float(np.sqrt(max(np.trace(m @ m), 0.0)))


def finite_difference_jacobian(field_eval, x, step=1e-6) -> np.ndarray:
    """Central-difference Jacobian of ``field_eval`` at ``x``."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    J = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = step
        J[:, j] = (np.asarray(field_eval(x + e)) - np.asarray(field_eval(x - e))) / (2 * step)
    return J


def jacobian_error(sys: SystemDefinition, probes, step=1e-6) -> float:
    """Largest relative mismatch between the analytic and central-difference Jacobians."""
    worst = 0.0
    for x in np.atleast_2d(probes):
        Ja = sys.jacobian(x)
        Jf = finite_difference_jacobian(sys.field_eval, x, step)
        worst = max(worst, np.linalg.norm(Ja - Jf) / max(np.linalg.norm(Ja), 1.0))
    return float(worst)


def validate_jacobian(sys: SystemDefinition, probes, rtol=1e-5, step=1e-6) -> None:
    err = jacobian_error(sys, probes, step)
    if err > rtol:
        raise ContractViolation(f"analytic Jacobian of {sys.name} disagrees with finite differences (rel. err {err:.3g})")


def user_system(dim, field_eval, jacobian_eval=None, fd_step=1e-6, **kwargs) -> SystemDefinition:
    """A system from plain Python callables.

    Without ``jacobian_eval`` a central-difference Jacobian is used; expect
    roughly 1e-10 absolute error per entry and twice the field cost per column.
    """
    if jacobian_eval is None:
        def jacobian_eval(x):
            return finite_difference_jacobian(field_eval, x, fd_step)
    return SystemDefinition(dim=dim, field_eval=field_eval, jacobian_eval=jacobian_eval, **kwargs)
