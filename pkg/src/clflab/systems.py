"""Built-in volume-preserving systems with known oracles."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from . import _kernels as K
from .core import ContractViolation, SystemDefinition, canonical_sign, kernel_system


def make_linear(A, *, hamiltonian=False, name="linear") -> SystemDefinition:
    """F(x) = A x for a trace-free matrix A."""
    A = np.array(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ContractViolation(f"A must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ContractViolation("A has non-finite entries")
    if abs(np.trace(A)) >= 1e-12:
        raise ContractViolation(f"A must be trace-free (volume preserving), trace = {np.trace(A):.3g}")
    n = A.shape[0]
    inv = None
    if hamiltonian:
        d = n // 2
        if n % 2 or np.any(A[:d, :d]) or np.any(A[d:, d:]):
            raise ContractViolation("a Hamiltonian linear field must be separable: A = [[0, B], [C, 0]]")
        B, C = A[:d, d:], A[d:, :d]
        if not (np.allclose(B, B.T) and np.allclose(C, C.T)):
            raise ContractViolation("separable linear Hamiltonian needs symmetric blocks")

        def inv(x):
            q, p = x[:d], x[d:]
            return float(0.5 * p @ B @ p - 0.5 * q @ C @ q)

    return kernel_system(K.KIND_LINEAR, A.ravel(), n, is_hamiltonian=hamiltonian, invariant_eval=inv,
                         name=name, parameters={"matrix": A.tolist()})


def linear_oracle(A):
    """Exponents (descending real parts) and unit eigenvectors of A.

    Eigenvectors follow the first-nonzero-component-positive convention and
    are returned as columns; ``None`` when the spectrum is not real.
    """
    A = np.asarray(A, dtype=float)
    w, V = np.linalg.eig(A)
    order = np.argsort(-w.real, kind="stable")
    w, V = w[order], V[:, order]
    exps = w.real.copy()
    if np.any(np.abs(w.imag) > 1e-12):
        return exps, None
    V = V.real
    V = V / np.linalg.norm(V, axis=0)
    return exps, canonical_sign(V)


def make_zero(dim=2) -> SystemDefinition:
    return kernel_system(K.KIND_ZERO, np.zeros(1), dim, is_hamiltonian=dim % 2 == 0,
                         invariant_eval=lambda x: 0.0, name="zero", parameters={"dim": dim})


def make_harmonic(omega=1.0) -> SystemDefinition:
    """(q, p) oscillator, H = (p^2 + omega^2 q^2) / 2."""
    A = [[0.0, 1.0], [-omega * omega, 0.0]]
    sys = make_linear(A, hamiltonian=True, name="harmonic")
    return SystemDefinition(dim=2, field_eval=sys.field_eval, jacobian_eval=sys.jacobian_eval,
                            is_hamiltonian=True,
                            invariant_eval=lambda x: 0.5 * (x[1] ** 2 + omega ** 2 * x[0] ** 2),
                            name="harmonic", parameters={"omega": omega}, kernel=sys.kernel)


def make_rotation() -> SystemDefinition:
    """F = (-x2, x1): antisymmetric Jacobian, zero metric Lie derivative."""
    return make_linear([[0.0, -1.0], [1.0, 0.0]], name="rotation")


def henon_heiles_potential(x, y, coupling):
    return 0.5 * (x * x + y * y) + coupling * (x * x * y - y ** 3 / 3.0)


def henon_heiles_energy(state, coupling) -> float:
    x, y, px, py = state
    return float(0.5 * (px * px + py * py) + henon_heiles_potential(x, y, coupling))


# (y, py) on the section x = 0; chaotic at coupling 1, energy 1/8
DEFAULT_SECTION_POINT = (-0.1, 0.0)


@dataclass(frozen=True)
class HenonHeilesSpec:
    """H = (px^2 + py^2)/2 + (x^2 + y^2)/2 + coupling (x^2 y - y^3/3), state (x, y, px, py)."""

    coupling: float
    energy: float

    def __post_init__(self):
        if not np.isfinite(self.energy) or self.energy < 0:
            raise ContractViolation(f"energy must be >= 0, got {self.energy}")

    def system(self) -> SystemDefinition:
        return make_henon_heiles(self.coupling, self.energy)

    def state(self, y, py, x=0.0, px_sign=1.0) -> np.ndarray:
        """State on the energy surface with px solved from H."""
        k2 = 2.0 * (self.energy - henon_heiles_potential(x, y, self.coupling)) - py * py
        if k2 < 0:
            raise ContractViolation(
                f"(x={x}, y={y}, py={py}) is energetically inaccessible at H={self.energy}: "
                f"px^2 would be {k2:.3g}")
        return np.array([x, y, np.copysign(np.sqrt(k2), px_sign), py], dtype=float)

    def default_state(self) -> np.ndarray:
        """The documented default initial condition: y = -0.1, py = 0 on x = 0, px > 0."""
        return self.state(*DEFAULT_SECTION_POINT)

    def y_range(self):
        """Interval of y on x = 0 around the origin where the potential is below the energy."""
        E, lam = self.energy, self.coupling
        if E == 0:
            return 0.0, 0.0
        if lam == 0:
            r = np.sqrt(2 * E)
            return -r, r
        # saddle of V(0, y) at y = 1/lam with height 1/(6 lam^2)
        ys = 1.0 / abs(lam)
        if E >= 1.0 / (6 * lam * lam):
            raise ContractViolation(f"energy {E} is at or above the escape threshold {1 / (6 * lam * lam):.6g}")
        v = lambda y: henon_heiles_potential(0.0, y, lam) - E  # noqa: E731
        s = np.sign(lam)
        a = brentq(v, 0.0, s * ys, xtol=1e-15) if s > 0 else brentq(v, s * ys, 0.0, xtol=1e-15)
        far = -s * np.sqrt(2 * E)
        while v(far) < 0:
            far *= 2
        b = brentq(v, far, 0.0, xtol=1e-15) if s > 0 else brentq(v, 0.0, far, xtol=1e-15)
        a, b = _inside(v, a), _inside(v, b)
        return min(a, b), max(a, b)


def _inside(v, y):
    # step towards 0 until the endpoint is accessible
    while v(y) > 0:
        y = np.nextafter(y, 0.0)
    return float(y)


def make_henon_heiles(coupling=1.0, energy=None) -> SystemDefinition:
    """Hénon-Heiles Hamiltonian field, state layout (x, y, px, py)."""
    params = {"coupling": float(coupling)}
    if energy is not None:
        params["energy"] = float(HenonHeilesSpec(coupling, energy).energy)
    return kernel_system(K.KIND_HENON_HEILES, [float(coupling)], 4, is_hamiltonian=True,
                         invariant_eval=lambda s: henon_heiles_energy(s, coupling),
                         name="henon_heiles", parameters=params)


def sample_energy_surface(spec: HenonHeilesSpec, count: int, seed: int, max_tries=10_000):
    """Seeded states on the section x = 0, px > 0, with H equal to the energy."""
    if count < 1:
        raise ContractViolation(f"count must be >= 1, got {count}")
    if spec.energy == 0:
        return [np.zeros(4) for _ in range(count)]
    rng = np.random.default_rng(seed)
    y_lo, y_hi = spec.y_range()
    p_max = np.sqrt(2 * spec.energy)
    out = []
    for _ in range(count):
        for _ in range(max_tries):
            y = rng.uniform(y_lo, y_hi)
            py = rng.uniform(-p_max, p_max)
            k2 = 2.0 * (spec.energy - henon_heiles_potential(0.0, y, spec.coupling)) - py * py
            if k2 > 0:
                out.append(spec.state(y, py))
                break
        else:
            raise ContractViolation(f"no accessible point found in {max_tries} draws")
    return out


BUILTIN_FACTORIES = {
    "linear": make_linear,
    "henon_heiles": make_henon_heiles,
    "harmonic": make_harmonic,
    "rotation": make_rotation,
    "zero": make_zero,
}
