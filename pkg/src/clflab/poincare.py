"""Poincaré sections with the top covariant vector projected onto the section plane."""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.spatial import cKDTree

from . import _kernels as K
from .core import ContractViolation, IntegrationError, SystemDefinition, as_state
from .integrate import SCHEMES, IntegratorConfig, TangentTrajectory, engine, step_pair, steps_in

PLANE_TOL = 1e-10
CHUNK_STEPS = 100_000


@dataclass(frozen=True)
class SectionSpec:
    """Plane x[index] = value crossed in ``direction`` (+1: increasing).

    The default is x = 0 with px > 0 for (x, y, px, py) states, viewed in
    (y, py).
    """

    index: int = 0
    value: float = 0.0
    direction: int = 1
    coords: tuple = (1, 3)

    def __post_init__(self):
        if self.direction not in (1, -1):
            raise ContractViolation(f"direction must be +1 or -1, got {self.direction}")
        if len(self.coords) != 2:
            raise ContractViolation("need exactly two projection coordinates")

    def check(self, dim):
        if not 0 <= self.index < dim or any(not 0 <= c < dim for c in self.coords):
            raise ContractViolation(f"section indices out of range for dim {dim}")
        if self.index in self.coords:
            raise ContractViolation("the plane coordinate cannot be a projection coordinate")

    def plane(self, x):
        return np.asarray(x)[..., self.index] - self.value


@dataclass
class SectionPoint:
    orbit_id: int
    time: float
    state: np.ndarray
    coords: np.ndarray   # (2,)
    vector: np.ndarray   # (2,) unit, projected top CLV
    label: str = "lambda_1"


@dataclass
class Bracket:
    t_lo: float
    x_lo: np.ndarray
    t_hi: float
    x_hi: np.ndarray
    frame_lo: np.ndarray | None = None


@dataclass
class OrbitSection:
    orbit_id: int
    initial_state: np.ndarray
    points: list = field(default_factory=list)
    exponent: float = float("nan")   # finite-time top exponent over the scan
    error: str | None = None


def _directed(a, b, direction):
    return (a < 0 <= b) if direction > 0 else (a > 0 >= b)


def detect_crossings(trajectory, spec: SectionSpec):
    """Brackets (t_lo, t_hi) around every directed crossing of the plane."""
    if isinstance(trajectory, TangentTrajectory):
        t, X = trajectory.times, trajectory.states
    else:
        t, X = (np.asarray(a, dtype=float) for a in trajectory)
    if X.ndim == 1:
        X = X[:, None]
    s = spec.plane(X) if X.shape[1] > spec.index else X[:, 0] - spec.value
    a, b = s[:-1], s[1:]
    hit = (a < 0) & (b >= 0) if spec.direction > 0 else (a > 0) & (b <= 0)
    return [(float(t[k]), float(t[k + 1])) for k in np.flatnonzero(hit)]


def refine_crossing(sys: SystemDefinition, bracket: Bracket, spec: SectionSpec, cfg: IntegratorConfig):
    """State (and tangent frame) on the plane inside a bracket.

    The plane coordinate after a single sub-step of length tau from the left
    state is a smooth function of tau; its root is found to
    |plane| < 1e-10 and the frame is pushed by the same sub-step.
    Returns (time, state, frame or None).
    """
    x0 = as_state(bracket.x_lo, sys.dim)
    frame = bracket.frame_lo
    a = float(spec.plane(x0))
    b = float(spec.plane(bracket.x_hi))
    if b == 0:
        y = None if frame is None else step_pair(sys, x0, frame, cfg, h=bracket.t_hi - bracket.t_lo)[1]
        return bracket.t_hi, np.array(bracket.x_hi, dtype=float), y
    if a == 0:
        return bracket.t_lo, x0.copy(), None if frame is None else np.array(frame, dtype=float)
    if not _directed(a, b, spec.direction) and not (a * b < 0):
        raise ContractViolation(f"bracket has no sign change (plane {a:.3g} -> {b:.3g})")
    span = bracket.t_hi - bracket.t_lo
    fwd = IntegratorConfig(cfg.scheme, cfg.step, "forward" if span > 0 else "backward")
    h_full = abs(span)

    def g(tau):
        return float(spec.plane(step_pair(sys, x0, None, fwd, h=tau)[0])) if tau > 0 else a

    # the bracket endpoint is the stored state, the sub-step root of g is the crossing
    g_hi = g(h_full)
    if g_hi == 0:
        tau = h_full
    elif a * g_hi > 0:
        raise ContractViolation("re-integrated bracket has no sign change")
    else:
        tau = brentq(g, 0.0, h_full, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    x, y = step_pair(sys, x0, frame, fwd, h=tau)
    y = None if frame is None else y
    if abs(spec.plane(x)) >= PLANE_TOL:
        raise IntegrationError(f"crossing refinement stalled at |plane| = {abs(spec.plane(x)):.3g}",
                               time=bracket.t_lo, state=x0)
    return bracket.t_lo + np.sign(span) * tau, x, y


def project_along_flow(sys, x, v, spec: SectionSpec):
    """Tangent vector moved along F onto the plane, in section coordinates, unit length."""
    F = sys.field(x)
    if F[spec.index] == 0:
        raise ContractViolation("flow is tangent to the section")
    w = v - (v[spec.index] / F[spec.index]) * F
    p = w[list(spec.coords)]
    nrm = np.linalg.norm(p)
    if nrm == 0:
        raise ContractViolation("projected vector vanishes")
    return p / nrm


def orbit_section(sys, spec: SectionSpec, x0, cfg: IntegratorConfig, t_span, t_align=200.0, seed=0,
                  orbit_id=0, renorm_every=None) -> OrbitSection:
    """Crossings of one orbit with the top covariant vector projected at each.

    A seeded random tangent vector is pushed forward for ``t_align`` so it
    settles on the most expanding direction; then the orbit is scanned for
    ``t_span`` and the log growth of the vector over the scan gives the
    finite-time top exponent.
    """
    cfg.check(sys)
    spec.check(sys.dim)
    out = OrbitSection(orbit_id, as_state(x0, sys.dim).copy())
    x = out.initial_state.copy()
    v = np.random.default_rng(seed).standard_normal(sys.dim)
    Y = np.ascontiguousarray((v / np.linalg.norm(v))[:, None])
    eng = engine(sys)
    scheme = SCHEMES[cfg.scheme]
    # renormalize about once per time unit
    per = renorm_every or max(1, int(round(1.0 / cfg.step)))

    n_align = int(round(t_align / cfg.step))
    nblk = max(1, n_align // per) if n_align else 0
    if nblk:
        X_s, Y_s, ln = np.empty((nblk, sys.dim)), np.empty((nblk, sys.dim, 1)), np.empty((nblk, 1))
        status, done = eng.evolve_samples(cfg.sign, scheme, x, Y, cfg.step, n_align // nblk, nblk, X_s, Y_s, True, ln)
        if status != K.STATUS_OK:
            out.error = f"alignment integration failed near t={done * (n_align // nblk) * cfg.step:.6g}"
            return out

    nsteps = steps_in(t_span, cfg.step, "t_span")
    loggrowth = 0.0
    t0 = 0.0
    done_steps = 0
    while done_steps < nsteps:
        chunk = min(CHUNK_STEPS, nsteps - done_steps)
        cap = chunk // 2 + 1
        t_lo, X_lo, X_hi = np.empty(cap), np.empty((cap, sys.dim)), np.empty((cap, sys.dim))
        Y_lo = np.empty((cap, sys.dim, 1))
        status, steps, count, lg = eng.section_scan(cfg.sign, scheme, x, Y, cfg.step, chunk, spec.index,
                                                    spec.value, spec.direction, per, t_lo, X_lo, Y_lo, X_hi)
        for k in range(count):
            br = Bracket(t0 + t_lo[k], X_lo[k], t0 + t_lo[k] + cfg.step, X_hi[k], Y_lo[k])
            try:
                t, xc, yc = refine_crossing(sys, br, spec, cfg)
                vec = project_along_flow(sys, xc, yc[:, 0], spec)
            except (ContractViolation, IntegrationError) as exc:
                out.error = f"crossing at t~{br.t_lo:.6g}: {exc}"
                continue
            out.points.append(SectionPoint(orbit_id, float(t), xc, xc[list(spec.coords)].copy(), vec))
        if status != K.STATUS_OK:
            out.error = f"integration failed near t={t0 + steps * cfg.step:.6g}"
            break
        loggrowth += float(lg[0])
        done_steps += chunk
        t0 += chunk * cfg.step
    if done_steps:
        out.exponent = loggrowth / (done_steps * cfg.step)
    return out


def section_portrait(sys, spec: SectionSpec, ics, cfg: IntegratorConfig, t_span, t_align=200.0, seed=0, jobs=1):
    """One OrbitSection per initial condition, in input order.

    Failures are recorded on the orbit (``error``) and do not stop the others.
    """
    ics = [np.asarray(x, dtype=float) for x in ics]
    if not ics:
        raise ContractViolation("no initial conditions")
    seeds = np.random.SeedSequence(seed).generate_state(len(ics))

    def run(i):
        try:
            return orbit_section(sys, spec, ics[i], cfg, t_span, t_align, int(seeds[i]), i)
        except IntegrationError as exc:
            return OrbitSection(i, ics[i], error=str(exc))

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            return list(pool.map(run, range(len(ics))))
    return [run(i) for i in range(len(ics))]


def write_section_csv(path, orbits) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["orbit_id", "t", "q1", "q2", "v1", "v2", "exponent_label"])
        for orb in orbits:
            for p in orb.points:
                vals = (p.time, p.coords[0], p.coords[1], p.vector[0], p.vector[1])
                w.writerow([int(p.orbit_id), *(repr(float(v)) for v in vals), p.label])


# curve diagnostics on the section


def curve_thickness(points, k=8) -> float:
    """Median ratio of the minor to major local spread over k-neighbourhoods.

    Near 0 for points on a smooth curve, of order 1 for points filling an area.
    """
    P = np.asarray(points, dtype=float)
    if len(P) <= k:
        return float("nan")
    _, idx = cKDTree(P).query(P, k=k + 1)
    s = np.array([np.linalg.svd(P[nb] - P[nb].mean(axis=0), compute_uv=False) for nb in idx])
    return float(np.median(s[:, 1] / s[:, 0]))


def curve_tangents(points, k=6) -> np.ndarray:
    """Unit tangent of the section curve at each point from its k nearest neighbours."""
    P = np.asarray(points, dtype=float)
    _, idx = cKDTree(P).query(P, k=min(k + 1, len(P)))
    T = np.empty_like(P)
    for i, nb in enumerate(idx):
        D = P[nb] - P[nb].mean(axis=0)
        T[i] = np.linalg.svd(D, full_matrices=False)[2][0]
    return T


def endpoint_fraction(points, k=6) -> float:
    """Fraction of points whose neighbours all lie on one side along the local tangent."""
    P = np.asarray(points, dtype=float)
    T = curve_tangents(P, k)
    _, idx = cKDTree(P).query(P, k=min(k + 1, len(P)))
    s = np.einsum("ikj,ij->ik", P[idx[:, 1:]] - P[:, None, :], T)
    one_sided = np.all(s > 0, axis=1) | np.all(s < 0, axis=1)
    return float(one_sided.mean())


def correlation_dimension(points, scales=(0.01, 0.1), n=6) -> float:
    """Slope of log C(r) against log r, C(r) the number of point pairs closer than r.

    r runs over ``scales`` times the diameter of the point set. About 1 for
    points on curves (island chains included), about 2 for an orbit filling
    an area. NaN for a set of zero extent.
    """
    P = np.asarray(points, dtype=float)
    D = float(np.ptp(P, axis=0).max()) if len(P) else 0.0
    if D == 0.0:
        return float("nan")
    r = D * np.geomspace(scales[0], scales[1], n)
    tree = cKDTree(P)
    C = tree.count_neighbors(tree, r) - len(P)
    return float(np.polyfit(np.log(r), np.log(np.maximum(C, 1)), 1)[0])


def is_closed_curve(points, max_dimension=1.4, min_points=500) -> bool:
    """True when the section points lie on curves rather than filling an area.

    A one-dimensional orbit closure of an area-preserving return map is an
    invariant circle or a chain of islands, each a closed curve. Below
    ``min_points`` the estimate is unreliable and the answer is False.
    """
    P = np.asarray(points, dtype=float)
    if len(P) < min_points:
        return False
    return bool(correlation_dimension(P) < max_dimension)


def alignment_angles(points, vectors, k=6) -> np.ndarray:
    """Angle in [0, pi/2] between each vector and the local curve tangent."""
    T = curve_tangents(points, k)
    V = np.asarray(vectors, dtype=float)
    c = np.abs(np.einsum("ij,ij->i", T, V)) / np.linalg.norm(V, axis=1)
    return np.arccos(np.clip(c, 0.0, 1.0))
