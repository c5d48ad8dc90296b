"""Command-line front end: ``clflab <command> --config run.cfg --out DIR``.

Config files hold one ``key = value`` per line. Values are read as JSON
when possible (numbers, lists, true/false) and as bare strings otherwise;
``#`` starts a comment. Exit codes: 0 ok, 2 config error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys as _sys
import time
import warnings

import numpy as np

from . import __version__
from . import clf, lyapunov, poincare, systems
from .core import ContractViolation, IntegrationError, metric_tensor
from .integrate import IntegratorConfig, default_config, evolve

EXIT_CONFIG = 2
EXIT_NUMERIC = 3

REQUIRED = object()


class ConfigError(Exception):
    pass


def _num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and np.isfinite(v)


def _pos(v):
    return _num(v) and v > 0


def _nonneg_int(v):
    return isinstance(v, int) and not isinstance(v, bool) and v >= 0


def _matrix(v):
    return isinstance(v, list) and all(isinstance(r, list) and all(_num(e) for e in r) for r in v)


def _vector(v):
    return isinstance(v, list) and all(_num(e) for e in v)


def _vectors(v):
    return isinstance(v, list) and all(_vector(e) for e in v)


def _opt(check):
    return lambda v: v is None or check(v)


SYSTEM_KEYS = {
    "system": (lambda v: v in systems.BUILTIN_FACTORIES, REQUIRED),
    "matrix": (_matrix, None),
    "coupling": (_num, 1.0),
    "energy": (lambda v: _num(v) and v >= 0, None),
    "omega": (_pos, 1.0),
    "dim": (lambda v: _nonneg_int(v) and v >= 1, 2),
    "scheme": (lambda v: v in ("rk4", "leapfrog"), None),
    "step": (_opt(_pos), None),
    "metric": (_opt(_matrix), None),
    "seed": (_nonneg_int, 0),
}
IC_KEYS = {"ic": (_opt(_vector), None)}
SPECTRUM_KEYS = {
    "t_total": (_pos, REQUIRED),
    "qr_interval": (_pos, REQUIRED),
    "t_transient": (_opt(lambda v: _num(v) and v >= 0), None),
    "m": (_opt(lambda v: _nonneg_int(v) and v >= 1), None),
}
CLV_KEYS = {
    "t_transient": (_opt(_pos), None),
    "t_store": (_pos, REQUIRED),
    "t_discard": (_opt(_pos), None),
    "qr_interval": (_pos, REQUIRED),
    "sample_every": (_opt(_pos), None),
    "m": (_opt(lambda v: _nonneg_int(v) and v >= 1), None),
}

COMMAND_KEYS = {
    "spectrum": {**SYSTEM_KEYS, **IC_KEYS, **SPECTRUM_KEYS},
    "clv": {**SYSTEM_KEYS, **IC_KEYS, **CLV_KEYS, "t_probe": (_pos, 10.0)},
    "bfield": {**SYSTEM_KEYS, **IC_KEYS, **CLV_KEYS, "index": (_nonneg_int, 0),
               "control": (lambda v: v in ("none", "shuffled"), "none"), "abs_tol": (lambda v: _num(v) and v >= 0, 1e-6)},
    "gauge": {**SYSTEM_KEYS, **IC_KEYS, "t_span": (_pos, REQUIRED), "sample_every": (_opt(_pos), None),
              "gauges": (lambda v: isinstance(v, list) and all(g in clf.standard_gauges() for g in v),
                         ["zero", "const", "x1", "sin_x1x2"]),
              "gauge_const": (_num, 0.7), "t_transient": (lambda v: _num(v) and v >= 0, 0.0)},
    "bound": {**SYSTEM_KEYS, **IC_KEYS, **SPECTRUM_KEYS, "sample_every": (_opt(_pos), None),
              "abs_tol": (lambda v: _num(v) and v >= 0, 1e-12)},
    "poincare": {**SYSTEM_KEYS, "ics": (_vectors, REQUIRED), "t_span": (_pos, REQUIRED),
                 "t_align": (lambda v: _num(v) and v >= 0, 200.0),
                 "section_index": (_nonneg_int, 0), "section_value": (_num, 0.0),
                 "section_direction": (lambda v: v in (1, -1), 1),
                 "section_coords": (lambda v: isinstance(v, list) and len(v) == 2 and all(map(_nonneg_int, v)),
                                    [1, 3])},
}


def parse_config_text(text) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            out[key] = json.loads(val)
        except json.JSONDecodeError:
            out[key] = val
    return out


def resolve_config(command, raw: dict) -> dict:
    schema = COMMAND_KEYS[command]
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown config key(s) for '{command}': {', '.join(unknown)}")
    cfg = {}
    for key, (check, default) in schema.items():
        if key not in raw:
            if default is REQUIRED:
                raise ConfigError(f"missing required config key '{key}'")
            cfg[key] = default
            continue
        if not check(raw[key]):
            raise ConfigError(f"invalid value for '{key}': {raw[key]!r}")
        cfg[key] = raw[key]
    return cfg


# building blocks


def build_system(cfg):
    name = cfg["system"]
    if name == "linear":
        if cfg["matrix"] is None:
            raise ConfigError("missing required config key 'matrix' for system 'linear'")
        return systems.make_linear(cfg["matrix"])
    if name == "henon_heiles":
        return systems.make_henon_heiles(cfg["coupling"], cfg["energy"])
    if name == "harmonic":
        return systems.make_harmonic(cfg["omega"])
    if name == "rotation":
        return systems.make_rotation()
    return systems.make_zero(cfg["dim"])


def build_integrator(cfg, sys) -> IntegratorConfig:
    base = default_config(sys)
    return IntegratorConfig(cfg["scheme"] or base.scheme, cfg["step"] or base.step)


def build_ic(cfg, sys, ic=None):
    """Full state, or (y, py) on x = 0 with px > 0 for Hénon-Heiles with a given energy."""
    ic = cfg.get("ic") if ic is None else ic
    if ic is None:
        if sys.name == "henon_heiles" and cfg["energy"] is not None:
            return systems.HenonHeilesSpec(cfg["coupling"], cfg["energy"]).default_state()
        return np.ones(sys.dim) / np.sqrt(sys.dim)
    ic = np.asarray(ic, dtype=float)
    if sys.name == "henon_heiles" and ic.shape == (2,):
        if cfg["energy"] is None:
            raise ConfigError("a (y, py) initial condition needs 'energy'")
        return systems.HenonHeilesSpec(cfg["coupling"], cfg["energy"]).state(ic[0], ic[1])
    if ic.shape != (sys.dim,):
        raise ConfigError(f"initial condition has {ic.size} components, system dim is {sys.dim}")
    return ic


def _metric(cfg, sys):
    return metric_tensor(cfg["metric"], sys.dim)


def _floats(a):
    return np.asarray(a, dtype=float).tolist()


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) for v in r])


def _angle(u, v):
    c = abs(float(np.dot(u, v))) / (np.linalg.norm(u) * np.linalg.norm(v))
    return float(np.arccos(min(1.0, c)))


# commands


def cmd_spectrum(cfg, out, jobs=1):
    sys = build_system(cfg)
    icfg = build_integrator(cfg, sys)
    x0 = build_ic(cfg, sys)
    kw = dict(m=cfg["m"], t_transient=cfg["t_transient"], seed=cfg["seed"])
    fwd = lyapunov.benettin_spectrum(sys, x0, icfg, cfg["t_total"], cfg["qr_interval"], **kw)
    bwd = lyapunov.backward_spectrum(sys, x0, icfg, cfg["t_total"], cfg["qr_interval"], **kw)
    hist = np.column_stack([fwd.times, fwd.history])
    _write_csv(os.path.join(out, "spectrum_history.csv"),
               ["t"] + [f"lambda_{j + 1}" for j in range(fwd.history.shape[1])], hist)
    err = lyapunov.opposition_error(fwd, bwd)
    tol = 3 * float(np.nanmax(np.concatenate([fwd.stderr, bwd.stderr]), initial=0.0))
    res = {
        "exponents": _floats(fwd.exponents),
        "stderr": _floats(np.nan_to_num(fwd.stderr)),
        "backward_exponents": _floats(bwd.exponents),
        "backward_stderr": _floats(np.nan_to_num(bwd.stderr)),
        "opposition_error": err,
        "last_decade_fluctuation": _floats(fwd.last_decade_fluctuation()),
        "pairing": "PASS" if err <= max(tol, 1e-6) else "FAIL",
    }
    if sys.name == "linear":
        res["oracle_exponents"] = _floats(systems.linear_oracle(sys.parameters["matrix"])[0][:len(fwd.exponents)])
    return res


def _run_clv(cfg, sys, icfg, x0):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", lyapunov.DegenerateSpectrumWarning)
        return lyapunov.ginelli_clv(sys, x0, icfg, cfg["t_transient"], cfg["t_store"], cfg["t_discard"],
                                    cfg["qr_interval"], m=cfg["m"], sample_every=cfg["sample_every"],
                                    seed=cfg["seed"])


def cmd_clv(cfg, out, jobs=1):
    sys = build_system(cfg)
    icfg = build_integrator(cfg, sys)
    x0 = build_ic(cfg, sys)
    s = _run_clv(cfg, sys, icfg, x0)
    n, m = s.vectors.shape[1:]
    header = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"v{j + 1}_{i + 1}" for j in range(m) for i in range(n)]
    rows = np.column_stack([s.times, s.states, np.swapaxes(s.vectors, 1, 2).reshape(len(s), -1)])
    _write_csv(os.path.join(out, "clv.csv"), header, rows)

    per_vector = []
    for j in range(m):
        entry = {"exponent": float(s.exponents[j]), "stderr": float(np.nan_to_num(s.stderr[j])),
                 "degenerate": bool(s.degenerate[j])}
        if len(s) >= 3:
            # CLVs are unit in the Euclidean norm
            c = clf.scalar_c_along(sys, None, s, j)
            entry["clf_residual"] = clf.clf_residual(sys, s, c, j)
        lf, lb = lyapunov.clv_exponent_check(sys, s[len(s) // 2], icfg, cfg["t_probe"], index=j)
        entry["forward_rate"], entry["backward_rate"] = lf, lb
        per_vector.append(entry)
    res = {"exponents": _floats(s.exponents), "degenerate": [bool(d) for d in s.degenerate],
           "warnings": list(s.warnings), "samples": len(s), "vectors": per_vector}
    if sys.name == "linear":
        _, E = systems.linear_oracle(sys.parameters["matrix"])
        if E is not None:
            res["eigen_alignment_max_angle"] = max(_angle(s.vectors[k, :, j], E[:, j])
                                                   for k in range(len(s)) for j in range(m))
    F, _ = sys.evaluate_many(s.states)
    if sys.is_hamiltonian and np.all(np.linalg.norm(F, axis=1) > 0):
        j0 = int(np.argmin(np.abs(s.exponents)))
        ang = [_angle(s.vectors[k, :, j0], F[k]) for k in range(len(s))]
        # with a degenerate zero pair the covariant plane contains F, so report the plane angle too
        plane = []
        if s.degenerate[j0]:
            partner = [j for j in range(m) if j != j0 and s.degenerate[j]
                       and abs(s.exponents[j] - s.exponents[j0]) < 1e-2]
            for k in range(len(s)):
                B = s.vectors[k][:, [j0] + partner[:1]]
                Qb, _ = np.linalg.qr(B)
                f = F[k] / np.linalg.norm(F[k])
                plane.append(float(np.arccos(min(1.0, np.linalg.norm(Qb.T @ f)))))
        res["zero_mode"] = {"index": j0, "median_angle_to_flow": float(np.median(ang)),
                            "median_plane_angle_to_flow": float(np.median(plane)) if plane else None}
    return res


def cmd_bfield(cfg, out, jobs=1):
    sys = build_system(cfg)
    icfg = build_integrator(cfg, sys)
    x0 = build_ic(cfg, sys)
    s = _run_clv(cfg, sys, icfg, x0)
    j = cfg["index"]
    if j >= s.vectors.shape[2]:
        raise ConfigError(f"index {j} out of range for {s.vectors.shape[2]} vectors")
    g = _metric(cfg, sys)
    W = s.vectors[:, :, j]
    if cfg["control"] == "shuffled":
        rng = np.random.default_rng(cfg["seed"])
        W = np.array([w[rng.permutation(len(w))] for w in W])
    W = W / np.sqrt(np.einsum("ki,ij,kj->k", W, g, W))[:, None]
    series = clf.scalar_c_along(sys, g, (s.times, s.states, W))
    series.to_csv(os.path.join(out, "bfield.csv"))
    avg, err = clf.time_average(series)
    t_tr = float(s.times[0]) if cfg["t_transient"] is None else cfg["t_transient"]
    # averaging window of the reference run = the stored CLV window
    ref = lyapunov.benettin_spectrum(sys, x0, icfg, cfg["t_store"], cfg["qr_interval"],
                                     m=cfg["m"], t_transient=t_tr, seed=cfg["seed"])
    lam = float(ref.exponents[j])
    tol = 3 * np.nan_to_num(err) + cfg["abs_tol"]
    bound = clf.le_upper_bound(sys, g, (s.times, s.states))
    resid = clf.clf_residual(sys, (s.times, s.states, W), series) if len(s) >= 3 else None
    return {"estimate": avg, "stderr": err, "benettin_exponent": lam, "difference": abs(avg - lam),
            "tolerance": tol, "bound": bound, "clf_residual": resid, "control": cfg["control"],
            "norm_range": list(clf.norm_range(W, g)),
            "verdict": "PASS" if abs(avg - lam) <= tol else "FAIL"}


def _base_series(cfg, sys, icfg, x0, t_span, sample_every):
    """c for w = F/|F| along the trajectory (b for v = F in the unit gauge)."""
    traj = evolve(sys, x0, None, icfg, t_span, sample_every=sample_every)
    W = clf.flow_directions(sys, traj.states)
    return traj, clf.scalar_c_along(sys, _metric(cfg, sys), (traj.times, traj.states, W))


def cmd_gauge(cfg, out, jobs=1):
    sys = build_system(cfg)
    icfg = build_integrator(cfg, sys)
    x0 = build_ic(cfg, sys)
    if cfg["t_transient"]:
        x0 = evolve(sys, x0, None, icfg, cfg["t_transient"], sample_every=cfg["t_transient"]).states[-1]
    se = cfg["sample_every"] or icfg.step
    traj, b = _base_series(cfg, sys, icfg, x0, cfg["t_span"], se)
    T = float(traj.times[-1] - traj.times[0])
    gauges = clf.standard_gauges(cfg["gauge_const"])
    rows = []
    for name in cfg["gauges"]:
        phi = clf.bounded_on(gauges[name], traj.states)
        bp = clf.gauge_transform(b, phi, traj)
        diff = clf.gauge_shift(b, bp)
        ph = phi.values(traj.states[[0, -1]])
        tele = float((ph[0] - ph[1]) / T)
        lim = 2 * phi.bound / T
        rows.append({"gauge": name, "sup_phi": phi.bound, "difference": diff, "telescoped": tele,
                     "identity_error": abs(diff - tele), "limit": lim,
                     "verdict": "PASS" if abs(diff) <= lim * (1 + 1e-9) + 1e-15 else "FAIL"})
    return {"horizon": T, "base_average": clf.time_average(b)[0], "gauges": rows}


def cmd_bound(cfg, out, jobs=1):
    sys = build_system(cfg)
    icfg = build_integrator(cfg, sys)
    x0 = build_ic(cfg, sys)
    g = _metric(cfg, sys)
    spec = lyapunov.benettin_spectrum(sys, x0, icfg, cfg["t_total"], cfg["qr_interval"], m=cfg["m"],
                                      t_transient=cfg["t_transient"], seed=cfg["seed"])
    se = cfg["sample_every"] or cfg["qr_interval"]
    traj = evolve(sys, x0, None, icfg, cfg["t_total"], sample_every=se)
    bound = clf.le_upper_bound(sys, g, traj)
    big = float(np.max(np.abs(spec.exponents)))
    # exponents that are exactly zero come out at round-off level
    return {"bound": bound, "exponents": _floats(spec.exponents), "max_abs_exponent": big,
            "verdict": "PASS" if bound + cfg["abs_tol"] >= big else "FAIL"}


def cmd_poincare(cfg, out, jobs=1):
    sys = build_system(cfg)
    icfg = build_integrator(cfg, sys)
    if not cfg["ics"]:
        raise ConfigError("'ics' is empty")
    ics = [build_ic(cfg, sys, ic) for ic in cfg["ics"]]
    spec = poincare.SectionSpec(cfg["section_index"], cfg["section_value"], cfg["section_direction"],
                                tuple(cfg["section_coords"]))
    spec.check(sys.dim)
    orbits = poincare.section_portrait(sys, spec, ics, icfg, cfg["t_span"], cfg["t_align"], cfg["seed"], jobs)
    poincare.write_section_csv(os.path.join(out, "section.csv"), orbits)
    rows = []
    for o in orbits:
        P = np.array([p.coords for p in o.points]).reshape(-1, 2)
        V = np.array([p.vector for p in o.points]).reshape(-1, 2)
        enough = len(P) > 16
        rows.append({"orbit_id": o.orbit_id, "crossings": len(P), "exponent": o.exponent,
                     "closed_curve": poincare.is_closed_curve(P),
                     "dimension": poincare.correlation_dimension(P) if enough else None,
                     "endpoint_fraction": poincare.endpoint_fraction(P, k=10) if enough else None,
                     "thickness": poincare.curve_thickness(P) if enough else None,
                     "median_alignment": float(np.median(poincare.alignment_angles(P, V))) if enough else None,
                     "error": o.error})
    return {"orbits": rows}


COMMANDS = {"spectrum": cmd_spectrum, "clv": cmd_clv, "bfield": cmd_bfield, "gauge": cmd_gauge,
            "bound": cmd_bound, "poincare": cmd_poincare}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def run(command, config_path, out, seed=None, jobs=1, timing=True):
    """Run one command; returns the report dict (also written to ``out/<command>.json``)."""
    with open(config_path) as fh:
        raw = parse_config_text(fh.read())
    if seed is not None:
        raw["seed"] = seed
    cfg = resolve_config(command, raw)
    icfg = build_integrator(cfg, build_system(cfg))
    icfg.check(build_system(cfg))
    cfg["scheme"], cfg["step"] = icfg.scheme, icfg.step
    os.makedirs(out, exist_ok=True)
    t0 = time.perf_counter()
    results = COMMANDS[command](cfg, out, jobs)
    report = {"command": command, "version": __version__, "config": cfg, "results": results,
              "runtime_seconds": round(time.perf_counter() - t0, 6) if timing else None}
    with open(os.path.join(out, f"{command}.json"), "w") as fh:
        json.dump(_jsonable(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="clflab", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, metavar="PATH")
    ap.add_argument("--out", default=".", metavar="DIR")
    ap.add_argument("--seed", type=int, default=None, metavar="U64")
    ap.add_argument("--jobs", type=int, default=1, metavar="N")
    ap.add_argument("--no-timing", action="store_true", help="write runtime_seconds as null (byte-stable output)")
    args = ap.parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=_sys.stderr)
        return EXIT_CONFIG
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=_sys.stderr)
        return EXIT_CONFIG
    try:
        report = run(args.command, args.config, args.out, args.seed, args.jobs, not args.no_timing)
    except (ConfigError, ContractViolation, OSError) as exc:
        print(f"config error: {exc}", file=_sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=_sys.stderr)
        if getattr(exc, "time", None) is not None:
            print(f"  last valid time: {exc.time}", file=_sys.stderr)
        return EXIT_NUMERIC
    print(json.dumps(_jsonable(report["results"]), sort_keys=True)[:2000])
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
