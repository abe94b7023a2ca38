"""Configuration-driven experiment runner: ``srclab run <command> [--config FILE] [--param value ...]``.

Parameters are resolved as defaults < JSON config < command-line flags.  Every
run writes its result files and a ``manifest.json`` (resolved config, versions,
timings) into ``--out``.  Exit codes: 0 success, 2 invalid input, 3 numeric
failure (details in ``diagnostic.json``).
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import time
import traceback
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` maps field names to messages."""

    def __init__(self, errors: dict[str, str]):
        super().__init__("; ".join(f"{k}: {v}" for k, v in errors.items()))
        self.errors = errors


# -- parameter coercion ---------------------------------------------------------------------


def _floats(v):
    if isinstance(v, str):
        v = [s for s in v.replace(";", ",").split(",") if s.strip()]
    return [float(x) for x in v]


def _point(v):
    out = _floats(v)
    if len(out) != 3:
        raise ValueError("expected three coordinates")
    return out


def _points(v):
    if isinstance(v, str):
        v = json.loads(v)
    return [_point(p) for p in v]


def _json(v):
    return json.loads(v) if isinstance(v, str) else v


def _json_or_str(v):
    if isinstance(v, str) and v.strip()[:1] not in ("[", "{", '"'):
        return v.strip()
    return _json(v)


def _bool(v):
    if isinstance(v, bool):
        return v
    if isinstance(v, str) and v.lower() in ("1", "true", "yes", "on", "0", "false", "no", "off"):
        return v.lower() in ("1", "true", "yes", "on")
    raise ValueError("expected a boolean")


def _opt(kind):
    def f(v):
        return None if v is None or (isinstance(v, str) and v.lower() in ("", "none", "null")) else kind(v)
    return f


@dataclass(frozen=True)
class Param:
    name: str
    kind: Callable[[Any], Any]
    default: Any
    help: str = ""
    check: Callable[[Any], bool] | None = None
    rule: str = ""


def _pos(v):
    return v > 0


def _nonneg(v):
    return v >= 0


STRUCTURE_PARAMS = (
    Param("structure", str, "heisenberg-flat", "catalog structure name"),
    Param("metric", _opt(_json_or_str), None, "metric override: catalog key or [a11, a12, a22] expressions"),
    Param("frame", _opt(_json), None, 'custom frame {"f1": [..3 exprs], "f2": [..3 exprs]}'),
)
AXES_HELP = "grid axes as [[lo, hi, n, periodic], x3] (JSON)"
DEFAULT_AXES = [[0.0, 0.0, 1, True], [0.0, 0.0, 1, True], [-3.141592653589793, 3.141592653589793, 64, True]]

COMMANDS: dict[str, tuple[str, tuple[Param, ...]]] = {
    "reeb": ("Reeb field, lift formula cross-check and det H^t transport", STRUCTURE_PARAMS + (
        Param("points", _opt(_points), None, "evaluation points (JSON list); default: seeded sample in the domain"),
        Param("n_points", int, 20, "number of sampled points", _pos, "> 0"),
        Param("literal", _bool, False, "use the literal printed lift formula (delta instead of sqrt(delta))"),
        Param("eps", float, 0.3, "half-width of the transport window for det H^t", _pos, "> 0"),
    )),
    "diffuse": ("partial averaging of the metric along the Reeb field", STRUCTURE_PARAMS + (
        Param("axes", _json, DEFAULT_AXES, AXES_HELP),
        Param("eps", float, 0.3, "averaging half-window", _pos, "> 0"),
        Param("nodes", int, 9, "Gauss-Legendre nodes", _pos, "> 0"),
        Param("steps", int, 1, "number of averaging steps", _pos, "> 0"),
        Param("scaled", _bool, False, "use the scaled average c * integral"),
        Param("c", _opt(float), None, "scale for the scaled average (default: preserve max trace)"),
    )),
    "heat": ("heat flow of the metric along the Reeb field", STRUCTURE_PARAMS + (
        Param("axes", _json, DEFAULT_AXES, AXES_HELP),
        Param("c", float, 1.0, "diffusion constant", _pos, "> 0"),
        Param("T", float, 0.1, "final time", _pos, "> 0"),
        Param("dt", _opt(float), None, "time step (default: largest stable)"),
    )),
    "kappa": ("curvature of the Reeb quotient surface", STRUCTURE_PARAMS + (
        Param("points", _opt(_points), None, "evaluation points (JSON list); default: seeded sample"),
        Param("n_points", int, 20, "number of sampled points", _pos, "> 0"),
        Param("h", float, 0.02, "finite-difference step", _pos, "> 0"),
        Param("orbit_times", _floats, [0.0, 0.2, 0.4], "Reeb flow times for the orbit-constancy check"),
    )),
    "geodesic": ("normal geodesic shooting, or boundary-value solve when q1 is given", STRUCTURE_PARAMS + (
        Param("q0", _point, [0.0, 0.0, 0.0], "start point"),
        Param("p0", _point, [1.0, 0.0, 0.0], "initial covector (shooting)"),
        Param("T", float, 1.0, "duration (shooting)", _pos, "> 0"),
        Param("step", float, 1e-3, "RK4 step (shooting)", _pos, "> 0"),
        Param("q1", _opt(_point), None, "target point (boundary-value mode)"),
        Param("restarts", int, 64, "restarts (boundary-value mode)", _pos, "> 0"),
    )),
    "martinet-surface": ("zero set of det(f1, f2, [f1, f2])", STRUCTURE_PARAMS[1:] + (
        Param("structure", str, "martinet-flat", "catalog structure name"),
        Param("box", _json, [[-1, 1], [-1, 1], [-1, 1]], "sampling box (JSON)"),
        Param("resolution", int, 21, "nodes per axis", lambda v: v >= 2, ">= 2"),
    )),
    "martinet-cut": ("cut-locus probe from the origin", STRUCTURE_PARAMS[1:] + (
        Param("structure", str, "martinet-flat", "catalog structure name"),
        Param("q1", _point, [0.0, 0.2, 0.01], "target point"),
        Param("probes", _opt(_points), None, "several targets (JSON list); overrides q1"),
        Param("restarts", int, 64, "boundary-value restarts", _pos, "> 0"),
    )),
    "martinet-sphere": ("sub-Riemannian sphere sampling and cut-locus extraction", STRUCTURE_PARAMS[1:] + (
        Param("structure", str, "martinet-flat", "catalog structure name"),
        Param("r", float, 0.2, "sphere radius", _pos, "> 0"),
        Param("resolution", int, 96, "samples per covector axis", lambda v: v >= 4, ">= 4"),
        Param("s_max", float, 64.0, "covector s window in units of 1/r^2", _pos, "> 0"),
        Param("reflection", _bool, True, "use the x1 -> -x1 reflection for minimality"),
    )),
    "frenet-integrate": ("integrate the Frenet control system", (
        Param("n", int, 3, "dimension", lambda v: v >= 2, ">= 2"),
        Param("m", int, 1, "number of turns (T = 2 pi m)", _pos, "> 0"),
        Param("u", _opt(_floats), None, "constant controls u_1..u_{n-1}"),
        Param("coeffs", _opt(_json), None, "Fourier coefficients, (n - 1) rows of (c0, a1, b1, ..)"),
        Param("steps", _opt(int), None, "even number of group steps"),
    )),
    "frenet-search": ("search for closed nondegenerate perturbations of the m-circle", (
        Param("n", int, 3, "dimension", lambda v: v >= 2, ">= 2"),
        Param("m", int, 2, "number of turns", _pos, "> 0"),
        Param("fourier_modes", int, 8, "Fourier modes per control", _nonneg, ">= 0"),
        Param("floor", float, 1e-3, "positivity floor for u_2..u_{n-1}", _pos, "> 0"),
        Param("restarts", int, 200, "restart budget", _pos, "> 0"),
        Param("max_iter", int, 500, "iterations per restart", _pos, "> 0"),
    )),
    "milnor": ("frame length and margin over 4 pi", (
        Param("m", int, 2, "number of turns", _pos, "> 0"),
        Param("u", _opt(_floats), None, "constant controls (u_1, u_2)"),
        Param("coeffs", _opt(_json), None, "Fourier coefficients, 2 rows"),
        Param("curve", _opt(str), None, "CSV of a closed curve sampled uniformly (x, y, z per row)"),
        Param("period", float, 6.283185307179586, "parameter period of the sampled curve", _pos, "> 0"),
    )),
}
STOCHASTIC = {"reeb", "kappa", "geodesic", "martinet-cut", "martinet-sphere", "frenet-search"}


def resolve(command: str, config: dict | None = None, flags: dict | None = None) -> dict:
    """Merge defaults, config and flags; validate every field."""
    if command not in COMMANDS:
        raise ConfigError({"command": f"unknown command {command!r}"})
    params = {p.name: p for p in COMMANDS[command][1]}
    errors: dict[str, str] = {}
    out = {name: p.default for name, p in params.items()}
    for source in (config or {}), (flags or {}):
        for k, v in source.items():
            if k in ("command", "seed", "out", "threads"):
                continue
            if k not in params:
                errors[k] = f"unknown parameter for {command!r}"
                continue
            p = params[k]
            try:
                val = p.kind(v)
            except (ValueError, TypeError, json.JSONDecodeError) as exc:
                errors[k] = f"cannot read {v!r}: {exc}"
                continue
            if p.check is not None and val is not None and not p.check(val):
                errors[k] = f"must be {p.rule}, got {val!r}"
                continue
            out[k] = val
    if errors:
        raise ConfigError(errors)
    return out


# -- structures from config -----------------------------------------------------------------


def _structure(cfg: dict):
    from .expr import Frame2
    from .hamiltonian import HEISENBERG_METRICS, MetricCoeffs, Structure, get_structure

    metric = cfg.get("metric")
    if isinstance(metric, str) and metric not in HEISENBERG_METRICS:
        raise ConfigError({"metric": f"unknown metric key {metric!r}; known: {', '.join(HEISENBERG_METRICS)}"})
    if isinstance(metric, list) and len(metric) != 3:
        raise ConfigError({"metric": "expected three coefficient expressions"})
    frame = cfg.get("frame")
    if frame is not None:
        try:
            fr = Frame2.parse(tuple(frame["f1"]), tuple(frame["f2"]), name="custom")
        except (KeyError, TypeError) as exc:
            raise ConfigError({"frame": f"expected {{'f1': [3 exprs], 'f2': [3 exprs]}} ({exc})"}) from None
        coeffs = HEISENBERG_METRICS.get(metric, metric) if isinstance(metric, str) else metric
        A = MetricCoeffs.parse(*(coeffs or ("1", "0", "1")))
        A.check_positive_definite(fr.sample_points(fr.sample))
        return Structure("custom", fr, A)
    try:
        return get_structure(cfg["structure"], metric)
    except KeyError as exc:
        raise ConfigError({"structure": str(exc.args[0])}) from None


def _sample_points(structure, n: int, seed: int):
    import numpy as np

    rng = np.random.default_rng(seed)
    lo, hi = np.array(structure.domain, dtype=float).T
    c, w = (lo + hi) / 2, (hi - lo) / 2
    return c + 0.5 * w * rng.uniform(-1, 1, (n, 3))


def _axes(spec):
    from .diffusion import GridAxis

    try:
        return tuple(GridAxis(float(a[0]), float(a[1]), int(a[2]), bool(a[3]) if len(a) > 3 else True) for a in spec)
    except (TypeError, IndexError, ValueError) as exc:
        raise ConfigError({"axes": f"expected [[lo, hi, n, periodic] x 3] ({exc})"}) from None


# -- commands -------------------------------------------------------------------------------


def _write_json(path: Path, obj) -> None:
    from .diffusion import write_manifest

    write_manifest(path, **obj)


def _write_csv(path: Path, header, rows) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in r])


def cmd_reeb(cfg, seed, out: Path) -> dict:
    import numpy as np

    from .diffusion import det_transport_check
    from .hamiltonian import heisenberg_relations_hold, reeb_field, reeb_lift_formula

    s = _structure(cfg)
    pts = np.array(cfg["points"]) if cfg["points"] is not None else _sample_points(s, cfg["n_points"], seed)
    R = reeb_field(s.frame, s.metric)
    e = R.evaluate(pts)
    e_num = R.solve_numeric(pts)
    P = np.random.default_rng(seed + 1).standard_normal(pts.shape)
    a = R.u_h.evaluate(pts, P)
    # the closed-form lift needs the Heisenberg relations
    if heisenberg_relations_hold(s.frame):
        b = reeb_lift_formula(s.frame, s.metric, literal=cfg["literal"]).evaluate(pts, P)
        rel = float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), 1e-300))
    else:
        b, rel = np.full_like(a, np.nan), None
    det = [det_transport_check(s, q, cfg["eps"]) for q in pts]
    _write_csv(out / "reeb.csv", ["x1", "x2", "x3", "e1", "e2", "e3", "lift", "formula", "det_drift"],
               [[*map(float, q), *map(float, v), float(x), float(y), d] for q, v, x, y, d in zip(pts, e, a, b, det)])
    return {
        "structure": s.name,
        "geometric_vs_pointwise": float(np.max(np.abs(e - e_num))),
        "lift_formula_rel_diff": rel,
        "det_drift_max": float(max(det)),
    }


def cmd_diffuse(cfg, seed, out: Path) -> dict:
    from .diffusion import GridMetricField, averaging_step, scaled_averaging_step

    s = _structure(cfg)
    f = GridMetricField.from_metric(s.frame, s.metric, _axes(cfg["axes"]))
    f.to_csv(out / "initial.csv")
    a0 = f.values
    steps = []
    for _ in range(cfg["steps"]):
        if cfg["scaled"]:
            f, rep = scaled_averaging_step(f, cfg["eps"], cfg["c"], cfg["nodes"])
        else:
            f, rep = averaging_step(f, cfg["eps"], cfg["nodes"])
        steps.append(rep.to_dict())
    f.to_csv(out / "field.csv")
    return {
        "structure": s.name,
        "grid": f.describe(),
        "steps": steps,
        "sup_change": float(abs(f.values - a0).max()),
    }


def cmd_heat(cfg, seed, out: Path) -> dict:
    from .diffusion import GridMetricField, evolve_heat

    s = _structure(cfg)
    f = GridMetricField.from_metric(s.frame, s.metric, _axes(cfg["axes"]))
    g = evolve_heat(f, cfg["c"], cfg["T"], cfg["dt"])
    g.to_csv(out / "field.csv")
    _write_csv(out / "history.csv", ["t", "invariance_residual", "sup_change"], g.meta["history"])
    return {
        "structure": s.name,
        "grid": g.describe(),
        "heat": g.meta["heat"],
        "generalized_metric": g.meta["generalized_metric"],
        "halt": g.meta["halt"],
        "sup_change": float(abs(g.values - f.values).max()),
    }


def cmd_kappa(cfg, seed, out: Path) -> dict:
    import numpy as np

    from .diffusion import as_model, kappa_estimate, orbit_transport

    s = _structure(cfg)
    model = as_model(s)
    pts = np.array(cfg["points"]) if cfg["points"] is not None else _sample_points(s, cfg["n_points"], seed)
    k = np.array([kappa_estimate(model, q, h=cfg["h"]) for q in pts])
    times = np.asarray(cfg["orbit_times"], dtype=float)
    X, _, ok = orbit_transport(model, pts[0], times)
    if not ok[0]:
        raise ArithmeticError("Reeb orbit left the domain during the constancy check")
    k_orbit = np.array([kappa_estimate(model, q, h=cfg["h"]) for q in X[0]])
    _write_csv(out / "kappa.csv", ["x1", "x2", "x3", "kappa"], [[*map(float, q), float(v)] for q, v in zip(pts, k)])
    return {
        "structure": s.name,
        "kappa_mean": float(k.mean()),
        "kappa_spread": float(k.max() - k.min()),
        "orbit_spread": float(k_orbit.max() - k_orbit.min()),
    }


def cmd_geodesic(cfg, seed, out: Path) -> dict:
    import numpy as np

    from .flow import integrate_hamiltonian, solve_geodesic_bvp
    from .hamiltonian import metric_hamiltonian

    s = _structure(cfg)
    h = metric_hamiltonian(s.frame, s.metric)
    if cfg["q1"] is not None:
        sols = solve_geodesic_bvp(h, cfg["q0"], cfg["q1"], cfg["restarts"], seed)
        return {
            "structure": s.name,
            "mode": "boundary-value",
            "distance": sols.distance,
            "multiplicity": sols.multiplicity,
            "lengths": [float(x.T) for x in sols],
            "covectors": [[float(v) for v in x.p0] for x in sols],
        }
    tr = integrate_hamiltonian(h, (cfg["q0"], cfg["p0"]), cfg["T"], cfg["step"], scale=0.5)
    _write_csv(out / "path.csv", ["t", "x1", "x2", "x3", "p1", "p2", "p3", "energy"],
               [[float(t), *map(float, y), float(e)] for t, y, e in zip(tr.times, tr.states, tr.energy)])
    return {
        "structure": s.name,
        "mode": "shooting",
        "end": [float(v) for v in tr.q[-1]],
        "energy_drift": float(np.max(np.abs(tr.energy - tr.energy[0]))),
    }


def _martinet(cfg):
    from .martinet import MartinetStructure

    s = _structure(cfg)
    return MartinetStructure(frame=s.frame, metric=s.metric)


def cmd_martinet_surface(cfg, seed, out: Path) -> dict:
    from .martinet import martinet_surface

    s = _martinet(cfg)
    surf = martinet_surface(s.frame, tuple(tuple(b) for b in cfg["box"]), cfg["resolution"])
    _write_csv(out / "surface.csv", ["x1", "x2", "x3"], [list(map(float, p)) for p in surf.points])
    return {
        "samples": int(surf.points.shape[0]),
        "empty": surf.empty,
        "max_abs_x1": float(abs(surf.points[:, 0]).max()) if not surf.empty else None,
    }


def cmd_martinet_cut(cfg, seed, out: Path) -> dict:
    from .martinet import cut_locus_probe

    s = _martinet(cfg)
    targets = cfg["probes"] if cfg["probes"] is not None else [cfg["q1"]]
    probes = [cut_locus_probe(q, cfg["restarts"], seed, structure=s).to_dict() for q in targets]
    return probes[0] if cfg["probes"] is None else {"probes": probes}


def cmd_martinet_sphere(cfg, seed, out: Path) -> dict:
    from .martinet import sphere_sample

    s = _martinet(cfg)
    refl = (1, 0, 0) if cfg["reflection"] else None
    sph = sphere_sample(cfg["r"], cfg["resolution"], s, s_max=cfg["s_max"], reflection=refl)
    sph.to_csv(out / "sphere.csv")
    loops = [[list(map(float, p)) for p in loop] for loop in sph.loops]
    _write_csv(out / "locus.csv", ["loop", "x1", "x2", "x3"],
               [[i, *p] for i, loop in enumerate(loops) for p in loop])
    return sph.summary()


def _controls(cfg, n: int, m: int):
    import numpy as np

    from .frenet import FrenetControls

    if cfg.get("coeffs") is not None:
        try:
            return FrenetControls(n, m, np.array(cfg["coeffs"], dtype=float))
        except ValueError as exc:
            raise ConfigError({"coeffs": str(exc)}) from None
    u = cfg.get("u") or [1.0] + [0.0] * (n - 2)
    if len(u) != n - 1:
        raise ConfigError({"u": f"expected {n - 1} values"})
    return FrenetControls.constant(u, m=m)


def cmd_frenet_integrate(cfg, seed, out: Path) -> dict:
    from .frenet import frame_length, integrate_frenet

    c = _controls(cfg, cfg["n"], cfg["m"])
    if cfg["steps"] is not None and (cfg["steps"] < 2 or cfg["steps"] % 2):
        raise ConfigError({"steps": "must be a positive even number"})
    tr = integrate_frenet(c, cfg["steps"])
    c.to_csv(out / "controls.csv")
    tr.to_csv(out / "curve.csv")
    return {
        "defect": tr.defect,
        "orthogonality_drift": tr.orthogonality_drift,
        "frame_length": frame_length(c),
        "end": [float(v) for v in tr.gamma[-1]],
        "controls": c.to_dict(),
    }


def cmd_frenet_search(cfg, seed, out: Path) -> dict:
    from .frenet import closure_search, integrate_frenet

    rep = closure_search(cfg["n"], cfg["m"], cfg["fourier_modes"], cfg["floor"], seed,
                         restarts=cfg["restarts"], max_iter=cfg["max_iter"])
    rep.controls.to_csv(out / "controls.csv")
    integrate_frenet(rep.controls).to_csv(out / "curve.csv")
    return rep.to_dict()


def cmd_milnor(cfg, seed, out: Path) -> dict:
    import numpy as np

    from .frenet import milnor_check

    if cfg["curve"] is not None:
        try:
            curve = np.loadtxt(cfg["curve"], delimiter=",", ndmin=2)
        except (OSError, ValueError) as exc:
            raise ConfigError({"curve": str(exc)}) from None
        L, margin = milnor_check(curve[:, :3], cfg["period"])
        src = "curve"
    else:
        L, margin = milnor_check(_controls(cfg, 3, cfg["m"]))
        src = "controls"
    return {"source": src, "frame_length": L, "bound": 4 * np.pi, "margin": margin}


HANDLERS = {
    "reeb": cmd_reeb,
    "diffuse": cmd_diffuse,
    "heat": cmd_heat,
    "kappa": cmd_kappa,
    "geodesic": cmd_geodesic,
    "martinet-surface": cmd_martinet_surface,
    "martinet-cut": cmd_martinet_cut,
    "martinet-sphere": cmd_martinet_sphere,
    "frenet-integrate": cmd_frenet_integrate,
    "frenet-search": cmd_frenet_search,
    "milnor": cmd_milnor,
}


# -- runner ---------------------------------------------------------------------------------


def _versions() -> dict:
    from importlib.metadata import PackageNotFoundError, version

    out = {"python": platform.python_version()}
    for pkg in ("srclab", "numpy", "scipy", "scikit-image"):
        try:
            out[pkg] = version(pkg)
        except PackageNotFoundError:
            out[pkg] = None
    return out


def _invalid_errors() -> tuple:
    """Errors that describe a bad input rather than a failed computation."""
    from .diffusion import StabilityBoundError
    from .expr import ExprSyntaxError, FrameDegeneracyError, UnknownIdentifierError, VariableIndexError
    from .hamiltonian import ContactConditionError, HeisenbergRelationError, NotPositiveDefiniteError

    return (ConfigError, ExprSyntaxError, UnknownIdentifierError, VariableIndexError, FrameDegeneracyError,
            ContactConditionError, HeisenbergRelationError, NotPositiveDefiniteError, StabilityBoundError)


def _numeric_errors() -> tuple:
    from .diffusion import KappaPreconditionError
    from .expr import RankAmbiguityError
    from .frenet import DegenerateCurveError, NonFiniteControlError
    from .martinet import NotOnSurfaceError

    # ArithmeticError covers non-convergence, orbit exits and non-finite states
    return (ArithmeticError, KappaPreconditionError, DegenerateCurveError, NonFiniteControlError,
            NotOnSurfaceError, RankAmbiguityError)


def run(command: str, config: dict | None = None, *, seed: int | None = None, out=".",
        threads: int | None = None, flags: dict | None = None) -> int:
    """Run one command; returns the exit code."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    config = dict(config or {})
    started = time.time()
    seed_source = "flag" if seed is not None else "config" if "seed" in config else "default"
    if seed is None:
        seed = config.get("seed", 0)
    manifest = {"command": command, "seed": seed, "seed_source": seed_source, "stochastic": command in STOCHASTIC,
                "threads": threads, "versions": _versions(), "outputs": []}
    try:
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError({"seed": f"must be a non-negative integer, got {seed!r}"})
        cfg = resolve(command, config, flags)
        manifest["config"] = cfg
        result = HANDLERS[command](cfg, seed, out)
        _write_json(out / "result.json", result)
        manifest["result"] = result
        manifest["outputs"] = sorted(p.name for p in out.iterdir() if p.name not in ("manifest.json", "diagnostic.json"))
        code = EXIT_OK
    except _numeric_errors() as exc:
        diag = {"error": type(exc).__name__, "message": str(exc), "traceback": traceback.format_exc()}
        _write_json(out / "diagnostic.json", diag)
        manifest["diagnostic"] = "diagnostic.json"
        print(f"srclab: numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        code = EXIT_NUMERIC
    except _invalid_errors() + (ValueError, KeyError, TypeError) as exc:
        errors = exc.errors if isinstance(exc, ConfigError) else {type(exc).__name__: str(exc)}
        manifest["errors"] = errors
        for k, v in errors.items():
            print(f"srclab: invalid {k}: {v}", file=sys.stderr)
        code = EXIT_INVALID
    manifest["exit_code"] = code
    manifest["timings"] = {"started": started, "wall_seconds": time.time() - started}
    _write_json(out / "manifest.json", manifest)
    return code


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="srclab", description="Sub-Riemannian contact laboratory experiments.")
    sub = ap.add_subparsers(dest="action", required=True)
    runp = sub.add_parser("run", help="run one experiment command")
    cmds = runp.add_subparsers(dest="command", required=True, metavar="command")
    for name, (desc, params) in COMMANDS.items():
        p = cmds.add_parser(name, help=desc, description=desc)
        p.add_argument("--config", type=Path, help="JSON config file")
        p.add_argument("--seed", type=int, help="random seed (stochastic commands)")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.add_argument("--threads", type=int, help="BLAS threads (fallback: SRCLAB_THREADS)")
        for prm in params:
            default = "none" if prm.default is None else json.dumps(prm.default)
            p.add_argument(f"--{prm.name.replace('_', '-')}", dest=f"param_{prm.name}", default=argparse.SUPPRESS,
                           help=f"{prm.help} (default {default})")
    return ap


def _set_threads(threads: int | None) -> int | None:
    if threads is None:
        env = os.environ.get("SRCLAB_THREADS")
        threads = int(env) if env and env.strip().isdigit() else None
    if threads is not None:
        for var in THREAD_VARS:
            os.environ[var] = str(threads)
    return threads


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    threads = _set_threads(args.threads)
    config = {}
    if args.config is not None:
        try:
            config = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            print(f"srclab: invalid config: {exc}", file=sys.stderr)
            return EXIT_INVALID
        if not isinstance(config, dict):
            print("srclab: invalid config: top level must be an object", file=sys.stderr)
            return EXIT_INVALID
        if config.get("command", args.command) != args.command:
            print(f"srclab: invalid config: written for {config['command']!r}", file=sys.stderr)
            return EXIT_INVALID
    flags = {k[len("param_"):]: v for k, v in vars(args).items() if k.startswith("param_")}
    return run(args.command, config, seed=args.seed, out=args.out, threads=threads, flags=flags)


if __name__ == "__main__":
    sys.exit(main())
