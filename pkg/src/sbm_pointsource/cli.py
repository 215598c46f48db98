"""Command line entry point: ``sbm-pointsource <subcommand> --config cfg.json --out dir``.

Every subcommand parses and validates its whole configuration before any
computation, computes into a temporary directory, and only then moves the
files into ``--out`` together with ``manifest.json``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import shutil
import sys
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .errors import ConfigError, ConsistencyError, DomainError, MagnitudeOverflowError, QuadratureError
from .fkmc import McConfig, epsilon_sweep, fk_estimate, regularized_flow_radial, weight_histogram
from .flow import apply_semigroup_radial, expected_measure_pairing, semigroup_on_grid
from .function_space import AtomicMeasure, function_from_json
from .kernel import interaction_kernel_log, verify_scaling
from .loglaplace import (
    laplace_functional,
    solve_config_from_json,
    solve_log_laplace,
    verify_scaling_property,
)
from .scaling_limit import (
    DEFAULT_KS,
    LimitRegime,
    convergence_study,
    proof_regime_decomposition,
    total_mass_regimes,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
NUMERIC_ERRORS = (MagnitudeOverflowError, QuadratureError, ConsistencyError, FloatingPointError)


@dataclass
class RunManifest:
    subcommand: str
    config_sha256: str
    version: str = __version__
    wall_time_s: float = 0.0
    outputs: list = field(default_factory=list)

    def to_json(self):
        return {
            "subcommand": self.subcommand,
            "config_sha256": self.config_sha256,
            "version": self.version,
            "wall_time_s": self.wall_time_s,
            "outputs": sorted(self.outputs),
        }


def config_digest(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()


# ---------------------------------------------------------------------------
# config helpers
# ---------------------------------------------------------------------------


def _get(cfg, key, conv=float, default=None):
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing key {key!r}")
        return default
    try:
        return conv(cfg[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key!r}: {exc}") from None


def _float_list(cfg, key, default=None):
    val = cfg.get(key, default)
    if val is None:
        raise ConfigError(f"missing key {key!r}")
    try:
        out = [float(v) for v in (val if isinstance(val, (list, tuple)) else [val])]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key!r}: {exc}") from None
    if not out:
        raise ConfigError(f"{key!r} must not be empty")
    return out


def _measure(cfg):
    if "measure" not in cfg:
        raise ConfigError("missing key 'measure'")
    try:
        return AtomicMeasure.from_json(cfg["measure"])
    except DomainError as exc:
        raise ConfigError(str(exc)) from None


def _function(cfg):
    if "function" not in cfg:
        raise ConfigError("missing key 'function'")
    return function_from_json(cfg["function"])


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _json_safe(obj):
    """Strict JSON: non-finite floats become the strings "inf", "-inf", "nan"."""
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else repr(float(obj))
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_json_safe(obj), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


# ---------------------------------------------------------------------------
# subcommands: each is (parse(cfg, args) -> plan, run(plan, tmpdir) -> [files])
# ---------------------------------------------------------------------------


def _parse_kernel_eval(cfg, args):
    plan = {
        "t": _float_list(cfg, "t"),
        "x_norm": _float_list(cfg, "x_norm"),
        "y_norm": _float_list(cfg, "y_norm"),
        "alpha": _float_list(cfg, "alpha"),
        "angle": _get(cfg, "angle", float, 0.0),
        "scaling_k": _get(cfg, "scaling_k", float, 4.0),
    }
    if min(plan["t"]) <= 0 or min(plan["x_norm"]) <= 0 or min(plan["y_norm"]) <= 0:
        raise ConfigError("t, x_norm and y_norm must be positive")
    if plan["scaling_k"] <= 0:
        raise ConfigError("scaling_k must be positive")
    return plan


def _run_kernel_eval(plan, out):
    c, s = math.cos(plan["angle"]), math.sin(plan["angle"])
    rows = []
    k = plan["scaling_k"]
    for t in plan["t"]:
        for rx in plan["x_norm"]:
            for ry in plan["y_norm"]:
                x = np.array([rx, 0.0, 0.0])
                y = np.array([ry * c, ry * s, 0.0])
                for a in sorted(plan["alpha"]):
                    lg = interaction_kernel_log(a, t, x, y)
                    try:
                        res = abs(verify_scaling(a, t, k, x, y)) / abs(lg.value)
                    except MagnitudeOverflowError:
                        rk = math.sqrt(k)
                        other = interaction_kernel_log(a / rk, k * t, rk * x, rk * y)
                        res = abs(math.expm1(1.5 * math.log(k) + other.log_abs - lg.log_abs))
                    rows.append((t, rx, ry, a, lg.value, lg.sign, lg.log10_abs, res))
    _write_csv(os.path.join(out, "kernel.csv"),
               ["t", "x_norm", "y_norm", "alpha", "kernel", "sign", "log10_abs_kernel",
                "scaling_rel_residual"], rows)
    return ["kernel.csv"]


def _parse_scaling_check(cfg, args):
    plan = {
        "n_samples": _get(cfg, "n_samples", int, 125),
        "seed": args.seed if args.seed is not None else _get(cfg, "seed", int, 0),
        "alpha_range": _float_list(cfg, "alpha_range", [-1.0, 1.0]),
        "t_range": _float_list(cfg, "t_range", [0.1, 2.0]),
        "k_range": _float_list(cfg, "k_range", [0.1, 100.0]),
        "r_range": _float_list(cfg, "r_range", [0.1, 3.0]),
    }
    for key in ("alpha_range", "t_range", "k_range", "r_range"):
        if len(plan[key]) != 2 or plan[key][0] > plan[key][1]:
            raise ConfigError(f"{key!r} must be [low, high]")
    if plan["t_range"][0] <= 0 or plan["k_range"][0] <= 0 or plan["r_range"][0] <= 0:
        raise ConfigError("time, k and radius ranges must be positive")
    return plan


def random_scaling_grid(n, seed, alpha_range, t_range, k_range, r_range):
    """Random ``(alpha, t, k, x, y)`` samples; ``k`` and ``t`` log-uniform."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed)])))
    alpha = rng.uniform(*alpha_range, n)
    t = np.exp(rng.uniform(*np.log(t_range), n))
    k = np.exp(rng.uniform(*np.log(k_range), n))
    dirs = rng.standard_normal((2, n, 3))
    dirs /= np.linalg.norm(dirs, axis=2, keepdims=True)
    rx = rng.uniform(*r_range, n)
    ry = rng.uniform(*r_range, n)
    return alpha, t, k, dirs[0] * rx[:, None], dirs[1] * ry[:, None]


def scaling_residuals(alpha, t, k, x, y):
    from .kernel import interaction_kernel

    return np.array([abs(verify_scaling(a, tt, kk, xx, yy)) / abs(interaction_kernel(a, tt, xx, yy))
                     for a, tt, kk, xx, yy in zip(alpha, t, k, x, y)])


def _run_scaling_check(plan, out):
    alpha, t, k, x, y = random_scaling_grid(plan["n_samples"], plan["seed"], plan["alpha_range"],
                                            plan["t_range"], plan["k_range"], plan["r_range"])
    res = scaling_residuals(alpha, t, k, x, y)
    rows = [(a, tt, kk, float(np.linalg.norm(xx)), float(np.linalg.norm(yy)), r)
            for a, tt, kk, xx, yy, r in zip(alpha, t, k, x, y, res)]
    _write_csv(os.path.join(out, "scaling.csv"),
               ["alpha", "t", "k", "x_norm", "y_norm", "rel_residual"], rows)
    _write_json(os.path.join(out, "scaling_summary.json"),
                {"n_samples": len(rows), "max_rel_residual": float(np.max(res)), "seed": plan["seed"]})
    return ["scaling.csv", "scaling_summary.json"]


def _parse_semigroup(cfg, args):
    plan = {
        "alpha": _get(cfg, "alpha"),
        "times": _float_list(cfg, "times"),
        "radii": _float_list(cfg, "radii"),
        "function": _function(cfg),
        "measure": _measure(cfg) if "measure" in cfg else None,
    }
    if min(plan["times"]) <= 0 or min(plan["radii"]) <= 0:
        raise ConfigError("times and radii must be positive")
    if plan["alpha"] == -math.inf:
        raise ConfigError("alpha = -inf has no finite semigroup")
    return plan


def _run_semigroup(plan, out):
    times, radii, f, a = plan["times"], plan["radii"], plan["function"], plan["alpha"]
    free, rest = semigroup_on_grid(a, times, radii, f, split=True)
    rows = [(t, r, free[i, j] + rest[i, j], free[i, j], rest[i, j])
            for i, t in enumerate(times) for j, r in enumerate(radii)]
    _write_csv(os.path.join(out, "semigroup.csv"), ["t", "r", "value", "free", "interaction"], rows)
    files = ["semigroup.csv"]
    if plan["measure"] is not None:
        pairs = {repr(t): expected_measure_pairing(plan["measure"], a, t, f) for t in times}
        _write_json(os.path.join(out, "pairing.json"), {"alpha": a, "expected_pairing": pairs})
        files.append("pairing.json")
    return files


def _parse_loglaplace(cfg, args):
    alpha, bp, f, grid = solve_config_from_json(cfg)
    sc = cfg.get("scaling_check")
    if sc is not None:
        try:
            sc = {"k": [float(k) for k in sc.get("k", [4.0, 16.0])], "lambda": float(sc.get("lambda", 1.0))}
        except (AttributeError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad scaling_check: {exc}") from None
    return {
        "alpha": alpha, "bp": bp, "function": f, "grid": grid,
        "tol": _get(cfg, "tol", float, 1e-8),
        "measure": _measure(cfg) if "measure" in cfg else None,
        "scaling_check": sc,
    }


def _run_loglaplace(plan, out):
    a, bp, f, grid = plan["alpha"], plan["bp"], plan["function"], plan["grid"]
    field_, rep = solve_log_laplace(a, bp, f, grid, tol=plan["tol"])
    field_.to_csv(os.path.join(out, "field.csv"))
    flow = np.vstack([f(grid.radii), semigroup_on_grid(a, grid.times[1:], grid.radii, f)])
    summary = rep.to_json()
    summary["sandwich_violations"] = int(np.count_nonzero((field_.values < 0) | (field_.values > flow)))
    if plan["measure"] is not None:
        summary["laplace_functional"] = laplace_functional(plan["measure"], field_, grid.t_max)
    _write_json(os.path.join(out, "picard.json"), summary)
    files = ["field.csv", "picard.json"]
    if plan["scaling_check"] is not None:
        reps = [verify_scaling_property(a, plan["scaling_check"]["lambda"], k, bp, f, grid).to_json()
                for k in plan["scaling_check"]["k"]]
        _write_json(os.path.join(out, "scaling.json"), {"reports": reps})
        files.append("scaling.json")
    return files


def _parse_scaling_study(cfg, args):
    plan = {
        "alpha": _get(cfg, "alpha"),
        "t": _get(cfg, "t", float, 1.0),
        "measure": _measure(cfg),
        "function": _function(cfg),
        "schedule": LimitRegime.from_json(cfg.get("schedule", {"kind": "inv_sqrt"})),
        "k": sorted(_float_list(cfg, "k", list(DEFAULT_KS))),
        "threads": args.threads,
    }
    if plan["t"] <= 0 or plan["k"][0] <= 0:
        raise ConfigError("t and k must be positive")
    try:
        plan["alpha_star"] = plan["schedule"].alpha_star(plan["alpha"], plan["k"])
    except DomainError as exc:
        raise ConfigError(str(exc)) from None
    return plan


def _run_scaling_study(plan, out):
    table, a_star, limit = convergence_study(plan["schedule"], plan["alpha"], plan["t"], plan["measure"],
                                             plan["function"], plan["k"], workers=plan["threads"])
    table.to_csv(os.path.join(out, "convergence.csv"))
    rows = []
    for k in plan["k"]:
        d = proof_regime_decomposition(k, plan["schedule"], plan["alpha"], plan["t"], plan["measure"],
                                       plan["function"])
        rows.append((k, d.alpha_effective, d.free_term, d.second_term, d.third_term))
    _write_csv(os.path.join(out, "decomposition.csv"),
               ["k", "alpha_effective", "free_term", "second_term", "third_term"], rows)
    rel = table.rel_errors
    _write_json(os.path.join(out, "regime.json"), {
        "alpha": plan["alpha"], "alpha_star": a_star, "limit": limit,
        "final_rel_error": float(rel[-1]),
        "rel_error_decreasing": bool(np.all(np.diff(rel) < 0)),
    })
    return ["convergence.csv", "decomposition.csv", "regime.json"]


def _parse_total_mass(cfg, args):
    plan = {
        "alpha": _get(cfg, "alpha"),
        "t": _get(cfg, "t", float, 1.0),
        "measure": _measure(cfg),
        "k": sorted(_float_list(cfg, "k", list(DEFAULT_KS))),
        "threads": args.threads,
    }
    if not math.isfinite(plan["alpha"]) or plan["t"] <= 0 or plan["k"][0] <= 0:
        raise ConfigError("alpha must be finite, t and k positive")
    return plan


def _run_total_mass(plan, out):
    res = total_mass_regimes(plan["alpha"], plan["t"], plan["measure"], plan["k"], workers=plan["threads"])
    res.table.to_csv(os.path.join(out, "total_mass.csv"))
    summary = res.to_json()
    summary["status"] = res.classification
    _write_json(os.path.join(out, "total_mass.json"), summary)
    return ["total_mass.csv", "total_mass.json"]


def _parse_fkmc(cfg, args):
    try:
        mc = McConfig(
            n_paths=_get(cfg, "n_paths", int),
            dt=_get(cfg, "dt"),
            eps=_get(cfg, "eps"),
            seed=args.seed if args.seed is not None else _get(cfg, "seed", int, 0),
            start=tuple(_float_list(cfg, "start", [1.0, 0.0, 0.0])),
        )
    except DomainError as exc:
        raise ConfigError(str(exc)) from None
    plan = {
        "alpha": _get(cfg, "alpha"),
        "t": _get(cfg, "t", float, 1.0),
        "function": _function(cfg),
        "mc": mc,
        "bypass_h": bool(cfg.get("bypass_h", False)),
        "histogram_bins": _get(cfg, "histogram_bins", int, 0),
        "sweep": cfg.get("sweep"),
        "threads": args.threads,
    }
    try:
        mc.n_steps(plan["t"])
    except DomainError as exc:
        raise ConfigError(str(exc)) from None
    if plan["sweep"] is not None:
        sw = plan["sweep"]
        if not isinstance(sw, dict):
            raise ConfigError("sweep must be an object")
        plan["sweep"] = {"eps": _float_list(sw, "eps", [0.2, 0.1, 0.05]),
                         "n_paths": _get(sw, "n_paths", int, mc.n_paths)}
        if min(plan["sweep"]["eps"]) <= 0:
            raise ConfigError("sweep eps must be positive")
    return plan


def _run_fkmc(plan, out):
    mc, f, a, t = plan["mc"], plan["function"], plan["alpha"], plan["t"]
    est = fk_estimate(a, t, f, mc, bypass_h=plan["bypass_h"], threads=plan["threads"],
                      keep_weights=plan["histogram_bins"] > 0)
    r = float(np.linalg.norm(mc.start))
    ref = apply_semigroup_radial(a, t, r, f)
    summary = est.to_json()
    summary.update({"alpha": a, "t": t, "eps": mc.eps, "dt": mc.dt, "seed": mc.seed,
                    "bypass_h": plan["bypass_h"], "free_flow": ref.free, "semigroup": ref.value})
    _write_json(os.path.join(out, "fkmc.json"), summary)
    files = ["fkmc.json"]
    if plan["histogram_bins"] > 0:
        edges, counts = weight_histogram(est.log_weights, plan["histogram_bins"])
        _write_csv(os.path.join(out, "weights_hist.csv"), ["log_weight_lo", "log_weight_hi", "count"],
                   [(lo, hi, int(c)) for lo, hi, c in zip(edges[:-1], edges[1:], counts)])
        files.append("weights_hist.csv")
    if plan["sweep"] is not None:
        sw = epsilon_sweep(a, t, f, mc.start, plan["sweep"]["eps"], plan["sweep"]["n_paths"], mc.seed,
                           threads=plan["threads"])
        rows = [(p.eps, p.estimate.mean, p.estimate.std_error, regularized_flow_radial(a, p.eps, t, r, f),
                 sw.free_value, sw.flow_value) for p in sw.points]
        _write_csv(os.path.join(out, "sweep.csv"),
                   ["eps", "estimate", "std_error", "regularized_exact", "free_value", "semigroup_value"], rows)
        _write_json(os.path.join(out, "sweep.json"), sw.to_json())
        files += ["sweep.csv", "sweep.json"]
    return files


COMMANDS = {
    "kernel-eval": (_parse_kernel_eval, _run_kernel_eval),
    "scaling-check": (_parse_scaling_check, _run_scaling_check),
    "semigroup": (_parse_semigroup, _run_semigroup),
    "loglaplace": (_parse_loglaplace, _run_loglaplace),
    "scaling-study": (_parse_scaling_study, _run_scaling_study),
    "total-mass": (_parse_total_mass, _run_total_mass),
    "fkmc": (_parse_fkmc, _run_fkmc),
}


def build_parser():
    p = argparse.ArgumentParser(prog="sbm-pointsource", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="JSON configuration file")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--threads", type=int, default=1, help="worker cap")
        s.add_argument("--seed", type=int, default=None, help="override the config seed")
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    parse, execute = COMMANDS[args.command]
    try:
        with open(args.config, "rb") as fh:
            raw = fh.read()
        cfg = json.loads(raw)
        if not isinstance(cfg, dict):
            raise ConfigError("top-level config must be a JSON object")
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        plan = parse(cfg, args)
    except (OSError, json.JSONDecodeError, ConfigError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = os.path.abspath(args.out)
    parent = os.path.dirname(out)
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix=".partial-", dir=parent)
    try:
        try:
            files = execute(plan, tmp)
        except (*NUMERIC_ERRORS, DomainError) as exc:
            print(f"numerical failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        manifest = RunManifest(args.command, config_digest(raw), wall_time_s=time.perf_counter() - start,
                               outputs=files + ["manifest.json"])
        _write_json(os.path.join(tmp, "manifest.json"), manifest.to_json())
        os.makedirs(out, exist_ok=True)
        for name in manifest.outputs:
            os.replace(os.path.join(tmp, name), os.path.join(out, name))
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    return EXIT_OK


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
