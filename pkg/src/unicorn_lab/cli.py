"""Command-line driver.

Subcommands: alpha-sweep | compare | verify | cost-report. Parameters
resolve as CLI flag > config file (a flat JSON document per command) >
built-in default; the master seed falls back to the UNICORN_LAB_SEED
environment variable and is mandatory. Every CSV starts with one
``# config: {...}`` comment line and every JSON embeds the resolved
config, so outputs are self-describing and reruns are comparable
byte-for-byte. Result ordering is by deterministic key, never by worker
completion order.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import __version__
from .core import TiePolicy
from .designs import MixingMode
from .simulation import (
    DEFAULT_METHODS,
    GaussianEnvConfig,
    MarketplaceEnvConfig,
    ResponseFn,
    comparison_replication,
    parse_method,
)
from .verify import alpha_sweep, brute_force_optimality, check_bias_variance, cost_exactness

SEED_ENV_VAR = "UNICORN_LAB_SEED"

_TIE_POLICIES = {"random": TiePolicy.RANDOM, "favor-treatment": TiePolicy.FAVOR_HIGHER_ARM}
_LOG_BASES = {"e": None, "10": 10.0}


def _pmap(fn: Callable, tasks: Sequence, workers: int) -> list:
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        loaded = json.load(fh)
    if not isinstance(loaded, dict):
        raise SystemExit(f"config file {path} must contain a JSON object")
    return loaded


def _resolve(flag_value, config: dict, key: str, default):
    if flag_value is not None:
        return flag_value
    if key in config:
        return config[key]
    return default


def _resolve_seed(ns: argparse.Namespace, config: dict) -> int:
    if ns.seed is not None:
        return int(ns.seed)
    if "seed" in config:
        return int(config["seed"])
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        return int(env)
    raise SystemExit(
        f"a master seed is required: pass --seed, put 'seed' in the config file, "
        f"or set {SEED_ENV_VAR}"
    )


def _out_dir(ns: argparse.Namespace, config: dict) -> Path:
    out = Path(_resolve(ns.out, config, "out", "results"))
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise SystemExit(f"cannot create output directory {out}: {exc}")
    return out


def _write_csv(path: Path, fieldnames: Sequence[str], rows: Iterable[dict], config: dict) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("# config: " + json.dumps(config, sort_keys=True) + "\n")
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _write_json(path: Path, payload: dict, config: dict) -> None:
    with open(path, "w") as fh:
        json.dump({"config": config, **payload}, fh, sort_keys=True, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------- alpha-sweep

def _sweep_task(payload: dict) -> list[dict]:
    cells = alpha_sweep(
        GaussianEnvConfig(
            rho=payload["rho"],
            n_slots=payload["n_slots"],
            n_sessions=payload["n_sessions"],
            seed=payload["seed"],
        ),
        alphas=payload["alphas"],
        tp_grid=payload["tps"],
        tie_policy=_TIE_POLICIES[payload["tie_policy"]],
    )
    out = []
    for cell in cells:
        out.append(
            {
                "rho": cell.rho,
                "tp": cell.tp,
                "alpha": cell.alpha,
                "inaccuracy": cell.inaccuracy,
                "analytic_cost": cell.analytic_cost,
                "measured_cost": cell.measured_cost,
                "positions": cell.profile.to_rows(),
            }
        )
    return out


def cmd_alpha_sweep(ns: argparse.Namespace) -> int:
    config_file = _load_config(ns.config)
    seed = _resolve_seed(ns, config_file)
    quick = bool(ns.quick or config_file.get("quick", False))
    resolved = {
        "command": "alpha-sweep",
        "version": __version__,
        "seed": seed,
        "rhos": _resolve(ns.rhos, config_file, "rhos", [-1.0, -0.4, -0.2, 0.2, 0.8]),
        "tps": _resolve(ns.tps, config_file, "tps", [0.1, 0.5]),
        "alphas": _resolve(ns.alphas, config_file, "alphas", [0.0, 0.25, 0.5, 0.75, 1.0]),
        "n_slots": int(_resolve(ns.n_slots, config_file, "n_slots", 100)),
        "n_sessions": int(
            _resolve(ns.n_sessions, config_file, "n_sessions", 2000 if quick else 50000)
        ),
        "tie_policy": _resolve(ns.tie_policy, config_file, "tie_policy", "random"),
        "workers": int(_resolve(ns.workers, config_file, "workers", 1)),
    }
    out = _out_dir(ns, config_file)
    resolved["out"] = str(out)

    tasks = [
        {
            "rho": float(rho),
            "tps": [float(t) for t in resolved["tps"]],
            "alphas": [float(a) for a in resolved["alphas"]],
            "n_slots": resolved["n_slots"],
            "n_sessions": resolved["n_sessions"],
            "seed": seed,
            "tie_policy": resolved["tie_policy"],
        }
        for rho in resolved["rhos"]
    ]
    results = _pmap(_sweep_task, tasks, resolved["workers"])

    position_rows = []
    tradeoff_rows = []
    for cell_rows in results:
        for cell in cell_rows:
            tradeoff_rows.append(
                {k: cell[k] for k in
                 ("rho", "tp", "alpha", "inaccuracy", "analytic_cost", "measured_cost")}
            )
            for pos in cell["positions"]:
                position_rows.append(
                    {"rho": cell["rho"], "tp": cell["tp"], "alpha": cell["alpha"], **pos}
                )
    key = lambda r: (r["rho"], r["tp"], r["alpha"], r.get("position", 0))
    _write_csv(
        out / "position_errors.csv",
        ["rho", "tp", "alpha", "position", "count", "mae", "rmse"],
        sorted(position_rows, key=key),
        resolved,
    )
    _write_csv(
        out / "tradeoff.csv",
        ["rho", "tp", "alpha", "inaccuracy", "analytic_cost", "measured_cost"],
        sorted(tradeoff_rows, key=key),
        resolved,
    )
    _write_json(out / "alpha_sweep_summary.json", {"cells": sorted(tradeoff_rows, key=key)}, resolved)
    print(f"alpha-sweep: wrote {len(tradeoff_rows)} cells to {out}")
    return 0


# -------------------------------------------------------------------- compare

def _compare_task(payload: dict) -> list[dict]:
    rows = comparison_replication(
        MarketplaceEnvConfig(
            n_producers=payload["n_producers"],
            n_slots=payload["n_slots"],
            n_sessions=payload["n_sessions"],
        ),
        specs=[parse_method(m) for m in payload["methods"]],
        rep=payload["rep"],
        tps=payload["tps"],
        fns=tuple(ResponseFn(f) for f in payload["fns"]),
        master_seed=payload["seed"],
        log_base=payload["log_base"],
        tie_policy=_TIE_POLICIES[payload["tie_policy"]],
    )
    return [asdict(row) for row in rows]


def cmd_compare(ns: argparse.Namespace) -> int:
    config_file = _load_config(ns.config)
    seed = _resolve_seed(ns, config_file)
    quick = bool(ns.quick or config_file.get("quick", False))
    resolved = {
        "command": "compare",
        "version": __version__,
        "seed": seed,
        "methods": _resolve(ns.methods, config_file, "methods", list(DEFAULT_METHODS)),
        "tps": _resolve(ns.tps, config_file, "tps", [0.1, 0.5]),
        "fns": _resolve(None, config_file, "fns", ["avg_fn", "max_fn"]),
        "replications": int(
            _resolve(ns.replications, config_file, "replications", 4 if quick else 100)
        ),
        "n_producers": int(_resolve(ns.n_producers, config_file, "n_producers", 1000)),
        "n_slots": int(_resolve(ns.n_slots, config_file, "n_slots", 100)),
        "n_sessions": int(
            _resolve(ns.n_sessions, config_file, "n_sessions", 200 if quick else 1000)
        ),
        "log_base": _resolve(ns.log_base, config_file, "log_base", "e"),
        "tie_policy": _resolve(ns.tie_policy, config_file, "tie_policy", "random"),
        "workers": int(_resolve(ns.workers, config_file, "workers", 1)),
    }
    out = _out_dir(ns, config_file)
    resolved["out"] = str(out)

    tasks = [
        {
            "rep": rep,
            "methods": resolved["methods"],
            "tps": [float(t) for t in resolved["tps"]],
            "fns": resolved["fns"],
            "n_producers": resolved["n_producers"],
            "n_slots": resolved["n_slots"],
            "n_sessions": resolved["n_sessions"],
            "seed": seed,
            "log_base": _LOG_BASES[resolved["log_base"]],
            "tie_policy": resolved["tie_policy"],
        }
        for rep in range(resolved["replications"])
    ]
    rows = [row for chunk in _pmap(_compare_task, tasks, resolved["workers"]) for row in chunk]
    rows.sort(key=lambda r: (r["method"], r["response_fn"], r["tp"], r["replication"]))

    _write_csv(
        out / "ate_errors.csv",
        ["method", "response_fn", "tp", "replication", "estimate", "ground_truth", "error"],
        [{k: r[k] for k in
          ("method", "response_fn", "tp", "replication", "estimate", "ground_truth", "error")}
         for r in rows],
        resolved,
    )
    cost_rows = sorted(
        {(r["method"], r["tp"], r["replication"]): r["mean_cost_per_session"] for r in rows}.items()
    )
    _write_csv(
        out / "cost.csv",
        ["method", "tp", "replication", "mean_cost_per_session"],
        [{"method": m, "tp": t, "replication": rep, "mean_cost_per_session": c}
         for (m, t, rep), c in cost_rows],
        resolved,
    )
    summary: dict[str, dict] = {}
    for row in rows:
        key = f"{row['method']}|{row['response_fn']}|tp={row['tp']}"
        summary.setdefault(key, []).append(abs(row["error"]))
    medians = {k: float(np.median(v)) for k, v in sorted(summary.items())}
    _write_json(out / "compare_summary.json", {"median_abs_error": medians}, resolved)
    print(f"compare: wrote {len(rows)} rows to {out}")
    return 0


# --------------------------------------------------------------------- verify

def _verify_bias_task(payload: dict) -> dict:
    check = check_bias_variance(
        p1_grid=payload["p1_grid"],
        session_sizes=[payload["n"]],
        mc_reps=payload["mc_reps"],
        master_seed=payload["seed"],
        adversarial_only=payload["adversarial_only"],
    )
    def report_dict(rep):
        return {
            "p1": rep.p1,
            "n_items": rep.n_items,
            "violations": [asdict(c) for c in rep.violations],
            "cells": len(rep.cells),
            "skipped": len(rep.skipped),
        }
    return {
        "n": payload["n"],
        "passed": check.passed,
        "random": [report_dict(r) for r in check.random_reports],
        "adversarial": [report_dict(r) for r in check.adversarial_reports],
        "attainment": [asdict(a) for a in check.attainment],
    }


def cmd_verify(ns: argparse.Namespace) -> int:
    config_file = _load_config(ns.config)
    seed = _resolve_seed(ns, config_file)
    quick = bool(ns.quick or config_file.get("quick", False))
    resolved = {
        "command": "verify",
        "version": __version__,
        "seed": seed,
        "p1_grid": _resolve(ns.p1_grid, config_file, "p1_grid", [0.1, 0.3, 0.5, 0.7, 0.9]),
        "session_sizes": _resolve(ns.session_sizes, config_file, "session_sizes", [5, 7]),
        "mc_reps": int(_resolve(ns.mc_reps, config_file, "mc_reps", 5000 if quick else 50000)),
        "brute_trials": int(
            _resolve(ns.brute_trials, config_file, "brute_trials", 500 if quick else 5000)
        ),
        "adversarial_only": bool(ns.adversarial_only or config_file.get("adversarial_only", False)),
        "workers": int(_resolve(ns.workers, config_file, "workers", 1)),
    }
    out = _out_dir(ns, config_file)
    resolved["out"] = str(out)

    brute = brute_force_optimality(
        session_sizes=[n for n in resolved["session_sizes"] if n <= 7],
        trials=resolved["brute_trials"],
        master_seed=seed,
    )
    tasks = [
        {
            "n": int(n),
            "p1_grid": [float(p) for p in resolved["p1_grid"]],
            "mc_reps": resolved["mc_reps"],
            "seed": seed,
            "adversarial_only": resolved["adversarial_only"],
        }
        for n in resolved["session_sizes"]
    ]
    bias_results = _pmap(_verify_bias_task, tasks, resolved["workers"])

    all_passed = brute.passed and all(r["passed"] for r in bias_results)
    n_checks = resolved["brute_trials"] + sum(
        len(r["random"]) + len(r["adversarial"]) + len(r["attainment"]) for r in bias_results
    )
    _write_json(
        out / "verify_report.json",
        {
            "passed": all_passed,
            "optimality": asdict(brute),
            "bias_variance": bias_results,
        },
        resolved,
    )
    status = "passed" if all_passed else "FAILED"
    print(f"verify: all {n_checks} checks {status}" if all_passed
          else f"verify: {status}, see {out / 'verify_report.json'}")
    return 0 if all_passed else 2


# ---------------------------------------------------------------- cost-report

_MODE_NAMES = {
    "single": MixingMode.SINGLE_TREATMENT,
    "greater": MixingMode.GREATER_MIXING,
    "limited": MixingMode.LIMITED_MIXING,
}


def _cost_task(payload: dict) -> list[dict]:
    checks = cost_exactness(
        modes_and_fractions=[(_MODE_NAMES[payload["mode"]], tuple(payload["fractions"]))],
        alphas=payload["alphas"],
        n_sessions=payload["n_sessions"],
        n_slots=payload["n_slots"],
        master_seed=payload["seed"],
        stream_tag=payload["tag"],
    )
    return [asdict(c) for c in checks]


def cmd_cost_report(ns: argparse.Namespace) -> int:
    config_file = _load_config(ns.config)
    seed = _resolve_seed(ns, config_file)
    quick = bool(ns.quick or config_file.get("quick", False))
    default_grid = [
        {"mode": "single", "fractions": [0.5, 0.5]},
        {"mode": "single", "fractions": [0.9, 0.1]},
        {"mode": "greater", "fractions": [0.5, 0.25, 0.25]},
        {"mode": "limited", "fractions": [0.5, 0.25, 0.25]},
    ]
    resolved = {
        "command": "cost-report",
        "version": __version__,
        "seed": seed,
        "grid": _resolve(None, config_file, "grid", default_grid),
        "alphas": _resolve(ns.alphas, config_file, "alphas", [0.0, 0.2, 0.5, 1.0]),
        "n_sessions": int(
            _resolve(ns.n_sessions, config_file, "n_sessions", 1000 if quick else 10000)
        ),
        "n_slots": int(_resolve(ns.n_slots, config_file, "n_slots", 30)),
        "workers": int(_resolve(ns.workers, config_file, "workers", 1)),
    }
    out = _out_dir(ns, config_file)
    resolved["out"] = str(out)

    tasks = [
        {
            "mode": entry["mode"],
            "fractions": [float(p) for p in entry["fractions"]],
            "alphas": [float(a) for a in resolved["alphas"]],
            "n_sessions": resolved["n_sessions"],
            "n_slots": resolved["n_slots"],
            "seed": seed,
            "tag": tag,
        }
        for tag, entry in enumerate(resolved["grid"])
    ]
    rows = [row for chunk in _pmap(_cost_task, tasks, resolved["workers"]) for row in chunk]
    for row in rows:
        row["fractions"] = "/".join(repr(p) for p in row["fractions"])
    rows.sort(key=lambda r: (r["mode"], r["fractions"], r["alpha"]))
    _write_csv(
        out / "cost_report.csv",
        ["mode", "fractions", "alpha", "n_sessions", "n_slots",
         "measured_mean", "analytic", "rel_err", "ok"],
        rows,
        resolved,
    )
    _write_json(out / "cost_report_summary.json",
                {"all_ok": all(r["ok"] for r in rows), "checks": rows}, resolved)
    print(f"cost-report: wrote {len(rows)} checks to {out}")
    return 0


# ----------------------------------------------------------------------- main

def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip() != ""]


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip() != ""]


def _str_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip() != ""]


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; flags override its values")
    parser.add_argument("--seed", type=int, help=f"master seed (fallback: ${SEED_ENV_VAR})")
    parser.add_argument("--out", help="output directory (default: results)")
    parser.add_argument("--workers", type=int, help="worker processes (default: 1)")
    parser.add_argument("--quick", action="store_true", help="scaled-down smoke run")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unicorn-lab",
        description="Producer-side experiment design simulator for ranking systems",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sweep = sub.add_parser("alpha-sweep", help="inaccuracy/cost sweep over the mixing parameter")
    _add_common(sweep)
    sweep.add_argument("--rhos", type=_float_list, help="comma-separated score correlations")
    sweep.add_argument("--tps", type=_float_list, help="comma-separated treatment proportions")
    sweep.add_argument("--alphas", type=_float_list, help="comma-separated mixing parameters")
    sweep.add_argument("--n-slots", type=int, dest="n_slots")
    sweep.add_argument("--n-sessions", type=int, dest="n_sessions")
    sweep.add_argument("--tie-policy", choices=sorted(_TIE_POLICIES), dest="tie_policy")
    sweep.set_defaults(func=cmd_alpha_sweep)

    compare = sub.add_parser("compare", help="ATE-error comparison of designs on the marketplace")
    _add_common(compare)
    compare.add_argument("--methods", type=_str_list, help="comma-separated design names")
    compare.add_argument("--tps", type=_float_list)
    compare.add_argument("--replications", type=int)
    compare.add_argument("--n-producers", type=int, dest="n_producers")
    compare.add_argument("--n-slots", type=int, dest="n_slots")
    compare.add_argument("--n-sessions", type=int, dest="n_sessions")
    compare.add_argument("--log-base", choices=sorted(_LOG_BASES), dest="log_base")
    compare.add_argument("--tie-policy", choices=sorted(_TIE_POLICIES), dest="tie_policy")
    compare.set_defaults(func=cmd_compare)

    verify = sub.add_parser("verify", help="optimality and moment-bound checks")
    _add_common(verify)
    verify.add_argument("--p1-grid", type=_float_list, dest="p1_grid")
    verify.add_argument("--session-sizes", type=_int_list, dest="session_sizes")
    verify.add_argument("--mc-reps", type=int, dest="mc_reps")
    verify.add_argument("--brute-trials", type=int, dest="brute_trials")
    verify.add_argument("--adversarial-only", action="store_true", dest="adversarial_only")
    verify.set_defaults(func=cmd_verify)

    cost = sub.add_parser("cost-report", help="measured vs analytic scoring cost")
    _add_common(cost)
    cost.add_argument("--alphas", type=_float_list)
    cost.add_argument("--n-sessions", type=int, dest="n_sessions")
    cost.add_argument("--n-slots", type=int, dest="n_slots")
    cost.set_defaults(func=cmd_cost_report)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    ns = build_parser().parse_args(argv)
    return ns.func(ns)


if __name__ == "__main__":
    sys.exit(main())
