"""Experiment orchestration: JSON experiment configs, seeded sweep execution
across runs and parameters, and bit-stable tabular outputs.

Subcommands: analyze, simulate, optimize, train, compare. Exit codes:
0 success, 2 configuration error, 3 numerical error.
"""

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as _scipy_stats

from . import analysis, rl
from .errors import (
    ConfigError,
    ConvergenceError,
    DomainError,
    InfiniteMomentError,
    InstabilityError,
    NonFiniteGradientError,
)
from .policies import (
    RedundantAll,
    RedundantNone,
    RedundantSmall,
    RLPolicy,
    StragglerRelaunch,
)
from .simulator import SimConfig, run_simulation
from .stochastic import derive_seed, RngStream
from .workload import WorkloadParams, generate_workload, lambda_for_offered_load

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

_NUMERIC_ERRORS = (
    DomainError,
    InfiniteMomentError,
    ConvergenceError,
    InstabilityError,
    NonFiniteGradientError,
    OverflowError,
    ZeroDivisionError,
)


def format_value(v):
    """Canonical cell format: 9 significant digits, '.' decimal, no grouping."""
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.9g}"
    return str(v)


def _json_cell(v):
    if isinstance(v, (float, np.floating)):
        if math.isnan(v) or math.isinf(v):
            return format_value(v)
        return float(f"{float(v):.9g}")
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, bool) or v is None or isinstance(v, str):
        return v
    return str(v)


def write_table(path, fields, rows, fmt="csv"):
    """Write a list of row dicts as CSV or JSON with canonical formatting."""
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(fields)
            for row in rows:
                writer.writerow([format_value(row[f]) for f in fields])
    elif fmt == "json":
        payload = [{f: _json_cell(row[f]) for f in fields} for row in rows]
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1)
            fh.write("\n")
    else:
        raise ConfigError(f"output.format must be csv or json, got {fmt!r}")


def read_table(path):
    """Read back a CSV written by write_table, as a list of string dicts."""
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ------------------------------------------------------------------
# Configuration


@dataclass
class ExperimentConfig:
    workload: WorkloadParams
    rho0: float | None
    policy: object | None
    num_jobs: int
    runs: int
    warmup_fraction: float
    queue_limit: int
    checkpoint_count: int
    analysis_mode: str
    analysis_r: float
    d_grid: list | None
    w_grid: list | None
    rl: rl.TrainerConfig
    compare_rho0_grid: list
    out_dir: str
    out_format: str
    seed: int
    workers: int

    def arrival_rate(self):
        if self.workload.arrival_rate is not None:
            return self.workload.arrival_rate
        return lambda_for_offered_load(self.rho0, self.workload)

    def loaded_params(self):
        return self.workload.with_arrival_rate(self.arrival_rate())


_REQUIRED = object()


def _need(section, key, path, types, default=_REQUIRED):
    if key not in section:
        if default is _REQUIRED:
            raise ConfigError(f"{path}.{key}: required field is missing")
        return default
    value = section[key]
    if types is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, types if isinstance(types, tuple) else (types,)):
        name = types.__name__ if not isinstance(types, tuple) else "/".join(t.__name__ for t in types)
        raise ConfigError(f"{path}.{key}: expected {name}, got {type(value).__name__}")
    return value


def parse_policy(spec, path="policy"):
    """Build a policy object from its JSON description."""
    if not isinstance(spec, dict):
        raise ConfigError(f"{path}: expected an object")
    variant = _need(spec, "variant", path, str)
    try:
        if variant == "redundant_none":
            return RedundantNone()
        if variant == "redundant_all":
            return RedundantAll(max_extra=int(_need(spec, "max_extra", path, int, 3)))
        if variant == "redundant_small":
            return RedundantSmall(
                r=_need(spec, "r", path, float), d=_need(spec, "d", path, float)
            )
        if variant == "straggler_relaunch":
            w = spec.get("w")
            return StragglerRelaunch(w=float(w) if w is not None else None)
        if variant == "rl":
            checkpoint = _need(spec, "checkpoint", path, str)
            if not os.path.exists(checkpoint):
                raise ConfigError(f"{path}.checkpoint: file not found: {checkpoint}")
            return RLPolicy(rl.load_checkpoint(checkpoint))
    except DomainError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    raise ConfigError(f"{path}.variant: unknown policy {variant!r}")


def load_config(path):
    """Parse and validate an experiment configuration file."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return parse_config(raw)


def parse_config(raw):
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    wsec = raw.get("workload", {})
    if not isinstance(wsec, dict):
        raise ConfigError("workload: expected an object")
    rho0 = wsec.get("rho0")
    lam = wsec.get("lambda")
    if (rho0 is None) == (lam is None):
        raise ConfigError("workload: exactly one of rho0 or lambda must be given")
    try:
        params = WorkloadParams(
            num_nodes=int(_need(wsec, "num_nodes", "workload", int, 20)),
            node_capacity=_need(wsec, "node_capacity", "workload", float, 10.0),
            k_max=int(_need(wsec, "k_max", "workload", int, 10)),
            b_min=_need(wsec, "b_min", "workload", float, 10.0),
            beta=_need(wsec, "beta", "workload", float, 3.0),
            alpha=_need(wsec, "alpha", "workload", float, 3.0),
            arrival_rate=float(lam) if lam is not None else None,
            service_dist=_need(wsec, "service_dist", "workload", str, "pareto"),
            service_max=(
                float(wsec["service_max"]) if wsec.get("service_max") is not None else None
            ),
        )
    except DomainError as exc:
        raise ConfigError(f"workload: {exc}") from exc
    if rho0 is not None and not (0 < float(rho0) < 1):
        raise ConfigError("workload.rho0: must lie in (0, 1)")

    policy = parse_policy(raw["policy"]) if "policy" in raw else None

    ssec = raw.get("sim", {})
    asec = raw.get("analysis", {})
    mode = _need(asec, "mode", "analysis", str, "redsmall")
    if mode not in ("redsmall", "relaunch"):
        raise ConfigError("analysis.mode: must be 'redsmall' or 'relaunch'")
    d_grid = asec.get("d_grid")
    w_grid = asec.get("w_grid")
    for name, grid in (("d_grid", d_grid), ("w_grid", w_grid)):
        if grid is not None:
            if not isinstance(grid, list) or not grid:
                raise ConfigError(f"analysis.{name}: must be a non-empty list")

    rsec = raw.get("rl", {})
    try:
        trainer = rl.TrainerConfig(
            gamma=_need(rsec, "gamma", "rl", float, 0.9),
            learn_rate=_need(rsec, "learn_rate", "rl", float, 1e-3),
            episode_jobs=int(_need(rsec, "episode_jobs", "rl", int, 128)),
            batch_size=int(_need(rsec, "batch_size", "rl", int, 64)),
            train_repeats=int(_need(rsec, "train_repeats", "rl", int, 4)),
            target_sync_period=int(_need(rsec, "target_sync_period", "rl", int, 10)),
            total_episodes=int(_need(rsec, "total_episodes", "rl", int, 200)),
            seed=int(_need(rsec, "seed", "rl", int, raw.get("seed", 0))),
            huber_delta=_need(rsec, "huber_delta", "rl", float, 1.0),
            replay_capacity=int(_need(rsec, "replay_capacity", "rl", int, 10_000)),
            hidden_size=int(_need(rsec, "hidden_size", "rl", int, 64)),
            queue_limit=int(_need(rsec, "queue_limit", "rl", int, 100_000)),
        )
    except DomainError as exc:
        raise ConfigError(f"rl: {exc}") from exc

    csec = raw.get("compare", {})
    grid = csec.get("rho0_grid", [0.4, 0.6, 0.9])
    if not isinstance(grid, list) or not grid:
        raise ConfigError("compare.rho0_grid: must be a non-empty list")

    osec = raw.get("output", {})
    fmt = _need(osec, "format", "output", str, "csv")
    if fmt not in ("csv", "json"):
        raise ConfigError("output.format: must be 'csv' or 'json'")

    try:
        return ExperimentConfig(
            workload=params,
            rho0=float(rho0) if rho0 is not None else None,
            policy=policy,
            num_jobs=int(_need(ssec, "num_jobs", "sim", int, 20_000)),
            runs=int(_need(ssec, "runs", "sim", int, 1)),
            warmup_fraction=_need(ssec, "warmup_fraction", "sim", float, 0.0),
            queue_limit=int(_need(ssec, "queue_limit", "sim", int, 1000)),
            checkpoint_count=int(_need(ssec, "checkpoint_count", "sim", int, 10)),
            analysis_mode=mode,
            analysis_r=_need(asec, "r", "analysis", float, 2.0),
            d_grid=[float(x) for x in d_grid] if d_grid is not None else None,
            w_grid=[float(x) for x in w_grid] if w_grid is not None else None,
            rl=trainer,
            compare_rho0_grid=[float(x) for x in grid],
            out_dir=_need(osec, "dir", "output", str, "out"),
            out_format=fmt,
            seed=int(raw.get("seed", 0)),
            workers=int(raw.get("workers", 1)),
        )
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc


def _sim_config(config, run_index):
    return SimConfig(
        num_jobs=config.num_jobs,
        seed=derive_seed(config.seed, run_index, 1),
        warmup_fraction=config.warmup_fraction,
        queue_limit=config.queue_limit,
        checkpoint_count=config.checkpoint_count,
    )


def policy_label(policy):
    if isinstance(policy, RedundantNone):
        return "redundant_none"
    if isinstance(policy, RedundantAll):
        return f"redundant_all(+{policy.max_extra})"
    if isinstance(policy, RedundantSmall):
        return f"redundant_small(r={format_value(policy.r)},d={format_value(policy.d)})"
    if isinstance(policy, StragglerRelaunch):
        w = "per_job" if policy.w is None else format_value(policy.w)
        return f"straggler_relaunch(w={w})"
    if isinstance(policy, RLPolicy):
        return "rl"
    return type(policy).__name__


def policy_param_value(policy):
    if isinstance(policy, RedundantSmall):
        return policy.d
    if isinstance(policy, StragglerRelaunch):
        return policy.w
    return None


def _one_run(args):
    params, rho0_or_lam_params, policy, simcfg, workload_seed, num_jobs = args
    workload = generate_workload(
        rho0_or_lam_params, num_jobs, RngStream(workload_seed)
    )
    return run_simulation(workload, policy, params, simcfg)


def run_replications(config, policy, rho0=None):
    """Simulate `runs` seeded replications of one policy; returns metrics list.

    Workload and service-time streams are derived from the master seed per
    run index, so two policies evaluated under the same config see paired
    workloads.
    """
    params = config.workload
    loaded = (
        params.with_arrival_rate(lambda_for_offered_load(rho0, params))
        if rho0 is not None
        else config.loaded_params()
    )
    tasks = [
        (
            params,
            loaded,
            policy,
            _sim_config(config, i),
            derive_seed(config.seed, i, 0),
            config.num_jobs,
        )
        for i in range(config.runs)
    ]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            return list(pool.map(_one_run, tasks))
    return [_one_run(t) for t in tasks]


def _ci95(values):
    values = np.asarray(values, dtype=float)
    n = len(values)
    if n < 2:
        return math.nan
    halfwidth = _scipy_stats.t.ppf(0.975, n - 1) * values.std(ddof=1) / math.sqrt(n)
    return float(halfwidth)


SUMMARY_FIELDS = [
    "policy",
    "rho0",
    "param_value",
    "mean_T",
    "ci95_T",
    "mean_slowdown",
    "ci95_slowdown",
    "p99_slowdown",
    "unstable",
]

RUN_FIELDS = [
    "policy",
    "rho0",
    "param_value",
    "run",
    "mean_T",
    "mean_slowdown",
    "p99_slowdown",
    "utilization",
    "unstable",
]

TAIL_FIELDS = ["policy", "rho0", "x", "pr_slowdown_gt"]


def summarize_replications(policy, rho0, metrics_list):
    """(summary row, per-run rows, tail rows) for one policy's replications."""
    label = policy_label(policy)
    pv = policy_param_value(policy)
    mean_ts = [m.mean_response for m in metrics_list]
    mean_sl = [m.mean_slowdown for m in metrics_list]
    p99 = [m.p99_slowdown for m in metrics_list]
    summary = {
        "policy": label,
        "rho0": rho0,
        "param_value": pv,
        "mean_T": float(np.mean(mean_ts)),
        "ci95_T": _ci95(mean_ts),
        "mean_slowdown": float(np.mean(mean_sl)),
        "ci95_slowdown": _ci95(mean_sl),
        "p99_slowdown": float(np.mean(p99)),
        "unstable": any(m.unstable for m in metrics_list),
    }
    run_rows = [
        {
            "policy": label,
            "rho0": rho0,
            "param_value": pv,
            "run": i,
            "mean_T": m.mean_response,
            "mean_slowdown": m.mean_slowdown,
            "p99_slowdown": m.p99_slowdown,
            "utilization": m.utilization,
            "unstable": m.unstable,
        }
        for i, m in enumerate(metrics_list)
    ]
    tail = np.mean([m.tail_probs for m in metrics_list], axis=0)
    tail_rows = [
        {"policy": label, "rho0": rho0, "x": x, "pr_slowdown_gt": float(pr)}
        for x, pr in zip(metrics_list[0].tail_grid, tail)
    ]
    return summary, run_rows, tail_rows


# ------------------------------------------------------------------
# Commands


def _curve_rows(points):
    return [{f: getattr(pt, f) for f in analysis.CURVE_FIELDS} for pt in points]


def _sweep(config, asymptotic):
    params = config.workload
    if config.rho0 is None:
        raise ConfigError("workload.rho0: analysis commands need an offered load")
    if config.analysis_mode == "redsmall":
        return analysis.optimize_demand_threshold(
            params, config.analysis_r, config.rho0, config.d_grid, asymptotic
        )
    return analysis.optimize_relaunch_factor(
        params, config.rho0, config.w_grid, asymptotic
    )


def cmd_analyze(config):
    """Write the parameter-sweep curve for both Erlang-C variants."""
    os.makedirs(config.out_dir, exist_ok=True)
    ext = config.out_format
    written = []
    for variant, asymptotic in (("mgc", False), ("asymptotic", True)):
        _, curve = _sweep(config, asymptotic)
        path = os.path.join(
            config.out_dir, f"analyze_{config.analysis_mode}_{variant}.{ext}"
        )
        write_table(path, analysis.CURVE_FIELDS, _curve_rows(curve), ext)
        written.append(path)
    return written


def cmd_optimize(config):
    """Write the optimizer's curve plus the chosen parameter value."""
    os.makedirs(config.out_dir, exist_ok=True)
    ext = config.out_format
    best, curve = _sweep(config, asymptotic=False)
    name = "d" if config.analysis_mode == "redsmall" else "w"
    curve_path = os.path.join(
        config.out_dir, f"optimize_{config.analysis_mode}_curve.{ext}"
    )
    write_table(curve_path, analysis.CURVE_FIELDS, _curve_rows(curve), ext)
    result_path = os.path.join(
        config.out_dir, f"optimize_{config.analysis_mode}_result.{ext}"
    )
    write_table(
        result_path,
        ["rho0", "param_name", "param_value"],
        [{"rho0": config.rho0, "param_name": name, "param_value": best}],
        ext,
    )
    return [curve_path, result_path]


def cmd_simulate(config):
    """Run seeded replications of the configured policy and write metrics."""
    if config.policy is None:
        raise ConfigError("policy: required for the simulate command")
    os.makedirs(config.out_dir, exist_ok=True)
    ext = config.out_format
    metrics = run_replications(config, config.policy)
    summary, run_rows, tail_rows = summarize_replications(
        config.policy, config.rho0, metrics
    )
    paths = []
    for name, fields, rows in (
        ("simulate_runs", RUN_FIELDS, run_rows),
        ("simulate_summary", SUMMARY_FIELDS, [summary]),
        ("simulate_tail", TAIL_FIELDS, tail_rows),
    ):
        path = os.path.join(config.out_dir, f"{name}.{ext}")
        write_table(path, fields, rows, ext)
        paths.append(path)
    return paths


def cmd_train(config):
    """Train the Q-learning scheduler; write the checkpoint and curves."""
    if config.rho0 is None:
        raise ConfigError("workload.rho0: training needs an offered load")
    os.makedirs(config.out_dir, exist_ok=True)
    net, curves = rl.run_training(config.workload, config.rho0, config.rl)
    checkpoint = os.path.join(config.out_dir, "checkpoint.json")
    rl.save_checkpoint(net, checkpoint)
    curve_path = os.path.join(config.out_dir, f"train_curves.{config.out_format}")
    rows = [
        {"episode": c.episode, "mean_loss": c.mean_loss, "mean_reward": c.mean_reward}
        for c in curves
    ]
    write_table(curve_path, ["episode", "mean_loss", "mean_reward"], rows, config.out_format)
    return [checkpoint, curve_path]


def cmd_compare(config):
    """Optimize both policies per offered load, then simulate them and the
    baselines with paired seeds; one summary row per (policy, rho0)."""
    os.makedirs(config.out_dir, exist_ok=True)
    ext = config.out_format
    rows = []
    for rho0 in config.compare_rho0_grid:
        d_star, _ = analysis.optimize_demand_threshold(
            config.workload, config.analysis_r, rho0, config.d_grid
        )
        w_star, _ = analysis.optimize_relaunch_factor(
            config.workload, rho0, config.w_grid
        )
        policies = [
            RedundantNone(),
            RedundantAll(),
            RedundantSmall(config.analysis_r, d_star),
            StragglerRelaunch(max(w_star, 1.0)),
        ]
        for policy in policies:
            metrics = run_replications(config, policy, rho0=rho0)
            summary, _, _ = summarize_replications(policy, rho0, metrics)
            rows.append(summary)
    path = os.path.join(config.out_dir, f"compare.{ext}")
    write_table(path, SUMMARY_FIELDS, rows, ext)
    return [path]


COMMANDS = {
    "analyze": cmd_analyze,
    "simulate": cmd_simulate,
    "optimize": cmd_optimize,
    "train": cmd_train,
    "compare": cmd_compare,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="stragglerlab",
        description="Straggler-mitigation scheduling experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")
        p.add_argument("--runs", type=int, help="replication count (overrides config)")
        p.add_argument("--format", choices=["csv", "json"], help="output format")
        p.add_argument("--workers", type=int, help="parallel simulation processes")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if args.out is not None:
            config.out_dir = args.out
        if args.seed is not None:
            config.seed = args.seed
        if args.runs is not None:
            if args.runs < 1:
                raise ConfigError("--runs: must be at least 1")
            config.runs = args.runs
        if args.format is not None:
            config.out_format = args.format
        if args.workers is not None:
            config.workers = max(1, args.workers)
        written = COMMANDS[args.command](config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _NUMERIC_ERRORS as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
