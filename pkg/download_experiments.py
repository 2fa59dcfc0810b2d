"""
Power-Constrained Download Scheduling Experiments

Command-line driver that reproduces the evaluation of the schedulers:

- v-sweep:      indexing policy over a grid of tradeoff values V, plus the LP optimum
- robustness:   the same sweep under geometric, uniform and Poisson file lengths
- monte-carlo:  random systems (arrival/file parameters or power/success
                parameters) at a fixed V, relative error against the LP optimum
- oracle-only:  occupancy LP summary (and optional LP file dump)
- single-run:   one indexing-policy run at the configured V
- single-user:  frame-based policy of one user (or each user) alone over the V grid

Results are written as CSV with a fixed column order, and run metadata as
JSON next to the table (<out>.meta.json). Identical plans and seeds
reproduce byte-identical files. --dump-slots writes the per-slot trace of the
first run of single-run and single-user modes.

Usage:
    download-sched --config configs/baseline.json --mode v-sweep --fast --out results/sweep.csv
"""

import argparse
import json
import math
import sys
import warnings
from dataclasses import dataclass
from multiprocessing import Pool
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src import __version__
from src.core_model import (
    FileLengthModel,
    QueueCeilingViolation,
    SubsystemSpec,
    SystemSpec,
    baseline_system,
    robustness_system,
)
from src.mdp_oracle import (
    LPNumericalError,
    OracleSizeError,
    build_occupancy_lp,
    lp_summary,
    solve_system,
    write_lp_file,
)
from src.multi_user import multi_user_summary, run_multi_user
from src.sim_engine import DegenerateComparisonError, SimTrace, matched_dynamics, relative_error
from src.single_user import run_single_user, single_user_summary
from src.utils import (
    ExperimentConstants,
    dataclass_to_dict,
    format_float_list,
    format_percentage,
    monte_carlo_stderr,
    print_banner,
    save_json_data,
)

MODES = ("single-run", "single-user", "v-sweep", "monte-carlo", "oracle-only", "robustness")
SWEEP_MODES = ("v-sweep", "robustness", "single-user")
SLOT_DUMP_MODES = ("single-run", "single-user")
MONTE_CARLO_KINDS = ("system", "control")
DISTRIBUTIONS = ("geometric", "uniform", "poisson")

RUN_COLUMNS = [
    "V",
    "replicate",
    "seed",
    "slots",
    "weighted_throughput_expected",
    "weighted_throughput_realized",
    "throughput_stderr",
    "avg_power",
    "avg_Q",
    "max_Q",
    "ceiling",
]
V_SWEEP_COLUMNS = ["policy"] + RUN_COLUMNS + ["opt_value", "relative_error"]
ROBUSTNESS_COLUMNS = ["distribution"] + RUN_COLUMNS
SINGLE_USER_COLUMNS = ["user", "replicate", "V", "seed", "slots", "throughput", "avg_power", "max_Q", "ceiling"]
MONTE_CARLO_COLUMNS = [
    "replicate",
    "kind",
    "seed",
    "opt_value",
    "weighted_throughput_expected",
    "weighted_throughput_realized",
    "avg_power",
    "max_Q",
    "ceiling",
    "relative_error",
    "rejected_draws",
    "lp_failed",
]
ORACLE_COLUMNS = [
    "opt_value",
    "variable_count",
    "constraint_count",
    "duality_gap",
    "flow_residual",
    "normalization_residual",
    "power_slack",
    "dual_power",
    "iterations",
]
SLOT_COLUMNS = ["slot", "backlog", "active", "actions", "power", "expected_reward", "realized_reward"]


class ConfigError(ValueError):
    """Malformed configuration file or command-line value."""


# ============================================================================
# CONFIGURATION
# ============================================================================


@dataclass
class ExperimentPlan:
    """
    Everything one invocation runs.

    Attributes:
        system: Policy-side system; its tradeoff is the V of single runs and Monte-Carlo
        mode: One of MODES
        v_grid: Tradeoff values for sweep modes
        replicates: Independent replicates per grid point (Monte-Carlo: systems drawn)
        horizon: Slots per simulation
        seed: Master seed
        output: CSV path (None prints the table)
        file_models: True file-length model per user (None = matched geometric)
        monte_carlo_kind: "system" randomizes lambda and mu, "control" randomizes p(1) and q(1)
        workers: Process-pool size
        dump_lp: Optional CPLEX-LP output path
        user: Single-user mode: index of the user to run (None runs every user)
        dump_slots: Optional CSV path for the per-slot trace of the first run
        verbose: Print progress and summaries
    """

    system: SystemSpec
    mode: str = "v-sweep"
    v_grid: Tuple[float, ...] = ExperimentConstants.DEFAULT_V_GRID
    replicates: int = 1
    horizon: int = ExperimentConstants.DEFAULT_HORIZON
    seed: int = 0
    output: Optional[Path] = None
    file_models: Optional[Tuple[FileLengthModel, ...]] = None
    monte_carlo_kind: str = "system"
    workers: int = 1
    dump_lp: Optional[Path] = None
    user: Optional[int] = None
    dump_slots: Optional[Path] = None
    verbose: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"Mode '{self.mode}' must be one of {', '.join(MODES)}")
        self.v_grid = tuple(float(v) for v in self.v_grid)
        if self.mode in SWEEP_MODES and not self.v_grid:
            raise ConfigError(f"Mode '{self.mode}' needs a non-empty v_grid")
        if any(not math.isfinite(v) or v < 0 for v in self.v_grid):
            raise ConfigError(f"v_grid {list(self.v_grid)} must contain finite values >= 0")
        if self.replicates < 1:
            raise ConfigError(f"replicates {self.replicates} must be >= 1")
        if self.horizon < 1:
            raise ConfigError(f"horizon {self.horizon} must be >= 1")
        if self.seed < 0:
            raise ConfigError(f"seed {self.seed} must be >= 0")
        if self.workers < 1:
            raise ConfigError(f"workers {self.workers} must be >= 1")
        if self.monte_carlo_kind not in MONTE_CARLO_KINDS:
            raise ConfigError(f"Monte-Carlo kind '{self.monte_carlo_kind}' must be 'system' or 'control'")
        if self.file_models is not None and len(self.file_models) != self.system.n_users:
            raise ConfigError(f"{len(self.file_models)} file models given for {self.system.n_users} users")
        if self.user is not None and not 0 <= self.user < self.system.n_users:
            raise ConfigError(f"user {self.user} must be in [0, {self.system.n_users - 1}]")
        if self.dump_slots is not None and self.mode not in SLOT_DUMP_MODES:
            raise ConfigError(f"--dump-slots needs mode {' or '.join(SLOT_DUMP_MODES)}, not '{self.mode}'")

    def metadata(self) -> Dict[str, Any]:
        return {
            "package_version": __version__,
            "mode": self.mode,
            "v_grid": list(self.v_grid),
            "replicates": self.replicates,
            "horizon": self.horizon,
            "seed": self.seed,
            "monte_carlo_kind": self.monte_carlo_kind,
            "user": self.user,
            "system": dataclass_to_dict(self.system),
            "file_models": [m.describe() for m in self.file_models] if self.file_models else None,
        }


def _at(path: str, key: Any) -> str:
    return f"{path}[{key}]" if isinstance(key, int) else (f"{path}.{key}" if path else str(key))


def _number(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {json.dumps(value)}")
    return float(value)


def _integer(value: Any, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}: expected an integer, got {json.dumps(value)}")
    return value


def _number_list(value: Any, path: str) -> Tuple[float, ...]:
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{path}: expected a non-empty list of numbers")
    return tuple(_number(item, _at(path, i)) for i, item in enumerate(value))


def _require(mapping: Dict[str, Any], key: str, path: str) -> Any:
    if key not in mapping:
        raise ConfigError(f"{_at(path, key)}: missing required field")
    return mapping[key]


def parse_file_model(raw: Any, path: str) -> FileLengthModel:
    """Build a FileLengthModel from {"kind": ..., parameters}."""
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected an object")
    kind = _require(raw, "kind", path)
    try:
        if kind == "geometric":
            return FileLengthModel.geometric(_number(_require(raw, "mu", path), _at(path, "mu")))
        if kind == "exponential":
            return FileLengthModel.exponential(_number(_require(raw, "mean", path), _at(path, "mean")))
        if kind == "uniform":
            lo = _integer(_require(raw, "lo", path), _at(path, "lo"))
            hi = _integer(_require(raw, "hi", path), _at(path, "hi"))
            return FileLengthModel.uniform(lo, hi)
        if kind == "poisson":
            return FileLengthModel.poisson(_number(_require(raw, "mean", path), _at(path, "mean")))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    raise ConfigError(f"{_at(path, 'kind')}: unknown file model '{kind}'")


def parse_system_config(raw: Any) -> Tuple[SystemSpec, Optional[Tuple[FileLengthModel, ...]], Dict[str, Any]]:
    """
    Validate a decoded configuration document.

    Returns:
        (system, per-user file models or None, experiment block)

    Raises:
        ConfigError: naming the JSON path of the offending field
    """
    if not isinstance(raw, dict):
        raise ConfigError("top level: expected an object")

    entries = _require(raw, "subsystems", "")
    if not isinstance(entries, list) or not entries:
        raise ConfigError("subsystems: expected a non-empty list")

    subsystems: List[SubsystemSpec] = []
    models: List[Optional[FileLengthModel]] = []
    for n, entry in enumerate(entries):
        path = f"subsystems[{n}]"
        if not isinstance(entry, dict):
            raise ConfigError(f"{path}: expected an object")
        idle_rate = _number(_require(entry, "idle_rate", path), _at(path, "idle_rate"))
        mean_size = _number(_require(entry, "mean_file_size", path), _at(path, "mean_file_size"))
        success = _number_list(_require(entry, "success_prob", path), _at(path, "success_prob"))
        power = _number_list(_require(entry, "power", path), _at(path, "power"))
        weight = _number(entry.get("weight", 1.0), _at(path, "weight"))
        name = entry.get("name", f"user-{n + 1}")
        try:
            subsystems.append(SubsystemSpec(idle_rate, mean_size, success, power, weight, str(name)))
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if "file_model" in entry:
            models.append(parse_file_model(entry["file_model"], _at(path, "file_model")))
        else:
            models.append(None)

    try:
        system = SystemSpec(
            subsystems=tuple(subsystems),
            power_budget=_number(_require(raw, "power_budget", ""), "power_budget"),
            max_concurrent=_integer(raw.get("max_concurrent", 1), "max_concurrent"),
            tradeoff=_number(raw.get("tradeoff", ExperimentConstants.MONTE_CARLO_TRADEOFF), "tradeoff"),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"top level: {exc}") from exc

    experiment = raw.get("experiment", {})
    if not isinstance(experiment, dict):
        raise ConfigError("experiment: expected an object")

    if all(m is None for m in models):
        return system, None, experiment
    matched = tuple(
        m if m is not None else FileLengthModel.geometric(1.0 / s.mean_file_size) for m, s in zip(models, subsystems)
    )
    return system, matched, experiment


def load_system_config(path: Path) -> Tuple[SystemSpec, Optional[Tuple[FileLengthModel, ...]], Dict[str, Any]]:
    """
    Read and validate a JSON configuration file.

    Raises:
        ConfigError: unreadable file, JSON syntax error (with line and column) or schema error
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read configuration ({exc.strerror})") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    try:
        return parse_system_config(raw)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def parse_v_grid(text: str) -> Tuple[float, ...]:
    """Parse "5,10,20" into (5.0, 10.0, 20.0)."""
    try:
        values = tuple(float(item) for item in text.split(",") if item.strip())
    except ValueError as exc:
        raise ConfigError(f"--v-grid: cannot parse '{text}' as a comma-separated list of numbers") from exc
    if not values:
        raise ConfigError("--v-grid: empty list")
    return values


# ============================================================================
# WORKERS
# ============================================================================


def _map(func: Callable, tasks: Sequence, workers: int) -> List:
    """Ordered map, in a process pool when workers > 1."""
    if workers <= 1 or len(tasks) <= 1:
        return [func(task) for task in tasks]
    with Pool(processes=min(workers, len(tasks))) as pool:
        return pool.map(func, tasks)


def _indexing_run(task: Tuple) -> Dict[str, Any]:
    system, v, seed, replicate, horizon, file_models, labels = task
    trace = run_multi_user(
        system.with_tradeoff(v),
        horizon,
        seed=seed,
        file_models=file_models,
        keep_series=True,
        replicate=replicate,
    )
    row = multi_user_summary(trace, v, seed)
    row["replicate"] = replicate
    row["throughput_stderr"] = trace.throughput_stderr()
    row.update(labels)
    return row


def _oracle_value(system: SystemSpec) -> Tuple[Optional[float], Optional[Dict[str, Any]]]:
    try:
        lp, solution = solve_system(system)
    except OracleSizeError as exc:
        warnings.warn(f"LP optimum skipped: {exc}")
        return None, None
    return solution.opt_value, lp_summary(lp, solution)


def _safe_relative_error(obj: float, opt: Optional[float]) -> float:
    if opt is None:
        return math.nan
    try:
        return relative_error(obj, opt)
    except DegenerateComparisonError:
        return math.nan


# ============================================================================
# EXPERIMENTS
# ============================================================================


def run_v_sweep(plan: ExperimentPlan) -> Tuple[pd.DataFrame, Dict[str, Any]]:
    """
    Indexing policy at every V of the grid, then one LP optimum row.

    Returns:
        (table with V_SWEEP_COLUMNS, metadata)
    """
    tasks = [
        (plan.system, v, plan.seed, r, plan.horizon, plan.file_models, {"policy": "indexing"})
        for v in plan.v_grid
        for r in range(plan.replicates)
    ]
    rows = _map(_indexing_run, tasks, plan.workers)

    opt, summary = _oracle_value(plan.system)
    for row in rows:
        row["opt_value"] = math.nan if opt is None else opt
        row["relative_error"] = _safe_relative_error(row["weighted_throughput_expected"], opt)
    if opt is not None:
        rows.append({"policy": "lp-opt", "opt_value": opt, "weighted_throughput_expected": opt})

    table = pd.DataFrame(rows, columns=V_SWEEP_COLUMNS)
    if plan.verbose:
        _print_sweep(table, plan)
    return table, {"lp": summary}


def robustness_models(system: SystemSpec) -> Dict[str, Tuple[FileLengthModel, ...]]:
    """
    Matched-mean file length models for every user.

    Uniform lengths are the integers [floor(B/2), 2B - floor(B/2)]; for
    B = 10, 5, 3 that gives [5, 15], [2, 8], [1, 5].
    """
    uniform = []
    for spec in system.subsystems:
        mean = spec.mean_file_size
        lo = max(1, int(math.floor(mean / 2.0)))
        hi = int(round(2.0 * mean - lo))
        if not math.isclose((lo + hi) / 2.0, mean):
            warnings.warn(f"{spec.label}: uniform lengths [{lo}, {hi}] have mean {(lo + hi) / 2.0}, not {mean}")
        uniform.append(FileLengthModel.uniform(lo, hi))
    return {
        "geometric": tuple(FileLengthModel.geometric(1.0 / s.mean_file_size) for s in system.subsystems),
        "uniform": tuple(uniform),
        "poisson": tuple(FileLengthModel.poisson(s.mean_file_size) for s in system.subsystems),
    }


def run_robustness(plan: ExperimentPlan) -> Tuple[pd.DataFrame, Dict[str, Any]]:
    """
    The V-sweep repeated under each file length distribution.

    Returns:
        (table with ROBUSTNESS_COLUMNS, metadata)
    """
    try:
        models = robustness_models(plan.system)
    except ValueError as exc:
        raise ConfigError(f"robustness models: {exc}") from exc

    tasks = [
        (plan.system, v, plan.seed, r, plan.horizon, models[name], {"distribution": name})
        for name in DISTRIBUTIONS
        for v in plan.v_grid
        for r in range(plan.replicates)
    ]
    rows = _map(_indexing_run, tasks, plan.workers)
    table = pd.DataFrame(rows, columns=ROBUSTNESS_COLUMNS)

    if plan.verbose:
        print_banner("ROBUSTNESS: REALIZED THROUGHPUT BY FILE LENGTH DISTRIBUTION")
        print(robustness_pivot(table).to_string(float_format=lambda x: f"{x:.4f}"))
    return table, {"file_models": {name: [m.describe() for m in ms] for name, ms in models.items()}}


def robustness_pivot(table: pd.DataFrame) -> pd.DataFrame:
    """Mean realized throughput with one row per V and one column per distribution."""
    pivot = table.pivot_table(
        index="V", columns="distribution", values="weighted_throughput_realized", aggfunc="mean"
    )
    return pivot.reindex(columns=[d for d in DISTRIBUTIONS if d in pivot.columns])


def _draw_open_unit(rng: np.random.Generator, minimum: float) -> Tuple[float, int]:
    """Uniform draw in [minimum, 1), counting rejected draws below minimum."""
    rejected = 0
    while True:
        u = float(rng.random())
        if u >= minimum:
            return u, rejected
        rejected += 1


def randomize_system(
    system: SystemSpec,
    kind: str,
    rng: np.random.Generator,
    minimum: float = ExperimentConstants.MONTE_CARLO_MIN_DRAW,
) -> Tuple[SystemSpec, int]:
    """
    Draw a random variant of `system`.

    kind "system" redraws lambda_n and the packet rate mu_n (B_n = 1/mu_n,
    packet success kept); kind "control" redraws p_n(a) and the packet
    success q_n(a) = phi_n(a) B_n of every non-idle action.

    Returns:
        (randomized system, number of draws rejected below `minimum`)
    """
    rejected = 0
    subsystems = []
    for spec in system.subsystems:
        packet_success = [phi * spec.mean_file_size for phi in spec.success_prob]
        if kind == "system":
            idle_rate, r1 = _draw_open_unit(rng, minimum)
            mu, r2 = _draw_open_unit(rng, minimum)
            rejected += r1 + r2
            mean_size = 1.0 / mu
            success = tuple(min(1.0, q) * mu for q in packet_success)
            power = spec.power
        else:
            idle_rate, mean_size = spec.idle_rate, spec.mean_file_size
            powers = [0.0]
            successes = [0.0]
            for _ in spec.non_idle_actions:
                p, r1 = _draw_open_unit(rng, minimum)
                q, r2 = _draw_open_unit(rng, minimum)
                rejected += r1 + r2
                powers.append(p)
                successes.append(q / mean_size)
            power, success = tuple(powers), tuple(successes)
        subsystems.append(
            SubsystemSpec(idle_rate, mean_size, success, tuple(power), spec.weight, spec.name)
        )
    randomized = SystemSpec(
        subsystems=tuple(subsystems),
        power_budget=system.power_budget,
        max_concurrent=system.max_concurrent,
        tradeoff=system.tradeoff,
    )
    return randomized, rejected


def _monte_carlo_replicate(task: Tuple) -> Dict[str, Any]:
    system, kind, seed, replicate, horizon = task
    rng = np.random.default_rng(np.random.SeedSequence([seed, replicate, 1]))
    randomized, rejected = randomize_system(system, kind, rng)
    row: Dict[str, Any] = {"replicate": replicate, "kind": kind, "seed": seed, "rejected_draws": rejected}

    try:
        _, solution = solve_system(randomized)
    except LPNumericalError:
        row["lp_failed"] = True
        return row

    trace = run_multi_user(randomized, horizon, seed=seed, replicate=replicate)
    row.update(
        {
            "opt_value": solution.opt_value,
            "weighted_throughput_expected": trace.throughput_expected,
            "weighted_throughput_realized": trace.throughput_realized,
            "avg_power": trace.avg_power,
            "max_Q": trace.max_queue,
            "ceiling": trace.ceiling,
            "relative_error": _safe_relative_error(trace.throughput_expected, solution.opt_value),
            "lp_failed": False,
        }
    )
    return row


def run_monte_carlo(plan: ExperimentPlan) -> Tuple[pd.DataFrame, Dict[str, Any]]:
    """
    Relative error of the indexing policy over randomly drawn systems.

    Replicates whose LP fails are reported and excluded from the mean.

    Returns:
        (table with MONTE_CARLO_COLUMNS, metadata with the summary)
    """
    tasks = [(plan.system, plan.monte_carlo_kind, plan.seed, r, plan.horizon) for r in range(plan.replicates)]
    rows = _map(_monte_carlo_replicate, tasks, plan.workers)
    table = pd.DataFrame(rows, columns=MONTE_CARLO_COLUMNS)
    table["lp_failed"] = table["lp_failed"].astype(bool)

    failed = int(table["lp_failed"].sum())
    if failed:
        warnings.warn(f"{failed} of {plan.replicates} Monte-Carlo replicates failed the LP solve and were excluded")
    errors = table.loc[~table["lp_failed"], "relative_error"].dropna().to_numpy()

    summary = {
        "kind": plan.monte_carlo_kind,
        "tradeoff": plan.system.tradeoff,
        "replicates": plan.replicates,
        "lp_failures": failed,
        "mean_relative_error": float(errors.mean()) if errors.size else None,
        "stderr_relative_error": monte_carlo_stderr(errors),
        "max_relative_error": float(errors.max()) if errors.size else None,
        "min_draw": ExperimentConstants.MONTE_CARLO_MIN_DRAW,
        "rejected_draws": int(table["rejected_draws"].sum()),
        "note": "parameters drawn uniformly on (0, 1); draws below min_draw are rejected and redrawn",
    }
    if plan.verbose:
        print_banner(f"MONTE-CARLO ({plan.monte_carlo_kind} parameters, V = {plan.system.tradeoff:g})")
        print(f"{'Replicates:':30s} {plan.replicates}")
        print(f"{'LP failures:':30s} {failed}")
        if errors.size:
            print(f"{'Mean relative error:':30s} {format_percentage(summary['mean_relative_error'])}")
            print(f"{'Max relative error:':30s} {format_percentage(summary['max_relative_error'])}")
        print(f"{'Rejected draws:':30s} {summary['rejected_draws']}")
    return table, {"monte_carlo": summary}


def run_oracle_only(plan: ExperimentPlan) -> Tuple[pd.DataFrame, Dict[str, Any]]:
    """Solve the occupancy LP of the configured system."""
    lp, solution = solve_system(plan.system)
    summary = lp_summary(lp, solution)
    if plan.verbose:
        print_banner("OCCUPANCY LP")
        for key in ORACLE_COLUMNS:
            print(f"{key + ':':30s} {summary[key]}")
    return pd.DataFrame([summary], columns=ORACLE_COLUMNS), {"lp": summary}


def run_single(plan: ExperimentPlan) -> Tuple[pd.DataFrame, Dict[str, Any]]:
    """One indexing-policy run per replicate at the configured V."""
    v = plan.system.tradeoff
    tasks = [(plan.system, v, plan.seed, r, plan.horizon, plan.file_models, {}) for r in range(plan.replicates)]
    rows = _map(_indexing_run, tasks, plan.workers)
    table = pd.DataFrame(rows, columns=RUN_COLUMNS)
    if plan.verbose:
        print_banner(f"SINGLE RUN (V = {v:g}, {plan.horizon} slots)")
        for key in RUN_COLUMNS:
            print(f"{key + ':':30s} {format_float_list(table[key])}")
    return table, {}


def _selected_users(plan: ExperimentPlan) -> List[int]:
    return list(range(plan.system.n_users)) if plan.user is None else [plan.user]


def _single_user_trace(plan: ExperimentPlan, user: int, v: float, replicate: int, record_slots: int = 0) -> SimTrace:
    spec = plan.system.subsystem(user)
    dynamics = matched_dynamics(spec, plan.file_models[user]) if plan.file_models else None
    return run_single_user(
        spec,
        v,
        plan.system.power_budget,
        plan.horizon,
        seed=plan.seed,
        dynamics=dynamics,
        record_slots=record_slots,
        replicate=replicate,
    )


def _single_user_run(task: Tuple) -> Dict[str, Any]:
    plan, user, v, replicate = task
    row = single_user_summary(_single_user_trace(plan, user, v, replicate), v, plan.seed)
    row.update({"user": user, "replicate": replicate})
    return row


def run_single_user_sweep(plan: ExperimentPlan) -> Tuple[pd.DataFrame, Dict[str, Any]]:
    """
    Frame-based policy of each selected user alone, at every V of the grid.

    The user's power budget is the system budget.

    Returns:
        (table with SINGLE_USER_COLUMNS, metadata)
    """
    users = _selected_users(plan)
    tasks = [(plan, n, v, r) for n in users for v in plan.v_grid for r in range(plan.replicates)]
    rows = _map(_single_user_run, tasks, plan.workers)
    table = pd.DataFrame(rows, columns=SINGLE_USER_COLUMNS)

    if plan.verbose:
        print_banner(f"SINGLE USER ({plan.horizon} slots, beta = {plan.system.power_budget:g})")
        print(f"{'user':>6s} {'V':>8s} {'throughput':>12s} {'power':>8s} {'max Q':>10s} {'ceiling':>10s}")
        for _, row in table.iterrows():
            print(
                f"{int(row['user']):6d} {row['V']:8g} {row['throughput']:12.5f} {row['avg_power']:8.4f} "
                f"{row['max_Q']:10.2f} {row['ceiling']:10.2f}"
            )
    return table, {"users": [plan.system.subsystem(n).label for n in users]}


def slot_table(trace: SimTrace) -> pd.DataFrame:
    """Recorded slots as a table; per-user fields are space-separated."""
    rows = [
        {
            "slot": r.slot,
            "backlog": r.backlog,
            "active": " ".join(str(a) for a in r.active),
            "actions": " ".join(str(a) for a in r.actions),
            "power": r.power,
            "expected_reward": r.expected_reward,
            "realized_reward": r.realized_reward,
        }
        for r in (trace.records or [])
    ]
    return pd.DataFrame(rows, columns=SLOT_COLUMNS)


def dump_slot_trace(plan: ExperimentPlan) -> Path:
    """
    Re-run the first run of the plan with every slot recorded and write it as CSV.

    single-run: replicate 0 at the configured V. single-user: replicate 0
    of the first selected user at the first V of the grid.
    """
    if plan.mode == "single-user":
        trace = _single_user_trace(plan, _selected_users(plan)[0], plan.v_grid[0], 0, record_slots=plan.horizon)
    else:
        trace = run_multi_user(
            plan.system, plan.horizon, seed=plan.seed, file_models=plan.file_models, record_slots=plan.horizon
        )
    path = Path(plan.dump_slots)
    path.parent.mkdir(parents=True, exist_ok=True)
    slot_table(trace).to_csv(path, index=False, float_format=ExperimentConstants.FLOAT_FORMAT, lineterminator="\n")
    return path


RUNNERS: Dict[str, Callable[[ExperimentPlan], Tuple[pd.DataFrame, Dict[str, Any]]]] = {
    "single-run": run_single,
    "single-user": run_single_user_sweep,
    "v-sweep": run_v_sweep,
    "monte-carlo": run_monte_carlo,
    "oracle-only": run_oracle_only,
    "robustness": run_robustness,
}


def _print_sweep(table: pd.DataFrame, plan: ExperimentPlan):
    print_banner(f"V-SWEEP ({plan.horizon} slots, {plan.replicates} replicate(s))")
    print(
        f"{'V':>8s} {'throughput':>12s} {'realized':>12s} {'power':>8s} "
        f"{'avg Q':>10s} {'max Q':>10s} {'rel.err':>9s}"
    )
    for _, row in table[table["policy"] == "indexing"].iterrows():
        print(
            f"{row['V']:8g} {row['weighted_throughput_expected']:12.5f} {row['weighted_throughput_realized']:12.5f} "
            f"{row['avg_power']:8.4f} {row['avg_Q']:10.2f} {row['max_Q']:10.2f} {row['relative_error']:9.5f}"
        )
    opt = table.loc[table["policy"] == "lp-opt", "opt_value"]
    if len(opt):
        print(f"{'LP optimum:':30s} {opt.iloc[0]:.6f}")


# ============================================================================
# OUTPUT
# ============================================================================


def write_results(table: pd.DataFrame, metadata: Dict[str, Any], output: Path) -> Tuple[Path, Path]:
    """Write the CSV table and its <out>.meta.json sidecar."""
    output = Path(output)
    output.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(output, index=False, float_format=ExperimentConstants.FLOAT_FORMAT, lineterminator="\n")
    meta_path = output.with_name(output.name + ".meta.json")
    save_json_data(metadata, meta_path)
    return output, meta_path


def run_plan(plan: ExperimentPlan) -> pd.DataFrame:
    """Run a plan and write (or print) its results."""
    if plan.dump_lp is not None:
        write_lp_file(build_occupancy_lp(plan.system), plan.dump_lp)
        if plan.verbose:
            print(f"LP written to: {plan.dump_lp}")

    table, extra = RUNNERS[plan.mode](plan)
    if plan.dump_slots is not None:
        slots_path = dump_slot_trace(plan)
        if plan.verbose:
            print(f"Slot trace written to: {slots_path}")

    if plan.output is None:
        print(table.to_string(index=False))
        return table

    metadata = plan.metadata()
    metadata.update(extra)
    table_path, meta_path = write_results(table, metadata, plan.output)
    if plan.verbose:
        print(f"\nResults saved to: {table_path}")
        print(f"Metadata saved to: {meta_path}")
    return table


# ============================================================================
# COMMAND LINE
# ============================================================================


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="download-sched",
        description="Power-constrained file download scheduling experiments",
    )
    parser.add_argument("--config", type=Path, help="JSON system configuration (default: built-in baseline)")
    parser.add_argument("--mode", choices=MODES, help="experiment to run (default: v-sweep)")
    parser.add_argument("--v-grid", help="comma-separated tradeoff values, e.g. 5,10,20,40,70")
    parser.add_argument("--replicates", type=int, help="replicates per grid point")
    parser.add_argument("--horizon", type=int, help="slots per simulation")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--fast", action="store_true", help=f"use {ExperimentConstants.FAST_HORIZON} slots")
    parser.add_argument("--out", type=Path, help="CSV output path (prints the table when omitted)")
    parser.add_argument("--dump-lp", type=Path, help="write the occupancy LP in CPLEX LP format")
    parser.add_argument(
        "--dump-slots", type=Path, help="write every slot of the first run as CSV (single-run, single-user)"
    )
    parser.add_argument("--user", type=int, help="single-user mode: user index, 0-based (default: every user)")
    parser.add_argument("--monte-carlo-kind", choices=MONTE_CARLO_KINDS, help="parameters randomized per replicate")
    parser.add_argument("--workers", type=int, default=1, help="worker processes")
    parser.add_argument("--verbose", action="store_true", help="print progress and summaries")
    return parser


def plan_from_args(args: argparse.Namespace) -> ExperimentPlan:
    """Merge config defaults, its experiment block and command-line flags."""
    experiment: Dict[str, Any] = {}
    file_models = None
    if args.config is not None:
        system, file_models, experiment = load_system_config(args.config)
    else:
        system = None

    mode = args.mode or experiment.get("mode", "v-sweep")
    if system is None:
        system = robustness_system() if mode == "robustness" else baseline_system()

    if args.v_grid is not None:
        v_grid = parse_v_grid(args.v_grid)
    elif "v_grid" in experiment:
        v_grid = _number_list(experiment["v_grid"], "experiment.v_grid")
    elif mode == "robustness":
        v_grid = ExperimentConstants.ROBUSTNESS_V_GRID
    else:
        v_grid = ExperimentConstants.DEFAULT_V_GRID

    if args.horizon is not None:
        horizon = args.horizon
    elif args.fast:
        horizon = ExperimentConstants.FAST_HORIZON
    else:
        horizon = _integer(experiment.get("horizon", ExperimentConstants.DEFAULT_HORIZON), "experiment.horizon")

    def pick(flag: Optional[int], key: str, default: Any) -> Any:
        if flag is not None:
            return flag
        return experiment.get(key, default)

    user = pick(args.user, "user", None)

    return ExperimentPlan(
        system=system,
        mode=mode,
        v_grid=v_grid,
        replicates=_integer(pick(args.replicates, "replicates", 1), "replicates"),
        horizon=horizon,
        seed=_integer(pick(args.seed, "seed", 0), "seed"),
        output=args.out,
        file_models=file_models,
        monte_carlo_kind=pick(args.monte_carlo_kind, "monte_carlo_kind", "system"),
        user=None if user is None else _integer(user, "user"),
        workers=args.workers,
        dump_lp=args.dump_lp,
        dump_slots=args.dump_slots,
        verbose=args.verbose,
    )


def main(argv: Optional[Iterable[str]] = None) -> int:
    """
    Entry point of the download-sched command.

    Returns:
        0 on success, 1 on a violated runtime invariant or LP failure,
        2 on a configuration error
    """
    args = build_parser().parse_args(None if argv is None else list(argv))
    try:
        plan = plan_from_args(args)
        if plan.verbose:
            print_banner("POWER-CONSTRAINED DOWNLOAD SCHEDULING")
            print(f"{'Mode:':30s} {plan.mode}")
            print(f"{'Users / max concurrent:':30s} {plan.system.n_users} / {plan.system.max_concurrent}")
            print(f"{'Power budget:':30s} {plan.system.power_budget:g}")
            print(f"{'Horizon (slots):':30s} {plan.horizon}")
            print(f"{'Seed:':30s} {plan.seed}")
        run_plan(plan)
    except ConfigError as exc:
        print(f"download-sched: configuration error: {exc}", file=sys.stderr)
        return 2
    except (QueueCeilingViolation, LPNumericalError, OracleSizeError) as exc:
        print(f"download-sched: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
