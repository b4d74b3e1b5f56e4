"""Benchmark orchestration: sweep scenarios x methods x n over seeded trials.

Every trial derives its own seed stream from the plan's base seed and the
cell coordinates, so runs are reproducible cell by cell and trials can be
executed in parallel without changing any result.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .losses import (
    QuantileLevels,
    composite_objective,
    composite_predict,
    geometric_objective,
    marginal_objective,
    squared_objective,
)
from .metrics import coverage, crossing_count, delta_n2, quantile_mse
from .nn import default_architecture, init_model, predict
from .optim import TrainConfig, train
from .scenarios import generate, get_scenario, true_quantile

METHODS = ("quantile_net", "sqerr_net", "composite_net", "geometric_net", "marginal_net")

# presentation order for summary tables (benchmark baseline first)
_METHOD_ORDER = ("sqerr_net", "quantile_net", "composite_net", "marginal_net", "geometric_net")

RESULT_COLUMNS = (
    "scenario", "method", "n", "tau", "trial", "seed",
    "mse", "delta_n2", "coverage", "crossings", "runtime_ms",
)


class UnsupportedCellError(ValueError):
    """Requested (scenario, method) combination is not defined."""


# ---------------------------------------------------------------------------
# Deterministic seed derivation

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def splitmix64(value: int) -> int:
    """First output of the splitmix64 stream seeded at ``value``."""
    return _mix64((value + _GOLDEN) & _MASK64)


def seed_stream(seed: int):
    """Infinite generator of successive splitmix64 outputs."""
    state = seed & _MASK64
    while True:
        state = (state + _GOLDEN) & _MASK64
        yield _mix64(state)


def _fnv1a64(text: str) -> int:
    # process-stable string hash (builtin hash() is salted per interpreter run)
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return h


def trial_seed(base_seed: int, scenario_id: int, method: str, n: int, trial_idx: int) -> int:
    key = _fnv1a64(f"{scenario_id}|{method}|{n}|{trial_idx}")
    return splitmix64((base_seed ^ key) & _MASK64)


# ---------------------------------------------------------------------------
# Plan


_PLAN_KEYS = (
    "scenarios", "methods", "n_grid", "taus", "trials", "n_test",
    "base_seed", "epochs", "batch_size", "lr0", "decay_every",
)


@dataclass
class ExperimentPlan:
    """Sweep definition plus shared training hyperparameters.

    Defaults are desk scale: 5 trials, n up to 1000, 2000 test points.
    ``paper_scale()`` returns the full-size variant (25 trials, n up to
    10000, 10000 test points).
    """

    scenarios: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7)
    methods: tuple[str, ...] = ("quantile_net", "sqerr_net", "marginal_net", "geometric_net")
    n_grid: tuple[int, ...] = (100, 1000)
    taus: tuple[float, ...] = (0.05, 0.25, 0.5, 0.75, 0.95)
    trials: int = 5
    n_test: int = 2000
    base_seed: int = 0
    epochs: int = 200
    batch_size: int = 64
    lr0: float = 0.1
    decay_every: int = 50

    def __post_init__(self):
        self.scenarios = tuple(int(s) for s in self.scenarios)
        self.methods = tuple(str(m) for m in self.methods)
        self.n_grid = tuple(int(n) for n in self.n_grid)
        self.taus = tuple(float(t) for t in self.taus)
        if not self.methods:
            raise ValueError("plan needs at least one method")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; valid: {list(METHODS)}")
        for s in self.scenarios:
            get_scenario(s)
        if not self.n_grid or min(self.n_grid) < 1:
            raise ValueError(f"n_grid must hold positive sizes, got {self.n_grid}")
        QuantileLevels(self.taus)
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if self.n_test < 1:
            raise ValueError(f"n_test must be >= 1, got {self.n_test}")

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr0=self.lr0,
            decay_every=self.decay_every,
            seed=seed,
        )

    def paper_scale(self) -> "ExperimentPlan":
        return replace(self, trials=25, n_grid=(100, 1000, 10000), n_test=10000)


def load_plan(path) -> ExperimentPlan:
    """Read a plan from a TOML key/value file; unknown keys are rejected."""
    with open(path, "rb") as f:
        try:
            data = tomllib.load(f)
        except tomllib.TOMLDecodeError as exc:
            raise ValueError(f"plan file {path} is not valid TOML: {exc}") from None
    unknown = sorted(set(data) - set(_PLAN_KEYS))
    if unknown:
        raise ValueError(f"plan file {path} has unknown keys {unknown}; valid: {list(_PLAN_KEYS)}")
    return ExperimentPlan(**data)


# ---------------------------------------------------------------------------
# Trials


@dataclass
class TrialResult:
    """Metrics of one trained method on one trial dataset at one level."""

    scenario: int
    method: str
    n: int
    tau: float
    trial: int
    seed: int
    mse: float
    delta_n2: float
    coverage: float
    crossings: int
    runtime_ms: float

    def __post_init__(self):
        for name in ("mse", "delta_n2", "coverage", "runtime_ms"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"trial metric {name} is not finite")


def method_supported(scenario_id: int, method: str) -> bool:
    p = get_scenario(scenario_id).output_dim
    if p == 1:
        return method in ("quantile_net", "composite_net", "sqerr_net")
    return method in ("marginal_net", "geometric_net", "sqerr_net")


def run_trial(plan: ExperimentPlan, scenario_id: int, method: str, n: int,
              trial_idx: int) -> list[TrialResult]:
    """Train one method on one fresh dataset; returns one result per level.

    The composite quantile network produces one result per plan tau; the
    squared-error, marginal, and geometric methods are scored against the
    tau = 0.5 oracle only.
    """
    if method not in METHODS:
        raise UnsupportedCellError(f"unknown method {method!r}")
    if not method_supported(scenario_id, method):
        raise UnsupportedCellError(
            f"method {method!r} is not defined for scenario {scenario_id}"
        )
    sc = get_scenario(scenario_id)
    seed = trial_seed(plan.base_seed, scenario_id, method, n, trial_idx)
    stream = seed_stream(seed)
    data_seed = next(stream)
    test_seed = next(stream)
    init_seed = next(stream)
    sgd_seed = next(stream)

    train_ds = generate(scenario_id, n, data_seed)
    test_ds = generate(scenario_id, plan.n_test, test_seed)
    cfg = plan.train_config(seed=sgd_seed)

    started = time.perf_counter()
    if method in ("quantile_net", "composite_net"):
        levels = QuantileLevels(plan.taus)
        model = init_model(default_architecture(sc.input_dim, len(levels)), init_seed)
        train(model, train_ds.x, train_ds.y, composite_objective(levels), cfg)
        preds = composite_predict(predict(model, test_ds.x))
        runtime_ms = (time.perf_counter() - started) * 1000.0
        crossings = crossing_count(preds, levels.taus)
        out = []
        for j, tau in enumerate(levels):
            column = preds[:, j:j + 1]
            truth = true_quantile(scenario_id, test_ds.x, tau)
            out.append(TrialResult(
                scenario=scenario_id, method=method, n=n, tau=tau, trial=trial_idx,
                seed=seed, mse=quantile_mse(column, truth),
                delta_n2=delta_n2(column, truth),
                coverage=coverage(tau, test_ds.y, column),
                crossings=crossings, runtime_ms=runtime_ms,
            ))
        return out

    if method == "sqerr_net":
        objective = squared_objective()
    elif method == "marginal_net":
        objective = marginal_objective(0.5)
    elif method == "geometric_net":
        objective = geometric_objective([0.0] * sc.output_dim)

    model = init_model(default_architecture(sc.input_dim, sc.output_dim), init_seed)
    train(model, train_ds.x, train_ds.y, objective, cfg)
    preds = predict(model, test_ds.x)
    runtime_ms = (time.perf_counter() - started) * 1000.0
    tau = 0.5
    truth = true_quantile(scenario_id, test_ds.x, tau)
    return [TrialResult(
        scenario=scenario_id, method=method, n=n, tau=tau, trial=trial_idx,
        seed=seed, mse=quantile_mse(preds, truth),
        delta_n2=delta_n2(preds, truth),
        coverage=coverage(tau, test_ds.y, preds),
        crossings=0, runtime_ms=runtime_ms,
    )]


def plan_cells(plan: ExperimentPlan) -> list[tuple[int, int, str, int]]:
    """Deterministic (scenario, n, method, trial) order; unsupported cells omitted."""
    cells = []
    for scenario_id in plan.scenarios:
        for n in plan.n_grid:
            for method in plan.methods:
                if not method_supported(scenario_id, method):
                    continue
                for trial_idx in range(plan.trials):
                    cells.append((scenario_id, n, method, trial_idx))
    return cells


def _run_cell(args):
    plan, (scenario_id, n, method, trial_idx) = args
    return run_trial(plan, scenario_id, method, n, trial_idx)


def run_plan(plan: ExperimentPlan, jobs: int = 1, progress=None) -> list[TrialResult]:
    """Execute every supported plan cell; identical output serial or parallel."""
    cells = plan_cells(plan)
    results: list[TrialResult] = []
    if jobs <= 1:
        for i, cell in enumerate(cells):
            results.extend(_run_cell((plan, cell)))
            if progress is not None:
                progress(i + 1, len(cells), cell)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for i, chunk in enumerate(pool.map(_run_cell, [(plan, c) for c in cells])):
                results.extend(chunk)
                if progress is not None:
                    progress(i + 1, len(cells), cells[i])
    return results


def seed_collisions(plan: ExperimentPlan) -> int:
    """Number of duplicated per-trial seeds across the whole sweep."""
    seeds = [trial_seed(plan.base_seed, s, m, n, t) for (s, n, m, t) in plan_cells(plan)]
    return len(seeds) - len(set(seeds))


# ---------------------------------------------------------------------------
# Aggregation


@dataclass
class SummaryRow:
    scenario: int
    method: str
    n: int
    tau: float
    trials: int
    mean_mse: float
    se_mse: float


def _method_rank(method: str) -> tuple[int, str]:
    try:
        return (_METHOD_ORDER.index(method), method)
    except ValueError:
        return (len(_METHOD_ORDER), method)


def aggregate(results) -> list[SummaryRow]:
    """Mean and standard error of MSE per (scenario, n, method, tau) cell."""
    results = list(results)
    if not results:
        raise ValueError("no results to aggregate")
    groups: dict[tuple, list[float]] = {}
    for r in results:
        groups.setdefault((r.scenario, r.n, r.method, r.tau), []).append(r.mse)
    rows = []
    for (scenario_id, n, method, tau), values in groups.items():
        k = len(values)
        mean = sum(values) / k
        if k > 1:
            var = sum((v - mean) ** 2 for v in values) / (k - 1)
            se = math.sqrt(var / k)
        else:
            se = 0.0
        rows.append(SummaryRow(scenario_id, method, n, tau, k, mean, se))
    rows.sort(key=lambda r: (r.scenario, r.n, _method_rank(r.method), r.tau))
    return rows


# ---------------------------------------------------------------------------
# Persistence


def _sig6(value: float) -> str:
    return f"{value:.6g}"


def write_results(results, path, fmt: str = "csv") -> None:
    """Persist per-trial records as csv or json, or an aggregated markdown table."""
    results = list(results)
    if fmt == "csv":
        lines = [",".join(RESULT_COLUMNS)]
        for r in results:
            lines.append(",".join([
                str(r.scenario), r.method, str(r.n), _sig6(r.tau), str(r.trial),
                str(r.seed), _sig6(r.mse), _sig6(r.delta_n2), _sig6(r.coverage),
                str(r.crossings), _sig6(r.runtime_ms),
            ]))
        text = "\n".join(lines) + "\n"
    elif fmt == "json":
        text = json.dumps([asdict(r) for r in results], indent=1) + "\n"
    elif fmt == "markdown":
        text = summary_markdown(aggregate(results)) if results else "(no results)\n"
    else:
        raise ValueError(f"unknown format {fmt!r}; use csv, markdown, or json")
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)


def read_results(path) -> list[TrialResult]:
    """Parse a csv written by write_results."""
    with open(path, "r", encoding="utf-8") as f:
        lines = [line.rstrip("\n") for line in f if line.strip()]
    if not lines or lines[0] != ",".join(RESULT_COLUMNS):
        raise ValueError(f"{path} does not carry the expected results header")
    out = []
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != len(RESULT_COLUMNS):
            raise ValueError(f"malformed results row: {line!r}")
        out.append(TrialResult(
            scenario=int(parts[0]), method=parts[1], n=int(parts[2]),
            tau=float(parts[3]), trial=int(parts[4]), seed=int(parts[5]),
            mse=float(parts[6]), delta_n2=float(parts[7]), coverage=float(parts[8]),
            crossings=int(parts[9]), runtime_ms=float(parts[10]),
        ))
    return out


def write_summary(rows, path) -> None:
    """Aggregated table as csv (deterministic; no runtime column)."""
    lines = ["scenario,method,n,tau,trials,mean_mse,se_mse"]
    for r in rows:
        lines.append(",".join([
            str(r.scenario), r.method, str(r.n), _sig6(r.tau),
            str(r.trials), _sig6(r.mean_mse), _sig6(r.se_mse),
        ]))
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def summary_markdown(rows) -> str:
    """Benchmark-table layout: per scenario and n, methods as rows, taus as columns."""
    rows = list(rows)
    taus = sorted({r.tau for r in rows})
    chunks = []
    for scenario_id in sorted({r.scenario for r in rows}):
        chunks.append(f"## Scenario {scenario_id}\n")
        for n in sorted({r.n for r in rows if r.scenario == scenario_id}):
            cell = [r for r in rows if r.scenario == scenario_id and r.n == n]
            methods = sorted({r.method for r in cell}, key=_method_rank)
            chunks.append(f"### n = {n}\n")
            header = "| method | " + " | ".join(f"tau={_sig6(t)}" for t in taus) + " |"
            rule = "|---" * (len(taus) + 1) + "|"
            lines = [header, rule]
            for method in methods:
                by_tau = {r.tau: r for r in cell if r.method == method}
                row = [method]
                for t in taus:
                    r = by_tau.get(t)
                    row.append(_sig6(r.mean_mse) if r is not None else "*")
                lines.append("| " + " | ".join(row) + " |")
            chunks.append("\n".join(lines) + "\n")
    return "\n".join(chunks)
