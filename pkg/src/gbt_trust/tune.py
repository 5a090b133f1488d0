"""Hyperparameter grid enumeration and parallel cross-validated search.

Every trial scores one TrainConfig by k-fold cross-validation on a fold
plan shared across the whole sweep, so configurations compete on the same
folds. Trials are independent and may run in worker processes; the
leaderboard is identical for any worker count because per-trial seeds are
derived from (search seed, config index) and results are sorted after
collection.
"""
from __future__ import annotations

import csv
import itertools
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from .data import FoldPlan, Table, kfold_split
from .gbt import CONFIG_FIELDS, TrainConfig, rmse, train, with_seed
from .rng import derive_seed


class EmptyGrid(ValueError):
    """Grid with no parameters or an empty value list."""


class AllTrialsFailed(RuntimeError):
    """Every trial in the sweep errored; no config can be selected."""


@dataclass(frozen=True)
class Grid:
    """Per-parameter value lists over TrainConfig fields.

    Unlisted fields take TrainConfig defaults. Value bounds are checked at
    enumeration time by TrainConfig itself.
    """

    values: dict[str, list]

    def __post_init__(self):
        if not self.values:
            raise EmptyGrid("grid has no parameters")
        for name, vals in self.values.items():
            if name not in CONFIG_FIELDS:
                raise EmptyGrid(f"unknown TrainConfig field {name!r}")
            if not vals:
                raise EmptyGrid(f"parameter {name!r} has an empty value list")
        object.__setattr__(self, "values", dict(self.values))

    @property
    def size(self) -> int:
        out = 1
        for vals in self.values.values():
            out *= len(vals)
        return out


@dataclass(frozen=True)
class TrialResult:
    config: TrainConfig
    fold_rmses: tuple[float, ...]
    mean_rmse: float
    std_rmse: float
    wall_time: float
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass(frozen=True)
class Leaderboard:
    """Trial results in ascending mean-RMSE order; failures sort last."""

    entries: tuple[TrialResult, ...] = field(default_factory=tuple)
    k: int = 0
    seed: int = 0

    def __len__(self) -> int:
        return len(self.entries)


def enumerate_grid(grid: Grid) -> list[TrainConfig]:
    """Cartesian product in lexicographic (parameter name, value index) order."""
    names = sorted(grid.values)
    return [
        TrainConfig(**dict(zip(names, combo)))
        for combo in itertools.product(*(grid.values[n] for n in names))
    ]


def _mean_and_std(values: tuple[float, ...]) -> tuple[float, float]:
    # Left-to-right summation, fixed by contract.
    total = 0.0
    for v in values:
        total += v
    mean = total / len(values)
    var = 0.0
    for v in values:
        var += (v - mean) ** 2
    return mean, math.sqrt(var / len(values))


def cross_validate(table: Table, config: TrainConfig, plan: FoldPlan) -> TrialResult:
    """Train on k-1 folds, score RMSE on the held-out fold, for every fold."""
    start = time.perf_counter()
    try:
        fold_rmses = []
        for fold in range(plan.k):
            fit = table.subset(plan.training_indices(fold))
            held = table.subset(plan.holdout_indices(fold))
            ensemble, _ = train(fit, config)
            fold_rmses.append(rmse(ensemble.predict_table(held), held.target))
        mean, std = _mean_and_std(tuple(fold_rmses))
        return TrialResult(
            config=config,
            fold_rmses=tuple(fold_rmses),
            mean_rmse=mean,
            std_rmse=std,
            wall_time=time.perf_counter() - start,
        )
    except Exception as exc:  # error isolation: a bad config must not kill the sweep
        return TrialResult(
            config=config,
            fold_rmses=(),
            mean_rmse=math.nan,
            std_rmse=math.nan,
            wall_time=time.perf_counter() - start,
            error=f"{type(exc).__name__}: {exc}",
        )


def _run_trial(args) -> tuple[int, TrialResult]:
    index, table, config, plan = args
    return index, cross_validate(table, config, plan)


def _sort_key(trial: TrialResult):
    c = trial.config
    primary = math.inf if trial.failed or math.isnan(trial.mean_rmse) else trial.mean_rmse
    return (
        primary,
        c.n_trees,
        c.max_depth,
        c.shrinkage,
        c.min_node_rows,
        c.bag_fraction,
        c.column_sample,
        c.seed,
    )


def run_search(
    table: Table, grid: Grid, k: int, workers: int, seed: int
) -> Leaderboard:
    """Cross-validated sweep over the grid; deterministic for any worker count."""
    if workers < 1:
        raise ValueError("workers must be >= 1")
    configs = enumerate_grid(grid)
    plan = kfold_split(table, k, seed)
    tasks = [
        (i, table, with_seed(cfg, derive_seed(seed, i)), plan)
        for i, cfg in enumerate(configs)
    ]
    results: list[TrialResult | None] = [None] * len(tasks)
    if workers == 1:
        for task in tasks:
            i, trial = _run_trial(task)
            results[i] = trial
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, trial in pool.map(_run_trial, tasks):
                results[i] = trial
    ordered = tuple(sorted(results, key=_sort_key))
    return Leaderboard(entries=ordered, k=k, seed=seed)


def select_best(leaderboard: Leaderboard) -> TrainConfig:
    """First non-error entry; the board is already canonically ordered."""
    for trial in leaderboard.entries:
        if not trial.failed:
            return trial.config
    raise AllTrialsFailed("no trial in the leaderboard completed successfully")


def write_leaderboard_csv(leaderboard: Leaderboard, path) -> None:
    """One row per trial: config fields, fold RMSEs, mean, std, wall_time."""
    k = leaderboard.k
    header = (
        list(CONFIG_FIELDS)
        + [f"fold_rmse_{i}" for i in range(k)]
        + ["mean_rmse", "std_rmse", "wall_time", "error"]
    )
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for trial in leaderboard.entries:
            cfg = trial.config.to_dict()
            row = [repr(cfg[f]) if isinstance(cfg[f], float) else cfg[f] for f in CONFIG_FIELDS]
            folds = [repr(v) for v in trial.fold_rmses]
            folds += [""] * (k - len(folds))
            row += folds
            row += [
                repr(trial.mean_rmse),
                repr(trial.std_rmse),
                repr(trial.wall_time),
                trial.error or "",
            ]
            writer.writerow(row)


def load_grid_file(path) -> Grid:
    """Grid from a JSON object mapping TrainConfig fields to value lists.

    Names of the form "builtin:<name>" resolve to a grid shipped with the
    package (currently "initial" and "full").
    """
    import json

    text = str(path)
    if text.startswith("builtin:"):
        from importlib import resources

        name = text.split(":", 1)[1]
        ref = resources.files("gbt_trust").joinpath(f"grids/{name}.json")
        if not ref.is_file():
            raise EmptyGrid(f"no builtin grid named {name!r}")
        doc = json.loads(ref.read_text(encoding="utf-8"))
    else:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    if not isinstance(doc, dict):
        raise EmptyGrid("grid file must hold a JSON object of value lists")
    return Grid(values={str(k): list(v) for k, v in doc.items()})


def leaderboard_rows_without_wall_time(path) -> list[list[str]]:
    """Leaderboard CSV rows with the timing column blanked.

    Wall time is telemetry, not science: it is the one leaderboard field
    exempt from byte-for-byte reproducibility.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return rows
    wt = rows[0].index("wall_time")
    for row in rows[1:]:
        row[wt] = ""
    return rows
