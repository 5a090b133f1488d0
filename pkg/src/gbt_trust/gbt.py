"""Gradient-boosted regression trees under squared-error loss.

Boosting follows the classic first-order recipe: start from the target
mean, then repeatedly fit a depth-bounded CART regression tree to the
current residuals (the negative gradient of 0.5*sum((y - f)^2), so the
steepest-descent step and the residual fit coincide) and add it with a
shrinkage multiplier. Split search maximizes variance reduction,
SSE(parent) - SSE(left) - SSE(right), over midpoints of consecutive
distinct feature values; rows with a missing feature are routed to
whichever side yields the higher gain, and that side is remembered as the
node's default direction for prediction time.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .data import EmptyTable, Table

MODEL_FORMAT = "gbt-trust/1"


class ConfigOutOfRange(ValueError):
    """A TrainConfig field violates its documented bounds."""


class DimensionMismatch(ValueError):
    """Input feature vector length differs from the training schema."""


class LengthMismatch(ValueError):
    """Paired vectors of different lengths."""


class EmptyVectors(ValueError):
    """RMSE of zero-length vectors is undefined."""


class VersionMismatch(ValueError):
    """Model stream was written by an incompatible format version."""


class CorruptModel(ValueError):
    """Model stream is truncated or structurally invalid."""


@dataclass(frozen=True)
class TrainConfig:
    """Boosting hyperparameters; defaults are the tuned reference setting."""

    n_trees: int = 500
    shrinkage: float = 0.10
    max_depth: int = 5
    min_node_rows: int = 1
    bag_fraction: float = 0.8
    column_sample: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigOutOfRange(f"n_trees must be >= 1, got {self.n_trees}")
        if not 0.0 < self.shrinkage <= 1.0:
            raise ConfigOutOfRange(f"shrinkage must be in (0, 1], got {self.shrinkage}")
        if self.max_depth < 1:
            raise ConfigOutOfRange(f"max_depth must be >= 1, got {self.max_depth}")
        if self.min_node_rows < 1:
            raise ConfigOutOfRange(
                f"min_node_rows must be >= 1, got {self.min_node_rows}"
            )
        if not 0.0 < self.bag_fraction <= 1.0:
            raise ConfigOutOfRange(
                f"bag_fraction must be in (0, 1], got {self.bag_fraction}"
            )
        if not 0.0 < self.column_sample <= 1.0:
            raise ConfigOutOfRange(
                f"column_sample must be in (0, 1], got {self.column_sample}"
            )
        if not isinstance(self.seed, int):
            raise ConfigOutOfRange("seed must be an integer")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


CONFIG_FIELDS = tuple(f.name for f in fields(TrainConfig))


@dataclass(frozen=True)
class Split:
    """Best split of one feature at one node."""

    threshold: float
    gain: float
    default_goes_left: bool


def best_split(values, residuals, min_node_rows: int = 1) -> Split | None:
    """Variance-reduction split of one feature's values at a node.

    values is 1-D with NaN marking missing entries; residuals is aligned.
    Candidate thresholds are midpoints of consecutive distinct present
    values. Missing rows join whichever side gains more (ties go left),
    and both sides must keep at least min_node_rows rows after routing.
    Returns None when no candidate has strictly positive gain.
    """
    x = np.asarray(values, dtype=np.float64)
    r = np.asarray(residuals, dtype=np.float64)
    if x.shape != r.shape or x.ndim != 1:
        raise LengthMismatch("values and residuals must be equal-length vectors")
    present = ~np.isnan(x)
    xp = x[present]
    n_present = xp.size
    if n_present < 2:
        return None
    order = np.argsort(xp, kind="stable")
    xs = xp[order]
    boundary = xs[1:] != xs[:-1]
    if not boundary.any():
        return None

    # Center residuals on the node mean: SSE is shift-invariant and the
    # prefix sums stay well conditioned.
    rm = r[~present]
    node_mean = r.mean()
    rs = r[present][order] - node_mean
    rmiss = rm - node_mean
    m_count = rmiss.size
    m_sum = float(rmiss.sum())
    m_sq = float((rmiss * rmiss).sum())

    cum = np.cumsum(rs)
    cumsq = np.cumsum(rs * rs)
    total = cum[-1]
    total_sq = cumsq[-1]
    parent_n = n_present + m_count
    parent_sum = total + m_sum
    parent_sse = (total_sq + m_sq) - parent_sum * parent_sum / parent_n

    # Boundary i splits the sorted present rows into [0, i) and [i, n).
    i = np.arange(1, n_present)
    left_sum = cum[:-1]
    left_sq = cumsq[:-1]
    right_sum = total - left_sum
    right_sq = total_sq - left_sq

    def sse(sq, s, n):
        return sq - s * s / n

    gain_left = parent_sse - (
        sse(left_sq + m_sq, left_sum + m_sum, i + m_count)
        + sse(right_sq, right_sum, n_present - i)
    )
    gain_right = parent_sse - (
        sse(left_sq, left_sum, i)
        + sse(right_sq + m_sq, right_sum + m_sum, n_present - i + m_count)
    )
    ok_left = (i + m_count >= min_node_rows) & (n_present - i >= min_node_rows)
    ok_right = (i >= min_node_rows) & (n_present - i + m_count >= min_node_rows)
    gain_left = np.where(ok_left & boundary, gain_left, -np.inf)
    gain_right = np.where(ok_right & boundary, gain_right, -np.inf)

    goes_left = gain_left >= gain_right
    gain = np.where(goes_left, gain_left, gain_right)
    best = int(np.argmax(gain))  # first max = lowest threshold
    best_gain = float(gain[best])
    if not best_gain > 0.0:
        return None
    lo, hi = xs[best], xs[best + 1]
    threshold = (lo + hi) / 2.0
    if threshold == hi:  # adjacent floats: keep hi on the right side
        threshold = lo
    return Split(
        threshold=float(threshold),
        gain=best_gain,
        default_goes_left=bool(goes_left[best]),
    )


@dataclass(frozen=True)
class RegressionTree:
    """Binary regression tree in flat parallel arrays; root at index 0.

    feature[i] is -1 for leaves; leaves predict value[i]. Internal nodes
    send x <= threshold left, missing values toward default_left.
    """

    feature: np.ndarray
    threshold: np.ndarray
    default_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray
    n_rows: np.ndarray

    def __post_init__(self):
        for name in ("feature", "left", "right", "n_rows"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.int32)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        for name in ("threshold", "value", "gain"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        arr = np.ascontiguousarray(self.default_left, dtype=bool)
        arr.flags.writeable = False
        object.__setattr__(self, "default_left", arr)

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        """Tree output for every row of X (NaN entries take defaults)."""
        node = np.zeros(X.shape[0], dtype=np.int32)
        while True:
            feat = self.feature[node]
            active = np.flatnonzero(feat >= 0)
            if active.size == 0:
                break
            at = node[active]
            vals = X[active, feat[active]]
            go_left = np.where(
                np.isnan(vals), self.default_left[at], vals <= self.threshold[at]
            )
            node[active] = np.where(go_left, self.left[at], self.right[at])
        return self.value[node]

    def max_depth(self) -> int:
        depth = 0
        stack = [(0, 0)]
        while stack:
            node, d = stack.pop()
            if self.is_leaf(node):
                depth = max(depth, d)
            else:
                stack.append((int(self.left[node]), d + 1))
                stack.append((int(self.right[node]), d + 1))
        return depth


class _TreeBuilder:
    """Grows one CART tree on the residuals of a row/column sample."""

    def __init__(self, X, residuals, max_depth, min_node_rows, allowed_features):
        self.X = X
        self.residuals = residuals
        self.max_depth = max_depth
        self.min_node_rows = min_node_rows
        self.allowed = allowed_features
        self.feature = []
        self.threshold = []
        self.default_left = []
        self.left = []
        self.right = []
        self.value = []
        self.gain = []
        self.n_rows = []

    def _append(self):
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.default_left.append(True)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        self.gain.append(0.0)
        self.n_rows.append(0)
        return len(self.feature) - 1

    def _find_split(self, rows) -> tuple[int, Split] | None:
        best_j = -1
        best: Split | None = None
        res = self.residuals[rows]
        for j in self.allowed:
            cand = best_split(self.X[rows, j], res, self.min_node_rows)
            # Strict > keeps the lowest feature index on exact gain ties;
            # within a feature the lowest threshold already won.
            if cand is not None and (best is None or cand.gain > best.gain):
                best, best_j = cand, j
        if best is None:
            return None
        return best_j, best

    def grow(self, rows, depth) -> int:
        node = self._append()
        self.n_rows[node] = rows.size
        found = None
        if depth < self.max_depth and rows.size >= 2 * self.min_node_rows:
            found = self._find_split(rows)
        if found is None:
            self.value[node] = float(self.residuals[rows].mean())
            return node
        j, split = found
        col = self.X[rows, j]
        go_left = np.where(np.isnan(col), split.default_goes_left, col <= split.threshold)
        self.feature[node] = j
        self.threshold[node] = split.threshold
        self.default_left[node] = split.default_goes_left
        self.gain[node] = split.gain
        self.left[node] = self.grow(rows[go_left], depth + 1)
        self.right[node] = self.grow(rows[~go_left], depth + 1)
        return node

    def build(self, rows) -> RegressionTree:
        self.grow(rows, 0)
        return RegressionTree(
            feature=np.array(self.feature, dtype=np.int32),
            threshold=np.array(self.threshold, dtype=np.float64),
            default_left=np.array(self.default_left, dtype=bool),
            left=np.array(self.left, dtype=np.int32),
            right=np.array(self.right, dtype=np.int32),
            value=np.array(self.value, dtype=np.float64),
            gain=np.array(self.gain, dtype=np.float64),
            n_rows=np.array(self.n_rows, dtype=np.int32),
        )


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    grad_norm: float
    train_rmse: float
    valid_rmse: float | None = None


@dataclass(frozen=True)
class TrainTrace:
    entries: tuple[TraceEntry, ...] = field(default_factory=tuple)

    def train_rmses(self) -> list[float]:
        return [e.train_rmse for e in self.entries]


@dataclass(frozen=True)
class Ensemble:
    """Fitted boosted model: base_score + shrinkage * sum of tree outputs."""

    base_score: float
    shrinkage: float
    trees: tuple[RegressionTree, ...]
    feature_names: tuple[str, ...]
    train_config: TrainConfig

    def __post_init__(self):
        object.__setattr__(self, "trees", tuple(self.trees))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def d(self) -> int:
        return len(self.feature_names)

    def predict(self, X) -> np.ndarray:
        """Predictions for an (n, d) matrix; NaN entries follow defaults."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.d:
            raise DimensionMismatch(f"expected (n, {self.d}) matrix, got {X.shape}")
        preds = np.full(X.shape[0], self.base_score, dtype=np.float64)
        for tree in self.trees:
            preds += self.shrinkage * tree.predict_batch(X)
        return preds

    def predict_row(self, x) -> float:
        """Prediction for a single feature vector (NaN = missing)."""
        vec = np.asarray(x, dtype=np.float64)
        if vec.shape != (self.d,):
            raise DimensionMismatch(f"expected {self.d} features, got {vec.shape}")
        acc = self.base_score
        for tree in self.trees:
            node = 0
            while not tree.is_leaf(node):
                v = vec[tree.feature[node]]
                if np.isnan(v):
                    go_left = bool(tree.default_left[node])
                else:
                    go_left = bool(v <= tree.threshold[node])
                node = int(tree.left[node] if go_left else tree.right[node])
            acc += self.shrinkage * float(tree.value[node])
        return acc

    def predict_table(self, table: Table) -> np.ndarray:
        if tuple(table.feature_names) != self.feature_names:
            raise DimensionMismatch("table feature names differ from training schema")
        return self.predict(table.rows)


def rmse(predicted, actual) -> float:
    """Root mean squared error between two equal-length vectors."""
    p = np.asarray(predicted, dtype=np.float64)
    a = np.asarray(actual, dtype=np.float64)
    if p.shape != a.shape or p.ndim != 1:
        raise LengthMismatch(f"shapes differ: {p.shape} vs {a.shape}")
    if p.size == 0:
        raise EmptyVectors("rmse of empty vectors is undefined")
    diff = p - a
    return float(np.sqrt(np.mean(diff * diff)))


def train(
    table: Table, config: TrainConfig, holdout: Table | None = None
) -> tuple[Ensemble, TrainTrace]:
    """Fit a boosted ensemble to a Table.

    Each iteration records the residual (negative-gradient) norm before
    the new tree, the training RMSE after it, and the holdout RMSE when a
    holdout table is given. Row bags and column samples are drawn from a
    generator seeded by config.seed, so identical inputs give identical
    ensembles.
    """
    from .rng import rng_from

    if table.n < 1:
        raise EmptyTable("cannot train on an empty table")
    if holdout is not None and tuple(holdout.feature_names) != tuple(
        table.feature_names
    ):
        raise DimensionMismatch("holdout feature names differ from training table")

    X = table.rows
    y = table.target
    n, d = X.shape
    base = float(np.mean(y))
    preds = np.full(n, base, dtype=np.float64)
    hold_preds = None
    if holdout is not None:
        hold_preds = np.full(holdout.n, base, dtype=np.float64)

    n_bag = max(1, int(math.floor(config.bag_fraction * n)))
    n_cols = max(1, int(math.floor(config.column_sample * d)))
    rng = rng_from(config.seed)

    trees = []
    entries = []
    for b in range(config.n_trees):
        residual = y - preds
        grad_norm = float(np.sqrt(residual @ residual))
        bag_rows = np.sort(rng.permutation(n)[:n_bag])
        cols = np.sort(rng.permutation(d)[:n_cols])
        builder = _TreeBuilder(
            X, residual, config.max_depth, config.min_node_rows, cols
        )
        tree = builder.build(bag_rows)
        trees.append(tree)
        preds += config.shrinkage * tree.predict_batch(X)
        valid = None
        if hold_preds is not None:
            hold_preds += config.shrinkage * tree.predict_batch(holdout.rows)
            valid = rmse(hold_preds, holdout.target)
        entries.append(
            TraceEntry(
                iteration=b,
                grad_norm=grad_norm,
                train_rmse=rmse(preds, y),
                valid_rmse=valid,
            )
        )

    ensemble = Ensemble(
        base_score=base,
        shrinkage=config.shrinkage,
        trees=tuple(trees),
        feature_names=tuple(table.feature_names),
        train_config=config,
    )
    return ensemble, TrainTrace(entries=tuple(entries))


def _node_to_record(tree: RegressionTree, node: int) -> dict:
    if tree.is_leaf(node):
        return {
            "leaf_value": float(tree.value[node]),
            "n_rows": int(tree.n_rows[node]),
        }
    return {
        "feature_index": int(tree.feature[node]),
        "threshold": float(tree.threshold[node]),
        "default_goes_left": bool(tree.default_left[node]),
        "gain": float(tree.gain[node]),
        "n_rows": int(tree.n_rows[node]),
        "left": _node_to_record(tree, int(tree.left[node])),
        "right": _node_to_record(tree, int(tree.right[node])),
    }


def _record_to_builder(record: dict, builder: _TreeBuilder) -> int:
    node = builder._append()
    if "leaf_value" in record:
        builder.value[node] = float(record["leaf_value"])
        builder.n_rows[node] = int(record.get("n_rows", 0))
        return node
    builder.feature[node] = int(record["feature_index"])
    builder.threshold[node] = float(record["threshold"])
    builder.default_left[node] = bool(record["default_goes_left"])
    builder.gain[node] = float(record.get("gain", 0.0))
    builder.n_rows[node] = int(record.get("n_rows", 0))
    builder.left[node] = _record_to_builder(record["left"], builder)
    builder.right[node] = _record_to_builder(record["right"], builder)
    return node


def serialize_model(ensemble: Ensemble) -> bytes:
    """Versioned structured-text encoding of a fitted ensemble.

    Numbers are written as shortest round-trip decimal strings, so a
    deserialized model predicts bit-identically to the original.
    """
    doc = {
        "format": MODEL_FORMAT,
        "base_score": float(ensemble.base_score),
        "shrinkage": float(ensemble.shrinkage),
        "feature_names": list(ensemble.feature_names),
        "train_config": ensemble.train_config.to_dict(),
        "seed": ensemble.train_config.seed,
        "trees": [_node_to_record(t, 0) for t in ensemble.trees],
    }
    return (json.dumps(doc, indent=1) + "\n").encode("utf-8")


def deserialize_model(stream: bytes) -> Ensemble:
    """Inverse of serialize_model; raises on version or structure problems."""
    try:
        doc = json.loads(stream.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptModel(f"unparseable model stream: {exc}") from None
    if not isinstance(doc, dict) or "format" not in doc:
        raise CorruptModel("model stream lacks a format field")
    if doc["format"] != MODEL_FORMAT:
        raise VersionMismatch(
            f"model format {doc['format']!r} unsupported (expected {MODEL_FORMAT!r})"
        )
    try:
        config = TrainConfig(**doc["train_config"])
        trees = []
        for record in doc["trees"]:
            builder = _TreeBuilder(None, None, 0, 1, ())
            _record_to_builder(record, builder)
            trees.append(
                RegressionTree(
                    feature=np.array(builder.feature, dtype=np.int32),
                    threshold=np.array(builder.threshold, dtype=np.float64),
                    default_left=np.array(builder.default_left, dtype=bool),
                    left=np.array(builder.left, dtype=np.int32),
                    right=np.array(builder.right, dtype=np.int32),
                    value=np.array(builder.value, dtype=np.float64),
                    gain=np.array(builder.gain, dtype=np.float64),
                    n_rows=np.array(builder.n_rows, dtype=np.int32),
                )
            )
        return Ensemble(
            base_score=float(doc["base_score"]),
            shrinkage=float(doc["shrinkage"]),
            trees=tuple(trees),
            feature_names=tuple(doc["feature_names"]),
            train_config=config,
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, (VersionMismatch, CorruptModel)):
            raise
        raise CorruptModel(f"malformed model document: {exc}") from None


def with_seed(config: TrainConfig, seed: int) -> TrainConfig:
    return replace(config, seed=seed)
