"""Greedy variance-reduction regression tree used as an in-repo comparison point."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ValidationError
from .evaluate import (MetricsReport, Side, StrategyCell, StrategyConfig,
                       measure_latency)
from .features import FeatureSubset

CART_MAGIC = b"CART"
CART_FORMAT_VERSION = 1


@dataclass
class CartNode:
    value: float
    n: int
    feature: int | None = None
    threshold: float | None = None
    left: Optional["CartNode"] = None
    right: Optional["CartNode"] = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None


@dataclass
class CartModel:
    root: CartNode
    n_features: int
    max_depth: int | None
    min_samples_leaf: int


def _sse(total: float, total_sq: float, n: int) -> float:
    return total_sq - total * total / n


def _best_split(X: np.ndarray, y: np.ndarray, min_samples_leaf: int):
    """Best (feature, midpoint threshold) by summed-SSE reduction.

    Ties resolve to the lowest feature index, then the lowest threshold,
    by scanning features and thresholds in ascending order and accepting
    only strict improvements.
    """
    n = len(y)
    base = _sse(float(y.sum()), float((y ** 2).sum()), n)
    best = None
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        ys = y[order]
        csum = np.cumsum(ys)
        csq = np.cumsum(ys ** 2)
        total, total_sq = csum[-1], csq[-1]
        for i in range(n - 1):
            if xs[i] == xs[i + 1]:
                continue
            n_left = i + 1
            n_right = n - n_left
            if n_left < min_samples_leaf or n_right < min_samples_leaf:
                continue
            sse_left = _sse(float(csum[i]), float(csq[i]), n_left)
            sse_right = _sse(float(total - csum[i]), float(total_sq - csq[i]), n_right)
            reduction = base - (sse_left + sse_right)
            if best is None or reduction > best[0]:
                best = (reduction, j, (xs[i] + xs[i + 1]) / 2.0)
    if best is None or best[0] <= 0.0:
        return None
    return best[1], best[2]


def fit_cart(X: np.ndarray, y: np.ndarray, max_depth: int | None = None,
             min_samples_leaf: int = 1, seed: int = 0) -> CartModel:
    """Greedy CART regression fit. seed is accepted for interface parity only;
    the algorithm is fully deterministic."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValidationError(f"bad shapes: X {X.shape}, y {y.shape}")
    if X.shape[0] < max(min_samples_leaf, 1):
        raise ValidationError(
            f"need at least {max(min_samples_leaf, 1)} rows, got {X.shape[0]}")

    depth_cap = math.inf if max_depth is None else max_depth

    def grow(Xs, ys, depth) -> CartNode:
        node = CartNode(value=float(ys.mean()), n=len(ys))
        if depth >= depth_cap or len(ys) < 2 * min_samples_leaf or np.all(ys == ys[0]):
            return node
        split = _best_split(Xs, ys, min_samples_leaf)
        if split is None:
            return node
        j, thr = split
        mask = Xs[:, j] <= thr
        node.feature = j
        node.threshold = thr
        node.left = grow(Xs[mask], ys[mask], depth + 1)
        node.right = grow(Xs[~mask], ys[~mask], depth + 1)
        return node

    return CartModel(root=grow(X, y, 0), n_features=X.shape[1],
                     max_depth=max_depth, min_samples_leaf=min_samples_leaf)


def predict_cart(model: CartModel, x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != model.n_features:
        raise ValidationError(
            f"expected a vector of length {model.n_features}, got shape {x.shape}")
    node = model.root
    while not node.is_leaf:
        node = node.left if x[node.feature] <= node.threshold else node.right
    return node.value


def predict_cart_batch(model: CartModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return np.array([predict_cart(model, row) for row in X])


def serialize_cart(model: CartModel) -> bytes:
    """Compact preorder layout: leaves carry f32 values, internal nodes u16
    feature + f32 threshold."""
    buf = bytearray()
    buf += CART_MAGIC
    buf.append(CART_FORMAT_VERSION)
    buf += struct.pack("<H", model.n_features)

    nodes = []

    def walk(node: CartNode):
        nodes.append(node)
        if not node.is_leaf:
            walk(node.left)
            walk(node.right)

    walk(model.root)
    buf += struct.pack("<I", len(nodes))
    for node in nodes:
        if node.is_leaf:
            buf += struct.pack("<Bf", 1, node.value)
        else:
            buf += struct.pack("<BHf", 0, node.feature, node.threshold)
    return bytes(buf)


def cart_model_size(model: CartModel) -> int:
    return len(serialize_cart(model))


@dataclass(frozen=True)
class ComparisonReport:
    """bonsai/cart ratios for the headline columns of a strategy cell."""

    r2_ratio: float
    model_size_ratio: float
    model_ift_ratio: float
    pipeline_ift_ratio: float

    def to_dict(self) -> dict:
        return {"r2_ratio": self.r2_ratio,
                "model_size_ratio": self.model_size_ratio,
                "model_ift_ratio": self.model_ift_ratio,
                "pipeline_ift_ratio": self.pipeline_ift_ratio}


def _ratio(a: float, b: float) -> float:
    return a / b if b else math.nan


def run_cart_cell(train_side: Side, test_side: Side, subset: FeatureSubset,
                  config: StrategyConfig, max_depth: int | None = None,
                  min_samples_leaf: int = 1) -> StrategyCell:
    """Train and evaluate a CART cell on the same data/subset as a bonsai cell."""
    subset.require_nonempty(f"quadrant D_{train_side.label}{test_side.label}")
    fitted = train_side.fitted.restrict(subset.features)
    X_train = fitted.transform_matrix(train_side.train)
    y_train = fitted.targets(train_side.train)
    model = fit_cart(X_train, y_train, max_depth=max_depth,
                     min_samples_leaf=min_samples_leaf, seed=config.seed)

    X_test = fitted.transform_matrix(test_side.test)
    y_test = fitted.targets(test_side.test)
    metrics = MetricsReport.from_predictions(y_test, predict_cart_batch(model, X_test))

    model_ift = pipeline_ift = 0.0
    if config.measure_timing:
        latency = measure_latency(model, fitted, test_side.test.records,
                                  warmup=config.latency_warmup, reps=config.latency_reps,
                                  predict_fn=lambda vec: predict_cart(model, vec))
        model_ift = latency.model.median_ms
        pipeline_ift = latency.pipeline.median_ms

    return StrategyCell(
        train_label=train_side.label, test_label=test_side.label, subset=subset,
        metrics=metrics, model_size_bytes=cart_model_size(model),
        model_ift_ms=model_ift, pipeline_ift_ms=pipeline_ift)


def compare(bonsai_cell: StrategyCell, cart_cell: StrategyCell) -> ComparisonReport:
    same = (bonsai_cell.train_label == cart_cell.train_label
            and bonsai_cell.test_label == cart_cell.test_label
            and bonsai_cell.subset.name == cart_cell.subset.name)
    if not same:
        raise ValidationError(
            f"cells compare different data: {bonsai_cell.quadrant}/{bonsai_cell.subset.name} "
            f"vs {cart_cell.quadrant}/{cart_cell.subset.name}")
    return ComparisonReport(
        r2_ratio=_ratio(bonsai_cell.metrics.r2, cart_cell.metrics.r2),
        model_size_ratio=_ratio(bonsai_cell.model_size_bytes, cart_cell.model_size_bytes),
        model_ift_ratio=_ratio(bonsai_cell.model_ift_ms, cart_cell.model_ift_ms),
        pipeline_ift_ratio=_ratio(bonsai_cell.pipeline_ift_ms, cart_cell.pipeline_ift_ms),
    )
