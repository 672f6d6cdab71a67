"""Correlation-based feature ranking and named feature subsets."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptySubsetError, ValidationError


def pearson_abs(x: Sequence[float], y: Sequence[float]) -> float:
    """Absolute Pearson correlation, in [0, 1]. Zero-variance input gives 0."""
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    if xa.ndim != 1 or ya.ndim != 1 or xa.shape != ya.shape:
        raise ValidationError(f"inputs must be equal-length vectors, got {xa.shape} and {ya.shape}")
    if xa.size < 2:
        raise ValidationError(f"need at least 2 points, got {xa.size}")
    dx = xa - xa.mean()
    dy = ya - ya.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        warnings.warn("zero-variance input; correlation defined as 0", stacklevel=2)
        return 0.0
    r = abs(float(np.dot(dx, dy)) / math.sqrt(sxx * syy))
    return min(r, 1.0)


@dataclass(frozen=True)
class CorrelationRanking:
    """Features sorted by descending |R|; ties broken by feature name."""

    entries: tuple[tuple[str, float], ...]

    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def to_csv(self) -> str:
        lines = ["feature,R"]
        lines.extend(f"{name},{r!r}" for name, r in self.entries)
        return "\n".join(lines) + "\n"


def rank_features(matrix: np.ndarray, feature_names: Sequence[str],
                  target: Sequence[float]) -> CorrelationRanking:
    """Rank columns of a transformed feature matrix by |R| against the target."""
    X = np.asarray(matrix, dtype=float)
    y = np.asarray(target, dtype=float)
    if X.ndim != 2:
        raise ValidationError(f"matrix must be 2-D, got shape {X.shape}")
    if X.shape[1] != len(feature_names):
        raise ValidationError(
            f"{X.shape[1]} columns but {len(feature_names)} feature names")
    if X.shape[0] != y.shape[0]:
        raise ValidationError(
            f"row count mismatch: matrix has {X.shape[0]}, target has {y.shape[0]}")
    scored = [(name, pearson_abs(X[:, j], y)) for j, name in enumerate(feature_names)]
    scored.sort(key=lambda e: (-e[1], e[0]))
    return CorrelationRanking(entries=tuple(scored))


@dataclass(frozen=True)
class FeatureSubset:
    """Ordered, named set of feature names.

    May be empty only as the result of an intersection; training paths call
    require_nonempty before use.
    """

    name: str
    features: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        if len(set(self.features)) != len(self.features):
            raise ValidationError(f"duplicate features in subset {self.name}")

    def __len__(self) -> int:
        return len(self.features)

    def require_nonempty(self, context: str = "training") -> "FeatureSubset":
        if not self.features:
            raise EmptySubsetError(f"subset {self.name} is empty and cannot be used for {context}")
        return self


def top_n(ranking: CorrelationRanking, n: int, tag: str) -> FeatureSubset:
    """The n best-correlated features, named F{n}_{tag}."""
    if not 1 <= n <= len(ranking):
        raise ValidationError(f"n must be in [1, {len(ranking)}], got {n}")
    return FeatureSubset(name=f"F{n}_{tag}", features=ranking.names()[:n])


def subset_union(a: FeatureSubset, b: FeatureSubset) -> FeatureSubset:
    """Union keeping a's order first, then b's novel features."""
    merged = a.features + tuple(f for f in b.features if f not in a.features)
    return FeatureSubset(name=f"{a.name}|{b.name}", features=merged)


def subset_intersection(a: FeatureSubset, b: FeatureSubset) -> FeatureSubset:
    """Intersection in a's order. May be empty; callers must check before training."""
    common = tuple(f for f in a.features if f in b.features)
    return FeatureSubset(name=f"{a.name}&{b.name}", features=common)
