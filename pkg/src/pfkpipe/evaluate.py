"""Metrics, the four-quadrant train/test strategy, batch trends, and latency."""

from __future__ import annotations

import csv
import io
import math
import time
import warnings
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from . import bonsai
from .dataset import Dataset, SplitPair, train_test_partition
from .errors import ValidationError
from .features import (CorrelationRanking, FeatureSubset, rank_features,
                       subset_intersection, subset_union, top_n)
from .parallel import ordered_map
from .preprocess import FittedPreprocessor, PreprocessConfig, fit_pipeline

STRATEGY_CSV_COLUMNS = ("data", "subset", "mse", "mae", "r2",
                        "model_size_kb", "model_ift_ms", "pipeline_ift_ms")


def _check_pair(y, yhat):
    ya = np.asarray(y, dtype=float)
    pa = np.asarray(yhat, dtype=float)
    if ya.shape != pa.shape or ya.ndim != 1:
        raise ValidationError(f"length mismatch: {ya.shape} vs {pa.shape}")
    if ya.size == 0:
        raise ValidationError("empty inputs")
    return ya, pa


def mae(y: Sequence[float], yhat: Sequence[float]) -> float:
    ya, pa = _check_pair(y, yhat)
    return float(np.mean(np.abs(ya - pa)))


def mse(y: Sequence[float], yhat: Sequence[float]) -> float:
    ya, pa = _check_pair(y, yhat)
    return float(np.mean((ya - pa) ** 2))


def r2(y: Sequence[float], yhat: Sequence[float]) -> float:
    ya, pa = _check_pair(y, yhat)
    if ya.size < 2:
        raise ValidationError("r2 needs at least 2 points")
    ss_tot = float(np.sum((ya - ya.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValidationError("r2 undefined for constant targets")
    return 1.0 - float(np.sum((ya - pa) ** 2)) / ss_tot


@dataclass(frozen=True)
class MetricsReport:
    mse: float
    mae: float
    r2: float
    n: int

    @staticmethod
    def from_predictions(y, yhat) -> "MetricsReport":
        ya, pa = _check_pair(y, yhat)
        try:
            r2_value = r2(ya, pa)
        except ValidationError:
            r2_value = math.nan  # single-row or constant-target batch
        return MetricsReport(mse=mse(ya, pa), mae=mae(ya, pa), r2=r2_value, n=int(ya.size))


@dataclass(frozen=True)
class LatencyStats:
    median_ms: float
    p95_ms: float
    mean_ms: float
    n: int

    @staticmethod
    def from_samples(samples_ms: Sequence[float]) -> "LatencyStats":
        arr = np.asarray(samples_ms, dtype=float)
        if arr.size == 0:
            raise ValidationError("no latency samples")
        return LatencyStats(median_ms=float(np.median(arr)),
                            p95_ms=float(np.percentile(arr, 95)),
                            mean_ms=float(arr.mean()), n=int(arr.size))


@dataclass(frozen=True)
class LatencyReport:
    model: LatencyStats
    pipeline: LatencyStats
    stage_fractions: dict
    stage_totals_ms: dict


@dataclass(frozen=True)
class StrategyCell:
    train_label: str
    test_label: str
    subset: FeatureSubset
    metrics: MetricsReport
    model_size_bytes: int
    model_ift_ms: float
    pipeline_ift_ms: float

    @property
    def quadrant(self) -> str:
        return f"D_{self.train_label}{self.test_label}"


def batch_trend(model: bonsai.BonsaiModel, fitted: FittedPreprocessor,
                test: Dataset, batch_size: int) -> list[MetricsReport]:
    """Metrics over consecutive test batches; the last batch may be smaller.

    r2 is NaN for batches where it is undefined (one row or constant targets).
    """
    if batch_size < 1:
        raise ValidationError(f"batch_size must be >= 1, got {batch_size}")
    X = fitted.transform_matrix(test)
    y = fitted.targets(test)
    yhat = bonsai.predict_batch(model, X)
    return [MetricsReport.from_predictions(y[lo:lo + batch_size], yhat[lo:lo + batch_size])
            for lo in range(0, len(y), batch_size)]


def measure_latency(model, fitted: FittedPreprocessor, records: Sequence,
                    warmup: int = 1, reps: int = 3,
                    predict_fn: Callable | None = None) -> LatencyReport:
    """Per-sample wall-clock stats for the model alone and the full pipeline.

    Runs warmup + reps passes over the records and keeps the last reps.
    Each pipeline pass is timed in three stages: preprocess (transform),
    regressor (predict), post-process (assembling the output row and
    updating the running aggregate). The model-only stats come from the
    regressor stage of the same iterations, so every pipeline sample
    dominates its model-only sample by construction. Stage fractions are
    each stage's share of the summed stage time, so they add to 1.
    """
    if reps < 1:
        raise ValidationError(f"reps must be >= 1, got {reps}")
    if warmup < 0:
        raise ValidationError(f"warmup must be >= 0, got {warmup}")
    records = list(records)
    if not records:
        raise ValidationError("no records to measure")
    if predict_fn is None:
        predict_fn = lambda vec: bonsai.predict(model, vec)

    model_samples = []
    pipeline_samples = []
    stage_ns = {"preprocess": 0, "regressor": 0, "postprocess": 0}
    for rep in range(warmup + reps):
        rows = []
        total = 0.0
        for record in records:
            t0 = time.perf_counter_ns()
            vec = fitted.transform(record)
            t1 = time.perf_counter_ns()
            pred = predict_fn(vec)
            t2 = time.perf_counter_ns()
            rows.append((record.psn, pred))
            total += pred
            t3 = time.perf_counter_ns()
            if rep >= warmup:
                stage_ns["preprocess"] += t1 - t0
                stage_ns["regressor"] += t2 - t1
                stage_ns["postprocess"] += t3 - t2
                model_samples.append((t2 - t1) / 1e6)
                pipeline_samples.append((t3 - t0) / 1e6)

    stage_sum = sum(stage_ns.values())
    fractions = {k: (v / stage_sum if stage_sum else 0.0) for k, v in stage_ns.items()}
    return LatencyReport(
        model=LatencyStats.from_samples(model_samples),
        pipeline=LatencyStats.from_samples(pipeline_samples),
        stage_fractions=fractions,
        stage_totals_ms={k: v / 1e6 for k, v in stage_ns.items()},
    )


@dataclass(frozen=True)
class StrategyConfig:
    subset_sizes: tuple[int, ...] = (2, 4, 5, 6, 8, 9)
    test_fraction: float = 0.2
    seed: int = 0
    bonsai: bonsai.BonsaiConfig = bonsai.BonsaiConfig(input_dim=1)
    preprocess: PreprocessConfig = PreprocessConfig()
    measure_timing: bool = True
    latency_reps: int = 3
    latency_warmup: int = 1


@dataclass(frozen=True)
class CellResult:
    cell: StrategyCell
    y_true: np.ndarray
    y_pred: np.ndarray
    latency: LatencyReport | None
    model_bytes: bytes


@dataclass(frozen=True)
class Side:
    label: str
    train: Dataset          # post-outlier training records
    test: Dataset
    fitted: FittedPreprocessor
    ranking: CorrelationRanking


def prepare_side(label: str, data: Dataset, config: StrategyConfig) -> Side | None:
    if len(data) < 2:
        warnings.warn(f"split {label} has {len(data)} records; skipping its quadrants")
        return None
    train, test = train_test_partition(data, config.test_fraction, config.seed)
    fitted = fit_pipeline(train, config.preprocess)
    kept, _ = fitted.filter(train)
    X = fitted.transform_matrix(kept)
    y = fitted.targets(kept)
    ranking = rank_features(X, fitted.feature_order, y)
    return Side(label=label, train=kept, test=test, fitted=fitted, ranking=ranking)


def prepare_sides(split: SplitPair, config: StrategyConfig) -> dict[str, Side]:
    sides = {}
    for label, data in (("A", split.a), ("B", split.b)):
        side = prepare_side(label, data, config)
        if side is not None:
            sides[label] = side
    return sides


def _run_cell(train_side: Side, test_side: Side, subset: FeatureSubset,
              config: StrategyConfig) -> CellResult:
    subset.require_nonempty(f"quadrant D_{train_side.label}{test_side.label}")
    fitted = train_side.fitted.restrict(subset.features)
    X_train = fitted.transform_matrix(train_side.train)
    y_train = fitted.targets(train_side.train)
    cfg = replace(config.bonsai, input_dim=len(subset.features), seed=config.seed)
    model, _ = bonsai.train(cfg, X_train, y_train)

    X_test = fitted.transform_matrix(test_side.test)
    y_test = fitted.targets(test_side.test)
    y_pred = bonsai.predict_batch(model, X_test)
    metrics = MetricsReport.from_predictions(y_test, y_pred)

    latency = None
    model_ift = pipeline_ift = 0.0
    if config.measure_timing:
        latency = measure_latency(model, fitted, test_side.test.records,
                                  warmup=config.latency_warmup, reps=config.latency_reps)
        model_ift = latency.model.median_ms
        pipeline_ift = latency.pipeline.median_ms

    model_bytes = bonsai.serialize(model)
    cell = StrategyCell(
        train_label=train_side.label, test_label=test_side.label, subset=subset,
        metrics=metrics, model_size_bytes=len(model_bytes),
        model_ift_ms=model_ift, pipeline_ift_ms=pipeline_ift)
    return CellResult(cell=cell, y_true=y_test, y_pred=y_pred, latency=latency,
                      model_bytes=model_bytes)


def run_strategy_detailed(split: SplitPair, config: StrategyConfig,
                          sides: dict[str, Side] | None = None) -> list[CellResult]:
    """Full strategy grid: within-split quadrants on top-n subsets, then the
    cross-split quadrants on the intersection and union of the two best
    (minimum MAE) subsets. Preprocessing and rankings are fitted on the
    training side only."""
    if sides is None:
        sides = prepare_sides(split, config)

    results: list[CellResult] = []
    best: dict[str, FeatureSubset] = {}
    for label in ("A", "B"):
        side = sides.get(label)
        if side is None:
            continue
        subsets = [top_n(side.ranking, n, label) for n in config.subset_sizes]
        cell_results = ordered_map(lambda s: _run_cell(side, side, s, config), subsets)
        results.extend(cell_results)
        best[label] = min(
            cell_results,
            key=lambda r: (math.inf if math.isnan(r.cell.metrics.mae) else r.cell.metrics.mae,
                           r.cell.subset.name)).cell.subset

    if "A" in best and "B" in best:
        inter = subset_intersection(best["A"], best["B"])
        union = subset_union(best["A"], best["B"])
        for train_label, test_label in (("A", "B"), ("B", "A")):
            for subset in (inter, union):
                if len(subset) == 0:
                    warnings.warn(f"subset {subset.name} is empty; skipping "
                                  f"D_{train_label}{test_label}")
                    continue
                results.append(_run_cell(sides[train_label], sides[test_label],
                                         subset, config))
    return results


def run_strategy(split: SplitPair, config: StrategyConfig) -> list[StrategyCell]:
    return [r.cell for r in run_strategy_detailed(split, config)]


def strategy_to_csv(cells: Sequence[StrategyCell]) -> str:
    lines = [",".join(STRATEGY_CSV_COLUMNS)]
    for c in cells:
        lines.append(
            f"{c.quadrant},{c.subset.name},{c.metrics.mse:.6f},{c.metrics.mae:.6f},"
            f"{c.metrics.r2:.6f},{c.model_size_bytes / 1024:.3f},"
            f"{c.model_ift_ms:.4f},{c.pipeline_ift_ms:.4f}")
    return "\n".join(lines) + "\n"


def parse_strategy_csv(text: str) -> list[dict]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != STRATEGY_CSV_COLUMNS:
        raise ValidationError(f"unexpected results header {reader.fieldnames!r}")
    rows = []
    for row in reader:
        parsed = {"data": row["data"], "subset": row["subset"]}
        for key in STRATEGY_CSV_COLUMNS[2:]:
            parsed[key] = float(row[key])
        rows.append(parsed)
    return rows
