"""Feedback engine: evaluation aggregation and hyperparameter sensitivity sweeps."""

from __future__ import annotations

import itertools
import json
import math
import time
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import bonsai
from .dataset import Dataset
from .errors import ValidationError
from .evaluate import MetricsReport, StrategyCell
from .parallel import ordered_map
from .preprocess import FittedPreprocessor, PreprocessConfig, fit_pipeline

OBJECTIVES = ("mae", "mse", "r2")

# Hyperparameters the sweep may vary, with their integer-ness and lower bound.
_SWEEPABLE = {
    "depth": (True, 0),
    "proj_dim": (True, 1),
    "sigma": (False, 1e-6),
    "sparsity_z": (False, 1e-6),
    "sparsity_nodes": (False, 1e-6),
    "learning_rate": (False, 1e-9),
    "epochs": (True, 1),
    "batch_size": (True, 1),
    "l2": (False, 0.0),
}
_UPPER = {"sparsity_z": 1.0, "sparsity_nodes": 1.0, "depth": 12}


@dataclass(frozen=True)
class AnalysisSummary:
    """Per-quadrant best subsets by metric, plus regressions vs a prior summary."""

    per_quadrant: dict
    regressions: tuple[str, ...] = ()


def analyze(cells: Sequence[StrategyCell],
            previous: AnalysisSummary | None = None) -> AnalysisSummary:
    if not cells:
        raise ValidationError("no cells to analyze")
    by_quadrant: dict[str, list[StrategyCell]] = {}
    for cell in cells:
        by_quadrant.setdefault(cell.quadrant, []).append(cell)

    def sortable(value: float) -> float:
        return math.inf if math.isnan(value) else value

    per_quadrant = {}
    for quadrant, group in by_quadrant.items():
        best = {}
        for metric in ("mae", "mse"):
            winner = min(group, key=lambda c: (sortable(getattr(c.metrics, metric)),
                                               c.subset.name))
            best[metric] = (winner.subset.name, getattr(winner.metrics, metric))
        winner = min(group, key=lambda c: (sortable(-c.metrics.r2), c.subset.name))
        best["r2"] = (winner.subset.name, winner.metrics.r2)
        per_quadrant[quadrant] = best

    regressions = []
    if previous is not None:
        for quadrant, best in per_quadrant.items():
            prior = previous.per_quadrant.get(quadrant)
            if prior is None:
                continue
            for metric, (_, value) in best.items():
                _, old = prior[metric]
                worse = value > old if metric in ("mae", "mse") else value < old
                if worse:
                    regressions.append(f"{quadrant} {metric}: {old:.6f} -> {value:.6f}")
    return AnalysisSummary(per_quadrant=per_quadrant, regressions=tuple(regressions))


@dataclass(frozen=True)
class SweepSpec:
    grid: dict
    objective: str = "mae"
    budget: int | None = None
    seed: int = 0

    def validate(self) -> "SweepSpec":
        if not self.grid:
            raise ValidationError("sweep grid must be non-empty")
        for name, values in self.grid.items():
            if name not in _SWEEPABLE:
                raise ValidationError(
                    f"unknown sweep parameter {name!r}; allowed: {sorted(_SWEEPABLE)}")
            if not list(values):
                raise ValidationError(f"sweep parameter {name!r} has no candidate values")
        if self.objective not in OBJECTIVES:
            raise ValidationError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.budget is not None and self.budget < 1:
            raise ValidationError(f"budget must be >= 1, got {self.budget}")
        return self


@dataclass(frozen=True)
class Trial:
    index: int
    params: dict
    metrics: MetricsReport
    model_size: int
    latency_ms: float


@dataclass(frozen=True)
class SweepResult:
    trials: tuple[Trial, ...]
    best: int
    objective: str

    @property
    def best_trial(self) -> Trial:
        return self.trials[self.best]


def objective_value(metrics: MetricsReport, objective: str) -> float:
    # Lower is better for all objectives; r2 is negated. NaN metrics (from
    # diverged trials) rank last so they can never win a sweep.
    if objective == "mae":
        value = metrics.mae
    elif objective == "mse":
        value = metrics.mse
    else:
        value = -metrics.r2
    return math.inf if math.isnan(value) else value


def _combos(spec: SweepSpec) -> list[dict]:
    names = sorted(spec.grid)
    combos = [dict(zip(names, values))
              for values in itertools.product(*(spec.grid[n] for n in names))]
    if spec.budget is not None:
        combos = combos[:spec.budget]
    return combos


def _params_key(params: dict) -> str:
    return json.dumps(params, sort_keys=True)


def sweep(spec: SweepSpec, train: Dataset, test: Dataset,
          base_config: bonsai.BonsaiConfig | None = None,
          pre_config: PreprocessConfig = PreprocessConfig(),
          features: Sequence[str] | None = None,
          measure_timing: bool = False) -> SweepResult:
    """Exhaustive grid evaluation; each trial is a full fit plus test metrics.

    Ties on the objective break toward smaller serialized models, then
    lexicographically sorted parameters.
    """
    spec.validate()
    fitted = fit_pipeline(train, pre_config)
    if features is not None:
        fitted = fitted.restrict(features)
    kept, _ = fitted.filter(train)
    X_train = fitted.transform_matrix(kept)
    y_train = fitted.targets(kept)
    X_test = fitted.transform_matrix(test)
    y_test = fitted.targets(test)
    input_dim = len(fitted.feature_order)
    base = base_config if base_config is not None else bonsai.BonsaiConfig(input_dim=input_dim)

    def run_trial(item):
        index, params = item
        cfg = replace(base, **params, input_dim=input_dim, seed=spec.seed)
        # Clamp so small training sets remain sweepable over batch sizes.
        cfg = replace(cfg, batch_size=min(cfg.batch_size, X_train.shape[0]))
        model, _ = bonsai.train(cfg, X_train, y_train)
        metrics = MetricsReport.from_predictions(y_test, bonsai.predict_batch(model, X_test))
        latency = 0.0
        if measure_timing:
            sample = X_test[:min(32, X_test.shape[0])]
            t0 = time.perf_counter_ns()
            for row in sample:
                bonsai.predict(model, row)
            latency = (time.perf_counter_ns() - t0) / 1e6 / sample.shape[0]
        return Trial(index=index, params=params, metrics=metrics,
                     model_size=bonsai.model_size(model), latency_ms=latency)

    trials = tuple(ordered_map(run_trial, list(enumerate(_combos(spec)))))
    best = min(trials, key=lambda t: (objective_value(t.metrics, spec.objective),
                                      t.model_size, _params_key(t.params)))
    return SweepResult(trials=trials, best=best.index, objective=spec.objective)


@dataclass(frozen=True)
class RoundRecord:
    round_index: int
    params: dict
    objective_value: float
    trial_count: int


@dataclass(frozen=True)
class OptimizeResult:
    best_config: bonsai.BonsaiConfig
    best_model: bonsai.BonsaiModel
    history: tuple[RoundRecord, ...]
    sweeps: tuple[SweepResult, ...] = ()


def _clamp(name: str, value):
    integer, lo = _SWEEPABLE[name]
    hi = _UPPER.get(name)
    v = float(value)
    if hi is not None:
        v = min(v, hi)
    v = max(v, lo)
    return int(round(v)) if integer else v


def _narrowed_grid(original: dict, center: dict, round_index: int) -> dict:
    """Candidate grid around the incumbent; spans halve every round."""
    grid = {}
    for name, values in original.items():
        lo, hi = min(values), max(values)
        span = (hi - lo) / (2 ** round_index)
        mid = center[name]
        candidates = [_clamp(name, mid - span / 2), _clamp(name, mid),
                      _clamp(name, mid + span / 2)]
        unique = list(dict.fromkeys(candidates))
        grid[name] = unique
    return grid


def optimize_loop(base_config: bonsai.BonsaiConfig | None, spec: SweepSpec,
                  train: Dataset, test: Dataset, rounds: int,
                  pre_config: PreprocessConfig = PreprocessConfig(),
                  features: Sequence[str] | None = None) -> OptimizeResult:
    """Iterated sweeps with incumbent retention and grid narrowing.

    The incumbent never worsens: its configuration is re-evaluated inside
    every round's grid, so the per-round best objective is non-increasing.
    """
    if rounds < 1:
        raise ValidationError(f"rounds must be >= 1, got {rounds}")
    spec.validate()
    incumbent_params: dict | None = None
    incumbent_value = math.inf
    history: list[RoundRecord] = []
    sweeps: list[SweepResult] = []
    grid = spec.grid
    for round_index in range(1, rounds + 1):
        result = sweep(replace(spec, grid=grid), train, test,
                       base_config=base_config, pre_config=pre_config, features=features)
        sweeps.append(result)
        candidate = result.best_trial
        value = objective_value(candidate.metrics, spec.objective)
        if value < incumbent_value:
            incumbent_params = candidate.params
            incumbent_value = value
        history.append(RoundRecord(round_index=round_index, params=incumbent_params,
                                   objective_value=incumbent_value,
                                   trial_count=len(result.trials)))
        grid = _narrowed_grid(spec.grid, incumbent_params, round_index)

    fitted = fit_pipeline(train, pre_config)
    if features is not None:
        fitted = fitted.restrict(features)
    kept, _ = fitted.filter(train)
    X_train = fitted.transform_matrix(kept)
    y_train = fitted.targets(kept)
    input_dim = len(fitted.feature_order)
    base = base_config if base_config is not None else bonsai.BonsaiConfig(input_dim=input_dim)
    best_config = replace(base, **incumbent_params, input_dim=input_dim, seed=spec.seed)
    best_config = replace(best_config, batch_size=min(best_config.batch_size, X_train.shape[0]))
    best_model, _ = bonsai.train(best_config, X_train, y_train)
    return OptimizeResult(best_config=best_config, best_model=best_model,
                          history=tuple(history), sweeps=tuple(sweeps))


def sweep_to_csv(result: SweepResult) -> str:
    lines = ["trial,parameters,mae,mse,r2,model_size_bytes,latency_ms"]
    for t in result.trials:
        params = ";".join(f"{k}={v}" for k, v in sorted(t.params.items()))
        lines.append(f"{t.index},{params},{t.metrics.mae:.6f},{t.metrics.mse:.6f},"
                     f"{t.metrics.r2:.6f},{t.model_size},{t.latency_ms:.4f}")
    return "\n".join(lines) + "\n"
