"""Command-line entry point wiring the full pipeline.

Commands: synth, train, evaluate, predict, sweep, benchmark. Runs are driven
by a flat JSON config file plus flag overrides (flags win). All randomness
flows from the single seed. Exit codes: 0 success, 1 validation error,
2 I/O error, 3 internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import baseline, bonsai, evaluate, feedback
from .dataset import (Dataset, parse_records, serialize_records, split_ab,
                      synthesize_dataset, train_test_partition)
from .errors import ModelFormatError, ParseError, ValidationError
from .features import rank_features, top_n
from .preprocess import FittedPreprocessor, PreprocessConfig, fit_pipeline

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_INTERNAL = 3

_DEFAULT_SWEEP_GRID = {"depth": [1, 2, 3], "learning_rate": [0.002, 0.005, 0.01]}


@dataclass
class RunConfig:
    """Flat run configuration. Every key may appear in the JSON config file."""

    input: str | None = None
    out: str = "out"
    seed: int = 0
    test_fraction: float = 0.2
    # preprocessing
    m: float = 20.0
    delta_h: float = 0.0
    zscore_columns: tuple[str, ...] = ("lpdb", "l", "ph", "temp")
    # evaluation strategy
    subsets: tuple[int, ...] = (2, 4, 5, 6, 8, 9)
    subset_size: int | None = None
    trend_batch_size: int = 8
    # bonsai hyperparameters
    depth: int = 3
    proj_dim: int = 10
    sigma: float = 1.0
    sparsity_z: float = 0.3
    sparsity_nodes: float = 0.5
    learning_rate: float = 0.005
    epochs: int = 200
    batch_size: int = 16
    l2: float = 1e-4
    # sweep
    sweep_grid: dict | None = None
    sweep_objective: str = "mae"
    sweep_budget: int | None = None
    rounds: int = 1
    # run behaviour
    timing: bool = True
    figures: bool = True
    format: str = "csv"
    latency_reps: int = 3
    latency_warmup: int = 1
    # synth
    n: int = 200
    # predict
    model: str | None = None
    preprocessor: str | None = None

    def preprocess_config(self) -> PreprocessConfig:
        return PreprocessConfig(m=self.m, delta_h=self.delta_h,
                                zscore_columns=tuple(self.zscore_columns))

    def bonsai_config(self, input_dim: int) -> bonsai.BonsaiConfig:
        return bonsai.BonsaiConfig(
            input_dim=input_dim, depth=self.depth, proj_dim=self.proj_dim,
            sigma=self.sigma, sparsity_z=self.sparsity_z,
            sparsity_nodes=self.sparsity_nodes, learning_rate=self.learning_rate,
            epochs=self.epochs, batch_size=self.batch_size, seed=self.seed, l2=self.l2)

    def strategy_config(self) -> evaluate.StrategyConfig:
        return evaluate.StrategyConfig(
            subset_sizes=tuple(self.subsets), test_fraction=self.test_fraction,
            seed=self.seed, bonsai=self.bonsai_config(1),
            preprocess=self.preprocess_config(), measure_timing=self.timing,
            latency_reps=self.latency_reps, latency_warmup=self.latency_warmup)


_CONFIG_KEYS = {f.name for f in fields(RunConfig)}


def load_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        text = Path(args.config).read_text()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ValidationError("config file must contain a JSON object")
        unknown = set(doc) - _CONFIG_KEYS
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        for key, value in doc.items():
            if isinstance(value, list):
                value = tuple(value)
            setattr(cfg, key, value)

    overrides = {
        "input": getattr(args, "input", None),
        "out": getattr(args, "out", None),
        "seed": getattr(args, "seed", None),
        "format": getattr(args, "format", None),
        "n": getattr(args, "n", None),
        "subset_size": getattr(args, "subset_size", None),
        "rounds": getattr(args, "rounds", None),
        "model": getattr(args, "model", None),
        "preprocessor": getattr(args, "preprocessor", None),
        "epochs": getattr(args, "epochs", None),
        "test_fraction": getattr(args, "test_fraction", None),
    }
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    if getattr(args, "subsets", None) is not None:
        try:
            cfg.subsets = tuple(int(s) for s in args.subsets.split(","))
        except ValueError:
            raise ValidationError(f"--subsets must be comma-separated integers, "
                                  f"got {args.subsets!r}") from None
    if getattr(args, "no_timing", False):
        cfg.timing = False
    if getattr(args, "no_figures", False):
        cfg.figures = False
    return cfg


def _load_dataset(path: str | None) -> Dataset:
    if not path:
        raise ValidationError("an input CSV is required (--input or config 'input')")
    text = Path(path).read_text()
    records = parse_records(text, has_header=True)
    return Dataset(tuple(records), Path(path).stem)


def _outdir(cfg: RunConfig) -> Path:
    path = Path(cfg.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _jsonable(value):
    if isinstance(value, float) and (math.isnan(value) or math.isinf(value)):
        return None
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, np.integer)):
        return _jsonable(value.item())
    return value


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n")


def _cell_dict(cell: evaluate.StrategyCell) -> dict:
    return {
        "data": cell.quadrant,
        "subset": cell.subset.name,
        "features": list(cell.subset.features),
        "mse": cell.metrics.mse,
        "mae": cell.metrics.mae,
        "r2": cell.metrics.r2,
        "model_size_bytes": cell.model_size_bytes,
        "model_ift_ms": cell.model_ift_ms,
        "pipeline_ift_ms": cell.pipeline_ift_ms,
    }


def cmd_synth(cfg: RunConfig) -> int:
    data = synthesize_dataset(cfg.n, cfg.seed)
    out = _outdir(cfg)
    (out / "synthetic.csv").write_text(serialize_records(data.records))
    print(f"wrote {len(data)} records to {out / 'synthetic.csv'}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    data = _load_dataset(cfg.input)
    fitted = fit_pipeline(data, cfg.preprocess_config())
    kept, _ = fitted.filter(data)
    if cfg.subset_size is not None:
        X = fitted.transform_matrix(kept)
        y = fitted.targets(kept)
        ranking = rank_features(X, fitted.feature_order, y)
        subset = top_n(ranking, cfg.subset_size, "T")
        fitted = fitted.restrict(subset.features)
    X_train = fitted.transform_matrix(kept)
    y_train = fitted.targets(kept)
    model, report = bonsai.train(cfg.bonsai_config(len(fitted.feature_order)),
                                 X_train, y_train)
    model_bytes = bonsai.serialize(model)
    report_doc = {
        "losses": list(report.losses),
        "nonzeros": report.nonzeros,
        "wall_clock_s": report.wall_clock_s if cfg.timing else 0.0,
        "seed": report.seed,
        "features": list(fitted.feature_order),
        "train_rows": int(X_train.shape[0]),
        "model_size_bytes": len(model_bytes),
    }

    out = _outdir(cfg)
    (out / "model.bnsi").write_bytes(model_bytes)
    (out / "preprocessor.json").write_text(fitted.to_json())
    _write_json(out / "train_report.json", report_doc)
    print(f"trained on {X_train.shape[0]} rows; model {len(model_bytes)} bytes -> {out}")
    return EXIT_OK


def _rows_csv(rows: list[dict], columns: tuple[str, ...]) -> str:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(str(row[c]) for c in columns))
    return "\n".join(lines) + "\n"


def cmd_evaluate(cfg: RunConfig) -> int:
    if not cfg.subsets:
        raise ValidationError("no subsets configured; set 'subsets' or --subsets")
    data = _load_dataset(cfg.input)
    split = split_ab(data)
    strategy = cfg.strategy_config()
    sides = evaluate.prepare_sides(split, strategy)
    results = evaluate.run_strategy_detailed(split, strategy, sides=sides)
    cells = [r.cell for r in results]
    summary = feedback.analyze(cells)

    best = min(results,
               key=lambda r: (math.inf if math.isnan(r.cell.metrics.mae)
                              else r.cell.metrics.mae, r.cell.subset.name))
    cart_cell = baseline.run_cart_cell(sides[best.cell.train_label],
                                       sides[best.cell.test_label],
                                       best.cell.subset, strategy)
    comparison = baseline.compare(best.cell, cart_cell)

    trend = [evaluate.MetricsReport.from_predictions(
                 best.y_true[lo:lo + cfg.trend_batch_size],
                 best.y_pred[lo:lo + cfg.trend_batch_size])
             for lo in range(0, len(best.y_true), cfg.trend_batch_size)]

    report = {
        "cells": [_cell_dict(c) for c in cells],
        "analysis": {"per_quadrant": summary.per_quadrant,
                     "regressions": list(summary.regressions)},
        "best_cell": _cell_dict(best.cell),
        "cart_baseline": _cell_dict(cart_cell),
        "cart_comparison": comparison.to_dict(),
        "batch_trend": [dataclasses.asdict(t) for t in trend],
        "stage_breakdown": ({"fractions": best.latency.stage_fractions,
                             "totals_ms": best.latency.stage_totals_ms}
                            if best.latency else None),
    }

    out = _outdir(cfg)
    if cfg.format == "json":
        _write_json(out / "results.json", [_cell_dict(c) for c in cells])
    else:
        (out / "results.csv").write_text(evaluate.strategy_to_csv(cells))
    _write_json(out / "report.json", report)
    for label, side in sides.items():
        (out / f"ranking_{label}.csv").write_text(side.ranking.to_csv())

    if cfg.figures:
        from . import figures
        figures.feature_importance_figure(
            {label: side.ranking for label, side in sides.items()},
            out / "feature_importance.png")
        figures.actual_vs_predicted_figure(
            best.y_true, best.y_pred,
            f"{best.cell.quadrant} {best.cell.subset.name}",
            out / "actual_vs_predicted.png")
        figures.batch_trend_figure(trend, out / "batch_trend.png")
        if best.latency is not None:
            figures.stage_breakdown_figure(best.latency.stage_fractions,
                                           out / "stage_breakdown.png")
    print(f"evaluated {len(cells)} cells -> {out}")
    return EXIT_OK


def cmd_predict(cfg: RunConfig) -> int:
    if not cfg.model or not cfg.preprocessor:
        raise ValidationError("predict needs --model and --preprocessor paths")
    model = bonsai.deserialize(Path(cfg.model).read_bytes())
    fitted = FittedPreprocessor.from_json(Path(cfg.preprocessor).read_text())
    if model.config.input_dim != len(fitted.feature_order):
        raise ValidationError(
            f"artifacts incompatible: model expects {model.config.input_dim} features, "
            f"preprocessor emits {len(fitted.feature_order)}")
    data = _load_dataset(cfg.input)
    lines = ["psn,ln_kf_pred"]
    for record in data:
        pred = bonsai.predict(model, fitted.transform(record))
        lines.append(f"{record.psn},{pred!r}")
    out = _outdir(cfg)
    (out / "predictions.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote {len(data)} predictions to {out / 'predictions.csv'}")
    return EXIT_OK


def cmd_sweep(cfg: RunConfig) -> int:
    data = _load_dataset(cfg.input)
    train, test = train_test_partition(data, cfg.test_fraction, cfg.seed)
    grid = cfg.sweep_grid if cfg.sweep_grid else _DEFAULT_SWEEP_GRID
    spec = feedback.SweepSpec(grid=dict(grid), objective=cfg.sweep_objective,
                              budget=cfg.sweep_budget, seed=cfg.seed)
    base = cfg.bonsai_config(1)

    if cfg.rounds <= 1:
        result = feedback.sweep(spec, train, test, base_config=base,
                                pre_config=cfg.preprocess_config(),
                                measure_timing=cfg.timing)
        trials = list(result.trials)
        best_config = replace(base, **result.best_trial.params)
        history = None
    else:
        opt = feedback.optimize_loop(base, spec, train, test, cfg.rounds,
                                     pre_config=cfg.preprocess_config())
        trials = [t for sweep_result in opt.sweeps for t in sweep_result.trials]
        best_config = opt.best_config
        history = [dataclasses.asdict(r) for r in opt.history]

    csv_lines = ["trial,parameters,mae,mse,r2,model_size_bytes,latency_ms"]
    for i, t in enumerate(trials):
        params = ";".join(f"{k}={v}" for k, v in sorted(t.params.items()))
        csv_lines.append(f"{i},{params},{t.metrics.mae:.6f},{t.metrics.mse:.6f},"
                         f"{t.metrics.r2:.6f},{t.model_size},{t.latency_ms:.4f}")

    best_doc = {
        "depth": best_config.depth, "proj_dim": best_config.proj_dim,
        "sigma": best_config.sigma, "sparsity_z": best_config.sparsity_z,
        "sparsity_nodes": best_config.sparsity_nodes,
        "learning_rate": best_config.learning_rate, "epochs": best_config.epochs,
        "batch_size": best_config.batch_size, "l2": best_config.l2,
        "seed": cfg.seed,
    }
    if history is not None:
        best_doc["history"] = history

    out = _outdir(cfg)
    (out / "sweep.csv").write_text("\n".join(csv_lines) + "\n")
    _write_json(out / "best_config.json", best_doc)
    if cfg.figures:
        from . import figures
        values = [feedback.objective_value(t.metrics, spec.objective) for t in trials]
        figures.sweep_objective_figure(values, spec.objective, out / "sweep_objective.png")
    print(f"swept {len(trials)} trials -> {out}")
    return EXIT_OK


def cmd_benchmark(cfg: RunConfig) -> int:
    data = _load_dataset(cfg.input)
    train, test = train_test_partition(data, cfg.test_fraction, cfg.seed)
    fitted = fit_pipeline(train, cfg.preprocess_config())
    kept, _ = fitted.filter(train)
    model, _ = bonsai.train(cfg.bonsai_config(len(fitted.feature_order)),
                            fitted.transform_matrix(kept), fitted.targets(kept))

    if cfg.timing:
        latency = evaluate.measure_latency(model, fitted, test.records,
                                           warmup=cfg.latency_warmup,
                                           reps=cfg.latency_reps)
        doc = {
            "model": dataclasses.asdict(latency.model),
            "pipeline": dataclasses.asdict(latency.pipeline),
            "stage_fractions": latency.stage_fractions,
            "stage_totals_ms": latency.stage_totals_ms,
            "samples": len(test.records),
        }
    else:
        zeros = {"median_ms": 0.0, "p95_ms": 0.0, "mean_ms": 0.0, "n": 0}
        doc = {"model": zeros, "pipeline": dict(zeros),
               "stage_fractions": {"preprocess": 0.0, "regressor": 0.0, "postprocess": 0.0},
               "stage_totals_ms": {"preprocess": 0.0, "regressor": 0.0, "postprocess": 0.0},
               "samples": len(test.records)}
        latency = None

    out = _outdir(cfg)
    _write_json(out / "latency.json", doc)
    if cfg.figures and latency is not None:
        from . import figures
        figures.stage_breakdown_figure(latency.stage_fractions, out / "stage_breakdown.png")
    print(f"benchmarked {len(test.records)} samples -> {out}")
    return EXIT_OK


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "sweep": cmd_sweep,
    "benchmark": cmd_benchmark,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", help="input dataset CSV")
    common.add_argument("--config", help="JSON config file; flags override it")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="run seed (all randomness derives from it)")
    common.add_argument("--subsets", help="comma-separated subset sizes, e.g. 2,4,6")
    common.add_argument("--format", choices=("csv", "json"), help="primary report format")
    common.add_argument("--no-timing", action="store_true",
                        help="write timing fields as 0.0 for byte-reproducible reports")
    common.add_argument("--no-figures", action="store_true", help="skip figure rendering")

    parser = argparse.ArgumentParser(
        prog="pfkpipe",
        description="Protein folding kinetics prediction pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="emit a synthetic dataset")
    p.add_argument("--n", type=int, help="number of records")

    p = sub.add_parser("train", parents=[common], help="fit preprocessor and model")
    p.add_argument("--subset-size", type=int, dest="subset_size",
                   help="train on the top-n correlated features")
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("evaluate", parents=[common],
                       help="run the four-quadrant strategy grid")

    p = sub.add_parser("predict", parents=[common], help="predict ln_kf for input rows")
    p.add_argument("--model", help="path to model.bnsi")
    p.add_argument("--preprocessor", help="path to preprocessor.json")

    p = sub.add_parser("sweep", parents=[common], help="hyperparameter grid sweep")
    p.add_argument("--rounds", type=int, help="optimization rounds (1 = single sweep)")

    p = sub.add_parser("benchmark", parents=[common],
                       help="measure inference latency and stage breakdown")
    p.add_argument("--test-fraction", type=float, dest="test_fraction")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args)
        return _COMMANDS[args.command](cfg)
    except (ParseError, ValidationError, ModelFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
