"""Preprocessing stages: outlier removal, rate/Z-score standardization, encoding.

Fitting runs the stages in order on the training data: interquartile-range
outlier removal over the numeric columns, temperature transfer of the rate
constants to a 25 C reference plus Z-score parameters for the configured
columns, smoothed target encoding of the categorical columns, and finally a
fixed output feature order. The fitted state is immutable; transforms are
pure and safe to call concurrently.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .dataset import (CATEGORICAL_FEATURES, MODEL_FEATURES, NUMERIC_FEATURES,
                      Dataset, ProteinRecord)
from .errors import ValidationError

GAS_CONSTANT = 8.314  # J/(mol K)
CELSIUS_OFFSET = 273.15

PREPROCESSOR_FORMAT_VERSION = 1

# Columns that are rate constants and therefore temperature-transferred.
RATE_COLUMNS = ("ln_ku",)


@dataclass(frozen=True)
class IqrBounds:
    q1: float
    q3: float
    lower: float
    upper: float


@dataclass(frozen=True)
class ZScoreParams:
    mean: float
    std: float  # population standard deviation


@dataclass(frozen=True)
class RateStandardizationParams:
    """Eyring-style transfer of ln k across temperature.

    delta_h is the activation enthalpy in J/mol; the default 0 reduces the
    correction to the ln(T_ref/T) prefactor term.
    """

    t_ref: float = 298.15
    delta_h: float = 0.0
    r_gas: float = GAS_CONSTANT

    def __post_init__(self):
        if self.t_ref <= 0:
            raise ValidationError(f"t_ref must be positive kelvin, got {self.t_ref}")


@dataclass(frozen=True)
class MEstimateTable:
    """Smoothed target-encoding state: global prior plus per-category sums."""

    m: float
    prior: float
    per_category: Mapping[str, tuple[int, float]]

    def __post_init__(self):
        if self.m < 0:
            raise ValidationError(f"m must be >= 0, got {self.m}")


@dataclass(frozen=True)
class PreprocessConfig:
    m: float = 20.0
    t_ref_kelvin: float = 298.15
    delta_h: float = 0.0
    zscore_columns: tuple[str, ...] = ("lpdb", "l", "ph", "temp")
    iqr_columns: tuple[str, ...] = NUMERIC_FEATURES
    features: tuple[str, ...] = MODEL_FEATURES

    def validate(self) -> "PreprocessConfig":
        for col in self.zscore_columns:
            if col not in NUMERIC_FEATURES:
                raise ValidationError(f"cannot z-score non-numeric column {col!r}")
        for col in self.iqr_columns:
            if col not in NUMERIC_FEATURES:
                raise ValidationError(f"cannot bound non-numeric column {col!r}")
        for col in self.features:
            if col not in MODEL_FEATURES:
                raise ValidationError(f"unknown feature {col!r}")
        if len(set(self.features)) != len(self.features):
            raise ValidationError("duplicate feature names in config")
        return self


def fit_iqr(values: Sequence[float]) -> IqrBounds:
    """Quartiles by linear interpolation between order statistics, Tukey fences."""
    arr = np.asarray(values, dtype=float)
    if arr.size < 4:
        raise ValidationError(f"need at least 4 values to fit IQR bounds, got {arr.size}")
    q1 = float(np.quantile(arr, 0.25))
    q3 = float(np.quantile(arr, 0.75))
    iqr = q3 - q1
    return IqrBounds(q1=q1, q3=q3, lower=q1 - 1.5 * iqr, upper=q3 + 1.5 * iqr)


def filter_outliers(data: Dataset, bounds: Mapping[str, IqrBounds]) -> tuple[Dataset, int]:
    """Keep records whose bounded features all lie inside [lower, upper].

    Boundary values are kept. Returns the filtered dataset and removed count.
    """
    kept = []
    for record in data:
        ok = True
        for feature, b in bounds.items():
            if feature not in NUMERIC_FEATURES:
                raise ValidationError(f"record has no numeric feature {feature!r}")
            v = float(record.value(feature))
            if v < b.lower or v > b.upper:
                ok = False
                break
        if ok:
            kept.append(record)
    return Dataset(tuple(kept), data.label), len(data) - len(kept)


def standardize_rate(ln_k: float, temp_celsius: float,
                     params: RateStandardizationParams) -> float:
    """Transfer ln k measured at temp_celsius to the reference temperature.

    ln k(T_ref) = ln k(T) + ln(T_ref/T) + (delta_h/R) (1/T - 1/T_ref)
    """
    t = temp_celsius + CELSIUS_OFFSET
    if t <= 0:
        raise ValidationError(f"non-physical temperature {temp_celsius} C")
    return (ln_k + math.log(params.t_ref / t)
            + (params.delta_h / params.r_gas) * (1.0 / t - 1.0 / params.t_ref))


def fit_zscore(values: Sequence[float]) -> ZScoreParams:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ValidationError("cannot fit z-score parameters on empty input")
    return ZScoreParams(mean=float(arr.mean()), std=float(arr.std()))


def apply_zscore(value: float, params: ZScoreParams) -> float:
    # Constant columns (std 0) carry no information; map them to 0.
    if params.std == 0.0:
        return 0.0
    return (value - params.mean) / params.std


def fit_m_estimate(categories: Sequence[str], targets: Sequence[float],
                   m: float) -> MEstimateTable:
    if len(categories) != len(targets):
        raise ValidationError(
            f"categories and targets length mismatch: {len(categories)} vs {len(targets)}")
    if len(categories) == 0:
        raise ValidationError("cannot fit encoder on empty input")
    per: dict[str, tuple[int, float]] = {}
    for cat, t in zip(categories, targets):
        count, total = per.get(cat, (0, 0.0))
        per[cat] = (count + 1, total + float(t))
    prior = float(np.mean(np.asarray(targets, dtype=float)))
    return MEstimateTable(m=float(m), prior=prior, per_category=per)


def encode_category(cat: str, table: MEstimateTable) -> float:
    """Blend of category mean and global prior, weighted by the category count."""
    entry = table.per_category.get(cat)
    if entry is None:
        return table.prior
    count, total = entry
    return (total + table.m * table.prior) / (count + table.m)


@dataclass(frozen=True)
class FittedPreprocessor:
    """Frozen preprocessing state; transform and target are pure functions."""

    iqr_bounds: Mapping[str, IqrBounds]
    zscore: Mapping[str, ZScoreParams]
    encoders: Mapping[str, MEstimateTable]
    rate_params: RateStandardizationParams
    feature_order: tuple[str, ...]
    rate_columns: tuple[str, ...] = RATE_COLUMNS
    outliers_removed: int = 0

    def restrict(self, features: Sequence[str]) -> "FittedPreprocessor":
        """Same fitted state emitting only the named features, in the given order."""
        features = tuple(features)
        for name in features:
            if name not in MODEL_FEATURES:
                raise ValidationError(f"unknown feature {name!r}")
        if len(set(features)) != len(features):
            raise ValidationError("duplicate features in restriction")
        return replace(self, feature_order=features)

    def transform(self, record: ProteinRecord) -> np.ndarray:
        out = np.empty(len(self.feature_order))
        for i, name in enumerate(self.feature_order):
            if name in CATEGORICAL_FEATURES:
                out[i] = encode_category(record.value(name), self.encoders[name])
            else:
                v = float(record.value(name))
                if name in self.rate_columns:
                    v = standardize_rate(v, record.temp, self.rate_params)
                zp = self.zscore.get(name)
                if zp is not None:
                    v = apply_zscore(v, zp)
                out[i] = v
        return out

    def target(self, record: ProteinRecord) -> float:
        """Temperature-standardized ln_kf. The target is never z-scored."""
        if record.ln_kf is None:
            raise ValidationError(f"record {record.psn} has no ln_kf target")
        return standardize_rate(record.ln_kf, record.temp, self.rate_params)

    def transform_matrix(self, data: Dataset) -> np.ndarray:
        return np.stack([self.transform(r) for r in data.records])

    def targets(self, data: Dataset) -> np.ndarray:
        return np.array([self.target(r) for r in data.records])

    def filter(self, data: Dataset) -> tuple[Dataset, int]:
        return filter_outliers(data, self.iqr_bounds)

    def to_json(self) -> str:
        doc = {
            "format_version": PREPROCESSOR_FORMAT_VERSION,
            "feature_order": list(self.feature_order),
            "rate": {
                "t_ref": self.rate_params.t_ref,
                "delta_h": self.rate_params.delta_h,
                "r_gas": self.rate_params.r_gas,
                "columns": list(self.rate_columns),
            },
            "iqr": {k: {"q1": b.q1, "q3": b.q3, "lower": b.lower, "upper": b.upper}
                    for k, b in self.iqr_bounds.items()},
            "zscore": {k: {"mean": p.mean, "std": p.std} for k, p in self.zscore.items()},
            "encoders": {
                k: {"m": t.m, "prior": t.prior,
                    "categories": {c: [n, s] for c, (n, s) in t.per_category.items()}}
                for k, t in self.encoders.items()
            },
            "outliers_removed": self.outliers_removed,
        }
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"

    @staticmethod
    def from_json(text: str) -> "FittedPreprocessor":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"preprocessor file is not valid JSON: {exc}") from None
        version = doc.get("format_version")
        if version != PREPROCESSOR_FORMAT_VERSION:
            raise ValidationError(
                f"preprocessor format version {version} unsupported, "
                f"expected {PREPROCESSOR_FORMAT_VERSION}")
        rate = doc["rate"]
        return FittedPreprocessor(
            iqr_bounds={k: IqrBounds(**b) for k, b in doc["iqr"].items()},
            zscore={k: ZScoreParams(**p) for k, p in doc["zscore"].items()},
            encoders={
                k: MEstimateTable(m=t["m"], prior=t["prior"],
                                  per_category={c: (int(n), float(s))
                                                for c, (n, s) in t["categories"].items()})
                for k, t in doc["encoders"].items()
            },
            rate_params=RateStandardizationParams(
                t_ref=rate["t_ref"], delta_h=rate["delta_h"], r_gas=rate["r_gas"]),
            feature_order=tuple(doc["feature_order"]),
            rate_columns=tuple(rate["columns"]),
            outliers_removed=int(doc["outliers_removed"]),
        )


def _column_values(data: Dataset, column: str,
                   rate_params: RateStandardizationParams) -> list[float]:
    values = []
    for r in data:
        v = float(r.value(column))
        if column in RATE_COLUMNS:
            v = standardize_rate(v, r.temp, rate_params)
        values.append(v)
    return values


def fit_pipeline(data: Dataset, config: PreprocessConfig = PreprocessConfig()) -> FittedPreprocessor:
    """Fit every stage on the training data and freeze the result.

    Requires ln_kf on every record (the encoders need targets). Raises if
    outlier removal leaves nothing to fit on.
    """
    config.validate()
    if len(data) == 0:
        raise ValidationError("cannot fit preprocessor on an empty dataset")
    for r in data:
        if r.ln_kf is None:
            raise ValidationError(f"record {r.psn} has no ln_kf; fitting requires targets")

    bounds = {col: fit_iqr([float(r.value(col)) for r in data])
              for col in config.iqr_columns}
    kept, removed = filter_outliers(data, bounds)
    if len(kept) == 0:
        raise ValidationError("outlier removal left no records to fit on")

    rate_params = RateStandardizationParams(t_ref=config.t_ref_kelvin, delta_h=config.delta_h)
    zscore = {col: fit_zscore(_column_values(kept, col, rate_params))
              for col in config.zscore_columns}

    y = [standardize_rate(r.ln_kf, r.temp, rate_params) for r in kept]
    encoders = {col: fit_m_estimate([r.value(col) for r in kept], y, config.m)
                for col in CATEGORICAL_FEATURES}

    return FittedPreprocessor(
        iqr_bounds=bounds,
        zscore=zscore,
        encoders=encoders,
        rate_params=rate_params,
        feature_order=tuple(config.features),
        outliers_removed=removed,
    )
