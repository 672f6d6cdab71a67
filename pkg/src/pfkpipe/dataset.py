"""Protein record schema, CSV ingestion, dataset splits, and synthetic data."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .errors import ParseError, ValidationError

# Exact CSV column order. Header row is required on disk.
COLUMNS = ("psn", "class", "fold", "lpdb", "l", "ph", "temp",
           "f_type", "ln_ku", "beta_t", "ln_kf")

NUMERIC_FEATURES = ("lpdb", "l", "ph", "temp", "ln_ku", "beta_t")
CATEGORICAL_FEATURES = ("class", "fold", "f_type")
# Model-facing features in Table-style order (psn is an identifier, ln_kf the target).
MODEL_FEATURES = ("class", "fold", "lpdb", "l", "ph", "temp", "f_type", "ln_ku", "beta_t")
FOLD_TYPES = ("2S", "N2S")

# "class" is a reserved word; the dataclass attribute is class_.
_ATTR_BY_COLUMN = {"class": "class_"}


def _attr(column: str) -> str:
    return _ATTR_BY_COLUMN.get(column, column)


@dataclass(frozen=True)
class ProteinRecord:
    """One protein observation. ln_kf is None for inference-only rows."""

    psn: str
    class_: str
    fold: str
    lpdb: int
    l: int
    ph: float
    temp: float
    f_type: str
    ln_ku: float
    beta_t: float
    ln_kf: float | None = None

    def validate(self) -> "ProteinRecord":
        if not self.psn:
            raise ValidationError("psn must be non-empty")
        if self.lpdb < 0:
            raise ValidationError(f"lpdb must be >= 0, got {self.lpdb}")
        if self.l < 1 or self.l < self.lpdb:
            raise ValidationError(
                f"l must be >= 1 and >= lpdb, got l={self.l}, lpdb={self.lpdb}")
        if not 0.0 <= self.ph <= 14.0:
            raise ValidationError(f"ph out of range [0, 14]: {self.ph}")
        if self.f_type not in FOLD_TYPES:
            raise ValidationError(f"f_type must be one of {FOLD_TYPES}, got {self.f_type!r}")
        if not 0.0 <= self.beta_t <= 1.0:
            raise ValidationError(f"beta_t out of range [0, 1]: {self.beta_t}")
        return self

    def value(self, feature: str):
        """Field value by its external (CSV) column name."""
        return getattr(self, _attr(feature))


@dataclass(frozen=True)
class Dataset:
    """Immutable sequence of records with a provenance label."""

    records: tuple[ProteinRecord, ...]
    label: str

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if not self.label:
            raise ValidationError("dataset label must be non-empty")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[ProteinRecord]:
        return iter(self.records)


@dataclass(frozen=True)
class SplitPair:
    """The two-way dataset split; a and b must not share protein names."""

    a: Dataset
    b: Dataset

    def __post_init__(self):
        shared = {r.psn for r in self.a} & {r.psn for r in self.b}
        if shared:
            raise ValidationError(f"splits share protein names: {sorted(shared)[:5]}")


_INT_COLUMNS = ("lpdb", "l")
_FLOAT_COLUMNS = ("ph", "temp", "ln_ku", "beta_t")


def parse_records(csv_text: str, has_header: bool = True) -> list[ProteinRecord]:
    """Parse CSV text in the documented column order into records.

    ln_kf may be empty (inference rows). Errors name the offending data row
    (1-based) and column.
    """
    reader = csv.reader(io.StringIO(csv_text))
    rows = list(reader)
    if has_header:
        if not rows:
            raise ParseError("missing header row")
        header = tuple(rows[0])
        if header != COLUMNS:
            raise ParseError(f"unexpected header {header!r}, expected {COLUMNS!r}")
        rows = rows[1:]

    records = []
    for i, row in enumerate(rows, start=1):
        if len(row) != len(COLUMNS):
            raise ParseError(f"row {i}: expected {len(COLUMNS)} columns, got {len(row)}")
        values = {}
        for col, raw in zip(COLUMNS, row):
            try:
                if col in _INT_COLUMNS:
                    values[_attr(col)] = int(raw)
                elif col in _FLOAT_COLUMNS:
                    values[_attr(col)] = float(raw)
                elif col == "ln_kf":
                    values[col] = float(raw) if raw != "" else None
                else:
                    values[_attr(col)] = raw
            except ValueError:
                raise ParseError(f"row {i}, column '{col}': cannot parse {raw!r}") from None
        try:
            records.append(ProteinRecord(**values).validate())
        except ValidationError as exc:
            raise ValidationError(f"row {i}: {exc}") from None
    return records


def serialize_records(records: Iterable[ProteinRecord]) -> str:
    """Inverse of parse_records: CSV text with header, lossless float formatting."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(COLUMNS)
    for r in records:
        row = []
        for col in COLUMNS:
            v = r.value(col) if col != "ln_kf" else r.ln_kf
            if v is None:
                row.append("")
            elif isinstance(v, float):
                row.append(repr(v))
            else:
                row.append(str(v))
        writer.writerow(row)
    return out.getvalue()


def default_split_rule(record: ProteinRecord) -> str:
    """Assign two-state kinetics to side A, non-two-state to side B."""
    if record.f_type == "2S":
        return "A"
    if record.f_type == "N2S":
        return "B"
    raise ValidationError(f"unknown f_type {record.f_type!r} for {record.psn}")


def split_ab(data: Dataset, rule: Callable[[ProteinRecord], str] | None = None) -> SplitPair:
    """Two-way split of a dataset. The default rule keys on fold kinetics type."""
    rule = rule or default_split_rule
    a, b = [], []
    for record in data:
        side = rule(record)
        if side == "A":
            a.append(record)
        elif side == "B":
            b.append(record)
        else:
            raise ValidationError(f"split rule returned {side!r}, expected 'A' or 'B'")
    pair = SplitPair(Dataset(tuple(a), f"{data.label}(A)"), Dataset(tuple(b), f"{data.label}(B)"))
    assert len(pair.a) + len(pair.b) == len(data)
    return pair


def train_test_partition(data: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic disjoint train/test partition; at least one record each side."""
    if not 0.0 < test_fraction < 1.0:
        raise ValidationError(f"test_fraction must be in (0, 1), got {test_fraction}")
    n = len(data)
    if n < 2:
        raise ValidationError(f"need at least 2 records to partition, got {n}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_test = min(max(round(test_fraction * n), 1), n - 1)
    test_idx = set(perm[:n_test].tolist())
    train = tuple(r for i, r in enumerate(data.records) if i not in test_idx)
    test = tuple(r for i, r in enumerate(data.records) if i in test_idx)
    return (Dataset(train, f"{data.label}-train"), Dataset(test, f"{data.label}-test"))


# Synthetic data. Category effects are additive offsets on the target.
_CLASSES = ("alpha", "beta", "alpha+beta", "alpha/beta")
_CLASS_P = (0.30, 0.30, 0.25, 0.15)
_CLASS_EFFECT = {"alpha": 0.8, "beta": -0.5, "alpha+beta": 0.1, "alpha/beta": -0.4}
_FOLDS = ("beta-grasp", "ferredoxin", "ig-like", "rossmann", "sh3", "tim-barrel")
_FOLD_EFFECT = {"beta-grasp": 0.45, "ferredoxin": 0.2, "ig-like": -0.35,
                "rossmann": 0.1, "sh3": -0.2, "tim-barrel": -0.45}


def synthetic_target(l, beta_t, ln_ku, class_, fold, f_type, ph, temp):
    """Noise-free synthetic ln_kf.

    Smooth, mostly monotone combination of the other fields so that
    correlation-based feature ranking and a shallow regressor can both
    recover the signal:

        4.2 - 2.1*(l-170)/90 + 1.2*tanh(3*(beta_t-0.5)) + 0.65*(ln_ku+3.5)/2
            + class effect + fold effect +/- 0.7 (2S vs N2S)
            - 0.3*(ph-6.5)/3 - 0.2*(temp-25)/10
    """
    return (4.2
            - 2.1 * (l - 170.0) / 90.0
            + 1.2 * np.tanh(3.0 * (beta_t - 0.5))
            + 0.65 * (ln_ku + 3.5) / 2.0
            + _CLASS_EFFECT[class_]
            + _FOLD_EFFECT[fold]
            + (0.7 if f_type == "2S" else -0.7)
            - 0.3 * (ph - 6.5) / 3.0
            - 0.2 * (temp - 25.0) / 10.0)


def synthesize_dataset(n: int, seed: int) -> Dataset:
    """Generate n schema-valid records with ln_kf = synthetic_target + N(0, 0.25) noise."""
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        l = int(rng.integers(40, 301))
        lpdb = int(rng.integers(int(0.55 * l), l + 1))
        ph = float(rng.uniform(3.5, 9.5))
        temp = float(rng.uniform(5.0, 45.0))
        ln_ku = float(rng.normal(-3.5, 2.0))
        beta_t = float(rng.uniform(0.02, 0.98))
        class_ = str(rng.choice(_CLASSES, p=_CLASS_P))
        fold = str(rng.choice(_FOLDS))
        f_type = "2S" if rng.random() < 0.55 else "N2S"
        ln_kf = float(synthetic_target(l, beta_t, ln_ku, class_, fold, f_type, ph, temp)
                      + rng.normal(0.0, 0.25))
        records.append(ProteinRecord(
            psn=f"SYN{i:04d}", class_=class_, fold=fold, lpdb=lpdb, l=l, ph=ph,
            temp=temp, f_type=f_type, ln_ku=ln_ku, beta_t=beta_t, ln_kf=ln_kf,
        ).validate())
    return Dataset(tuple(records), "synthetic")
