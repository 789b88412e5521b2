"""Dataset ingestion, scaling, splitting and client partitioning.

Handles Edge-IIoTset-shaped flow CSVs through a declarative schema (label
column, dropped identifier columns, categorical vocabularies for stable
one-hot widths), min-max scaling into [-1, 1] to match the Tanh output
head, normal/attack and train/validation splits, class-conditional
Dirichlet partitioning across clients, and a seeded synthetic generator
used as the desk-scale stand-in for the real dataset.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, SchemaError, ShapeError
from .numerics import derive_rng

NORMAL_LABEL = "Normal"
ATTACK_LABEL = "attack"  # category used by the synthetic generator


@dataclass(frozen=True)
class FlowRecord:
    """One network flow: encoded feature vector plus its label string.

    The label is NORMAL_LABEL for benign flows and the attack category
    name otherwise, so the category is empty exactly when the flow is
    normal.
    """

    features: np.ndarray
    label: str

    @property
    def is_attack(self) -> bool:
        return self.label != NORMAL_LABEL

    @property
    def category(self) -> str:
        return "" if self.label == NORMAL_LABEL else self.label


@dataclass
class LabeledDataset:
    """Columnar dataset: feature matrix plus per-row label strings."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ShapeError(
                f"features must be a 2-d matrix, got {self.features.ndim}-d")
        self.labels = np.asarray(self.labels, dtype=str)
        if self.labels.shape != (self.features.shape[0],):
            raise ShapeError(
                f"{self.labels.shape[0]} labels for "
                f"{self.features.shape[0]} rows")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def is_attack(self) -> np.ndarray:
        return self.labels != NORMAL_LABEL

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=int)
        return LabeledDataset(self.features[idx], self.labels[idx])

    def record(self, i: int) -> FlowRecord:
        return FlowRecord(self.features[i], str(self.labels[i]))


@dataclass(frozen=True)
class ScalerParams:
    """Per-feature min/max fitted on training normals only."""

    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "minimum", np.asarray(self.minimum, dtype=np.float64))
        object.__setattr__(self, "maximum", np.asarray(self.maximum, dtype=np.float64))
        if self.minimum.shape != self.maximum.shape:
            raise ShapeError("scaler min/max widths differ")
        if np.any(self.minimum > self.maximum):
            raise DataError("scaler has min > max in some column")


def fit_scaler(train: np.ndarray) -> ScalerParams:
    train = np.asarray(train, dtype=np.float64)
    if train.ndim != 2 or train.shape[0] == 0:
        raise DataError("scaler must be fit on a non-empty matrix")
    return ScalerParams(train.min(axis=0), train.max(axis=0))


def apply_scaler(scaler: ScalerParams, data: np.ndarray) -> np.ndarray:
    """Affine map sending [min, max] to [-1, 1], clamped; constant columns
    map to 0."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data[None, :]
    if data.shape[1] != scaler.minimum.shape[0]:
        raise ShapeError(
            f"data width {data.shape[1]} does not match scaler width "
            f"{scaler.minimum.shape[0]}")
    span = scaler.maximum - scaler.minimum
    safe_span = np.where(span > 0.0, span, 1.0)
    scaled = 2.0 * (data - scaler.minimum) / safe_span - 1.0
    scaled = np.where(span > 0.0, scaled, 0.0)
    return np.clip(scaled, -1.0, 1.0)


def split_by_label(ds: LabeledDataset) -> tuple[LabeledDataset, LabeledDataset]:
    """Partition into (normal, attack) preserving row order."""
    attack_mask = ds.is_attack
    normal_idx = np.flatnonzero(~attack_mask)
    attack_idx = np.flatnonzero(attack_mask)
    return ds.subset(normal_idx), ds.subset(attack_idx)


def train_val_split(ds: LabeledDataset, fraction: float = 0.8,
                    seed: int = 0) -> tuple[LabeledDataset, LabeledDataset]:
    """Seeded shuffle then split; the train part gets floor(fraction * n)."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"split fraction must be in (0, 1), got {fraction}")
    if len(ds) == 0:
        raise DataError("cannot split an empty dataset")
    order = derive_rng(seed).permutation(len(ds))
    n_train = int(math.floor(fraction * len(ds)))
    return ds.subset(order[:n_train]), ds.subset(order[n_train:])


@dataclass(frozen=True)
class PartitionPlan:
    """Per-client record-index assignment: an exact set partition."""

    assignments: tuple[tuple[int, ...], ...]
    alpha: float
    seed: int

    def __post_init__(self):
        object.__setattr__(
            self, "assignments",
            tuple(tuple(int(i) for i in a) for a in self.assignments))

    @property
    def n_clients(self) -> int:
        return len(self.assignments)

    def validate(self, n_records: int) -> None:
        seen = [i for a in self.assignments for i in a]
        if len(seen) != n_records or set(seen) != set(range(n_records)):
            raise DataError(
                f"partition is not exact: {len(seen)} assigned indices "
                f"for {n_records} records")
        if n_records >= self.n_clients and any(not a for a in self.assignments):
            raise DataError("partition left a client empty")

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "seed": self.seed,
            "assignments": [list(a) for a in self.assignments],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PartitionPlan":
        return cls(tuple(tuple(a) for a in d["assignments"]),
                   float(d["alpha"]), int(d["seed"]))


def _largest_remainder(proportions: np.ndarray, total: int) -> np.ndarray:
    """Integer counts summing to `total`; ties broken by lowest client id."""
    scaled = proportions * total
    base = np.floor(scaled).astype(int)
    frac = scaled - base
    missing = total - int(base.sum())
    # sort by descending fraction, then ascending client id
    order = np.lexsort((np.arange(len(base)), -frac))
    base[order[:missing]] += 1
    return base


def dirichlet_partition(ds: LabeledDataset, n_clients: int, alpha: float,
                        seed: int) -> PartitionPlan:
    """Label-skew partition: per class, client shares drawn from
    Dirichlet(alpha * 1).

    Low alpha concentrates each class on few clients; high alpha approaches
    a uniform split. The result is always an exact partition, and no client
    is left empty unless there are fewer records than clients (a record is
    moved from the largest client when the draw leaves one empty).
    """
    if n_clients < 1:
        raise ConfigError(f"need at least one client, got {n_clients}")
    if alpha <= 0.0:
        raise ConfigError(f"alpha must be positive, got {alpha}")
    if n_clients > len(ds):
        raise ConfigError(
            f"{n_clients} clients cannot split {len(ds)} records")
    rng = derive_rng(seed)
    buckets: list[list[int]] = [[] for _ in range(n_clients)]
    for label in np.unique(ds.labels):
        idx = np.flatnonzero(ds.labels == label)
        rng.shuffle(idx)
        proportions = rng.dirichlet(np.full(n_clients, alpha))
        counts = _largest_remainder(proportions, len(idx))
        pos = 0
        for k in range(n_clients):
            buckets[k].extend(int(i) for i in idx[pos:pos + counts[k]])
            pos += counts[k]
    # repair: a skewed draw may leave clients empty
    for k in range(n_clients):
        while not buckets[k]:
            donor = max(range(n_clients), key=lambda j: len(buckets[j]))
            buckets[k].append(buckets[donor].pop())
    plan = PartitionPlan(tuple(tuple(sorted(b)) for b in buckets),
                         float(alpha), int(seed))
    plan.validate(len(ds))
    return plan


@dataclass(frozen=True)
class SynthSpec:
    """Synthetic flow generator settings.

    Mimics the texture of real flow captures: most normal rows sit on a
    handful of near-duplicate prototypes with tiny jitter, the rest follow
    a low-rank factor model with a wide lognormal per-row noise scale, and
    a rare slice is near-saturated junk. That skew is what keeps the
    mean+std threshold far above the bulk of the reconstruction errors.
    Attack rows come from the same generator displaced along a random
    per-row coordinate subset before squashing into (-1, 1).
    """

    n_normal: int
    n_attack: int
    dim: int = 66
    displacement: float = 2.0
    seed: int = 42

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError(f"dim must be >= 1, got {self.dim}")
        if self.n_normal < 0 or self.n_attack < 0:
            raise ConfigError("record counts cannot be negative")


_SYNTH_RANK = 2
_SYNTH_PROTOTYPES = 6
_SYNTH_PROTOTYPE_FRACTION = 0.9
_SYNTH_PROTOTYPE_NOISE = 0.01
_SYNTH_NOISE = 0.1
_SYNTH_NOISE_SIGMA = 1.25
_SYNTH_OUTLIER_FRACTION = 0.005
_SYNTH_OUTLIER_BOOST = 25.0
_SYNTH_SQUASH = 3.0


def _synth_raw(rng: np.random.Generator, n: int, mixing: np.ndarray,
               prototypes: np.ndarray) -> np.ndarray:
    rank, dim = mixing.shape
    rows = rng.standard_normal((n, rank)) @ mixing
    on_prototype = rng.random(n) < _SYNTH_PROTOTYPE_FRACTION
    pick = rng.integers(0, prototypes.shape[0], size=n)
    rows[on_prototype] = prototypes[pick[on_prototype]]
    scale = np.exp(_SYNTH_NOISE_SIGMA * rng.standard_normal(n))
    saturated = rng.random(n) < _SYNTH_OUTLIER_FRACTION
    scale = np.where(saturated, scale * _SYNTH_OUTLIER_BOOST, scale)
    level = np.where(on_prototype & ~saturated, _SYNTH_PROTOTYPE_NOISE,
                     _SYNTH_NOISE * scale)
    return rows + rng.standard_normal((n, dim)) * level[:, None]


def synth_generate(spec: SynthSpec) -> LabeledDataset:
    """Deterministic synthetic dataset; one seed, one byte-exact result."""
    rng = derive_rng(spec.seed)
    mixing = rng.standard_normal((_SYNTH_RANK, spec.dim)) / math.sqrt(_SYNTH_RANK)
    prototypes = rng.standard_normal((_SYNTH_PROTOTYPES, _SYNTH_RANK)) @ mixing
    normal = _synth_raw(rng, spec.n_normal, mixing, prototypes)
    attack = _synth_raw(rng, spec.n_attack, mixing, prototypes)
    if spec.n_attack > 0:
        n_moved = max(1, spec.dim // 4)
        # per-row random coordinate subset and signs
        coords = np.argsort(rng.random((spec.n_attack, spec.dim)), axis=1)
        moved = np.zeros((spec.n_attack, spec.dim), dtype=bool)
        np.put_along_axis(moved, coords[:, :n_moved], True, axis=1)
        signs = np.where(rng.random((spec.n_attack, spec.dim)) < 0.5, -1.0, 1.0)
        attack = attack + spec.displacement * signs * moved
    features = np.tanh(np.vstack([normal, attack]) / _SYNTH_SQUASH)
    labels = np.array([NORMAL_LABEL] * spec.n_normal
                      + [ATTACK_LABEL] * spec.n_attack)
    return LabeledDataset(features, labels)


def save_dataset(ds: LabeledDataset, path: str | Path) -> None:
    """Write the canonical columnar CSV: f0..f{d-1}, label."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(ds.n_features)] + ["label"])
        for row, label in zip(ds.features, ds.labels):
            writer.writerow([repr(float(v)) for v in row] + [str(label)])


def load_dataset(path: str | Path) -> LabeledDataset:
    """Read the canonical columnar CSV written by save_dataset."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(row for row in fh if not row.startswith("#"))
        header = next(reader, None)
        if header is None or header[-1] != "label":
            raise SchemaError(f"{path} is not a canonical dataset CSV")
        width = len(header) - 1
        feats: list[list[float]] = []
        labels: list[str] = []
        for row in reader:
            if len(row) != width + 1:
                raise SchemaError(
                    f"{path}: row has {len(row)} cells, expected {width + 1}")
            feats.append([float(v) for v in row[:width]])
            labels.append(row[width])
    features = np.array(feats, dtype=np.float64).reshape(len(feats), width)
    return LabeledDataset(features, np.array(labels, dtype=str))


@dataclass(frozen=True)
class SchemaConfig:
    """Declares how a raw flow CSV maps to a fixed-width feature matrix."""

    label_column: str
    normal_value: str = NORMAL_LABEL
    drop_columns: tuple[str, ...] = ()
    categorical: dict[str, tuple[str, ...]] = field(default_factory=dict)
    expected_width: int | None = None

    @classmethod
    def from_file(cls, path: str | Path) -> "SchemaConfig":
        with Path(path).open() as fh:
            raw = json.load(fh)
        allowed = {"label_column", "normal_value", "drop_columns",
                   "categorical", "expected_width"}
        unknown = set(raw) - allowed
        if unknown:
            raise SchemaError(f"unknown schema keys: {sorted(unknown)}")
        if "label_column" not in raw:
            raise SchemaError("schema must declare label_column")
        return cls(
            label_column=str(raw["label_column"]),
            normal_value=str(raw.get("normal_value", NORMAL_LABEL)),
            drop_columns=tuple(raw.get("drop_columns", ())),
            categorical={k: tuple(v) for k, v in raw.get("categorical", {}).items()},
            expected_width=raw.get("expected_width"),
        )


def load_csv(path: str | Path, schema: SchemaConfig
             ) -> tuple[LabeledDataset, int]:
    """Ingest a raw flow CSV through the schema.

    Returns the dataset and the number of rows skipped because a numeric
    cell failed to parse. Categorical values outside the declared
    vocabulary one-hot to an all-zero block, keeping the width stable.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path} has no header row")
        if schema.label_column not in header:
            raise SchemaError(
                f"label column {schema.label_column!r} not found in {path}")
        for col in (*schema.drop_columns, *schema.categorical):
            if col not in header:
                raise SchemaError(f"schema column {col!r} not found in {path}")
        col_index = {name: i for i, name in enumerate(header)}
        dropped = set(schema.drop_columns) | {schema.label_column}
        feature_cols = [c for c in header if c not in dropped]
        width = sum(len(schema.categorical[c]) if c in schema.categorical else 1
                    for c in feature_cols)
        if schema.expected_width is not None and width != schema.expected_width:
            raise SchemaError(
                f"schema produces width {width}, expected "
                f"{schema.expected_width}")
        label_i = col_index[schema.label_column]
        feats: list[list[float]] = []
        labels: list[str] = []
        skipped = 0
        for row in reader:
            if not row:
                continue
            encoded: list[float] = []
            try:
                for col in feature_cols:
                    cell = row[col_index[col]]
                    if col in schema.categorical:
                        vocab = schema.categorical[col]
                        encoded.extend(1.0 if cell == v else 0.0 for v in vocab)
                    else:
                        encoded.append(float(cell))
            except (ValueError, IndexError):
                skipped += 1
                continue
            raw_label = row[label_i]
            labels.append(NORMAL_LABEL if raw_label == schema.normal_value
                          else raw_label)
            feats.append(encoded)
    features = np.array(feats, dtype=np.float64).reshape(len(feats), width)
    return LabeledDataset(features, np.array(labels, dtype=str)), skipped
