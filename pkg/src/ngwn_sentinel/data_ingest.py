"""Flow-record loading, synthetic traffic and byte-image conversion.

Flows follow the CICIDS-2017 CSV convention: one header row, one column per
feature and a ``Label`` column holding ``BENIGN`` or an attack name.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

LABEL_COLUMN = "Label"
ID_COLUMN = "Flow ID"
TIME_COLUMN = "Timestamp"
BENIGN = "BENIGN"

FAMILIES = ("DoS", "DDoS", "Web", "Infiltration", "Scan", "Bot", "Heartbleed")

# raw CICIDS-2017 label prefixes -> canonical family
_FAMILY_PREFIXES = (
    ("ddos", "DDoS"),
    ("dos", "DoS"),
    ("web attack", "Web"),
    ("web", "Web"),
    ("infiltration", "Infiltration"),
    ("portscan", "Scan"),
    ("scan", "Scan"),
    ("bot", "Bot"),
    ("heartbleed", "Heartbleed"),
)


class IngestError(Exception):
    pass


class MissingFile(IngestError):
    pass


class SchemaMismatch(IngestError):
    pass


class EmptyDataset(IngestError):
    pass


class InvalidConfig(IngestError, ValueError):
    pass


class TooSmall(IngestError, ValueError):
    pass


class LabelKind(enum.Enum):
    BENIGN = "Benign"
    ATTACK = "Attack"


class Split(enum.Enum):
    TRAIN = "Train"
    TEST = "Test"
    UNSPLIT = "Unsplit"


@dataclass(frozen=True)
class ClassLabel:
    kind: LabelKind
    family: str | None = None

    def __post_init__(self):
        if self.family is not None and self.kind is not LabelKind.ATTACK:
            raise ValueError("family is only meaningful for attack labels")

    @property
    def is_attack(self) -> bool:
        return self.kind is LabelKind.ATTACK

    @classmethod
    def parse(cls, raw: str) -> "ClassLabel":
        text = str(raw).strip()
        if text.upper() == BENIGN:
            return cls(LabelKind.BENIGN)
        if text.upper() == "ATTACK" or not text:
            return cls(LabelKind.ATTACK)
        return cls(LabelKind.ATTACK, canonical_family(text))

    def to_csv(self) -> str:
        if self.kind is LabelKind.BENIGN:
            return BENIGN
        return self.family if self.family is not None else "ATTACK"


def canonical_family(raw: str) -> str:
    low = raw.strip().lower()
    for canon in FAMILIES:
        if low == canon.lower():
            return canon
    for prefix, canon in _FAMILY_PREFIXES:
        if low.startswith(prefix):
            return canon
    return raw.strip()


@dataclass(frozen=True)
class FeatureSchema:
    names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        keys = [_norm(n) for n in self.names]
        if len(set(keys)) != len(keys):
            raise ValueError("feature names must be unique")
        if not keys:
            raise ValueError("schema must name at least one feature")

    @property
    def length(self) -> int:
        return len(self.names)

    def __len__(self) -> int:
        return len(self.names)

    @classmethod
    def from_file(cls, path: str | Path) -> "FeatureSchema":
        path = Path(path)
        if not path.exists():
            raise MissingFile(f"schema file not found: {path}")
        lines = [ln.strip() for ln in path.read_text(encoding="utf-8").splitlines()]
        return cls(tuple(ln for ln in lines if ln))

    def to_file(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.names) + "\n", encoding="utf-8")


def default_schema() -> FeatureSchema:
    """The bundled 46-feature forward/backward flow schema."""
    text = resources.files("ngwn_sentinel").joinpath("data/cicids2017_46.txt").read_text("utf-8")
    return FeatureSchema(tuple(ln.strip() for ln in text.splitlines() if ln.strip()))


@dataclass(frozen=True)
class FlowRecord:
    flow_id: str
    features: tuple[float, ...]
    label: ClassLabel
    timestamp: int = 0


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented flow dataset.

    ``X`` is (n, schema.length) float64, ``y`` is 1 for attack rows, ``family``
    holds the attack family (empty string for benign or unnamed attacks).
    """

    X: np.ndarray
    y: np.ndarray
    family: np.ndarray
    schema: FeatureSchema
    flow_ids: np.ndarray
    timestamps: np.ndarray
    split: Split = Split.UNSPLIT
    dropped_count: int = 0

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.schema.length:
            raise SchemaMismatch(
                f"feature matrix has shape {X.shape}, schema expects {self.schema.length} columns"
            )
        n = X.shape[0]
        y = np.asarray(self.y, dtype=np.int8)
        fam = np.asarray(self.family, dtype=object)
        ids = np.asarray(self.flow_ids, dtype=object)
        ts = np.asarray(self.timestamps, dtype=np.int64)
        for name, arr in (("y", y), ("family", fam), ("flow_ids", ids), ("timestamps", ts)):
            if arr.shape != (n,):
                raise ValueError(f"{name} has shape {arr.shape}, expected ({n},)")
        if np.any((y == 0) & (fam != "")):
            raise ValueError("benign rows cannot carry an attack family")
        if not np.all(np.isfinite(X)):
            raise ValueError("feature values must be finite")
        for arr in (X, y, fam, ids, ts):
            arr.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "flow_ids", ids)
        object.__setattr__(self, "timestamps", ts)

    def __len__(self) -> int:
        return self.X.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.schema == other.schema
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.y, other.y)
            and list(self.family) == list(other.family)
            and list(self.flow_ids) == list(other.flow_ids)
            and np.array_equal(self.timestamps, other.timestamps)
        )

    @property
    def n_benign(self) -> int:
        return int(np.sum(self.y == 0))

    @property
    def n_attack(self) -> int:
        return int(np.sum(self.y == 1))

    def label(self, i: int) -> ClassLabel:
        if self.y[i] == 0:
            return ClassLabel(LabelKind.BENIGN)
        return ClassLabel(LabelKind.ATTACK, self.family[i] or None)

    def record(self, i: int) -> FlowRecord:
        return FlowRecord(
            flow_id=str(self.flow_ids[i]),
            features=tuple(float(v) for v in self.X[i]),
            label=self.label(i),
            timestamp=int(self.timestamps[i]),
        )

    @property
    def records(self) -> list[FlowRecord]:
        return [self.record(i) for i in range(len(self))]

    def subset(self, idx, split: Split | None = None) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            X=self.X[idx], y=self.y[idx], family=self.family[idx], schema=self.schema,
            flow_ids=self.flow_ids[idx], timestamps=self.timestamps[idx],
            split=self.split if split is None else split,
        )

    def where_family(self, families: Iterable[str], include_benign: bool = True) -> "Dataset":
        fams = set(families)
        mask = np.array([f in fams for f in self.family], dtype=bool)
        if include_benign:
            mask |= self.y == 0
        return self.subset(np.flatnonzero(mask))

    def without_family(self, families: Iterable[str]) -> "Dataset":
        fams = set(families)
        mask = np.array([f not in fams for f in self.family], dtype=bool)
        return self.subset(np.flatnonzero(mask))

    def train_test_split(self, n_test: int, seed: int = 0) -> tuple["Dataset", "Dataset"]:
        if not 0 < n_test < len(self):
            raise ValueError("n_test must lie strictly between 0 and the dataset size")
        order = np.random.default_rng(seed).permutation(len(self))
        test_idx = np.sort(order[:n_test])
        train_idx = np.sort(order[n_test:])
        return self.subset(train_idx, Split.TRAIN), self.subset(test_idx, Split.TEST)

    def with_rows(self, X_extra: np.ndarray, families: Sequence[str], prefix: str = "extra") -> "Dataset":
        """Append attack rows (used when honeypot signatures enter training)."""
        X_extra = np.atleast_2d(np.asarray(X_extra, dtype=np.float64))
        k = X_extra.shape[0]
        if k == 0:
            return self
        return Dataset(
            X=np.vstack([self.X, X_extra]),
            y=np.concatenate([self.y, np.ones(k, dtype=np.int8)]),
            family=np.concatenate([self.family, np.asarray(list(families), dtype=object)]),
            schema=self.schema,
            flow_ids=np.concatenate([self.flow_ids, np.asarray([f"{prefix}-{i}" for i in range(k)], dtype=object)]),
            timestamps=np.concatenate([self.timestamps, np.zeros(k, dtype=np.int64)]),
            split=self.split,
        )


def _norm(name: str) -> str:
    return name.strip().lower()


def load_flow_csv(path: str | Path, schema: FeatureSchema | None = None, *,
                  allow_extra_columns: bool = False) -> Dataset:
    """Read a CICIDS-style CSV into a Dataset.

    Rows with missing, non-numeric or non-finite feature cells are dropped and
    counted in ``dropped_count``.
    """
    path = Path(path)
    schema = schema or default_schema()
    if not path.is_file():
        raise MissingFile(f"dataset not found: {path}")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True,
                        encoding="utf-8")
    columns = {_norm(c): c for c in frame.columns}
    if len(columns) != len(frame.columns):
        raise SchemaMismatch(f"{path}: duplicate column names in header")
    if _norm(LABEL_COLUMN) not in columns:
        raise SchemaMismatch(f"{path}: no '{LABEL_COLUMN}' column")
    missing = [n for n in schema.names if _norm(n) not in columns]
    if missing:
        raise SchemaMismatch(f"{path}: header lacks schema columns {missing[:5]}")
    known = {_norm(n) for n in schema.names} | {_norm(LABEL_COLUMN), _norm(ID_COLUMN), _norm(TIME_COLUMN)}
    extra = [c for k, c in columns.items() if k not in known]
    if extra and not allow_extra_columns:
        raise SchemaMismatch(f"{path}: columns not in schema {extra[:5]}")

    feats = frame[[columns[_norm(n)] for n in schema.names]]
    numeric = feats.apply(lambda col: pd.to_numeric(col.str.strip(), errors="coerce"))
    X = numeric.to_numpy(dtype=np.float64)
    labels = frame[columns[_norm(LABEL_COLUMN)]].str.strip()
    ok = np.all(np.isfinite(X), axis=1) & (labels != "").to_numpy()
    # pandas' fast parser can be off by an ulp; re-parse valid cells exactly
    if ok.any():
        X[ok] = np.char.strip(feats.to_numpy(dtype=str)[ok]).astype(np.float64)
    n_rows = len(frame)
    if _norm(ID_COLUMN) in columns:
        ids = frame[columns[_norm(ID_COLUMN)]].to_numpy(dtype=object)
    else:
        ids = np.asarray([f"row-{i}" for i in range(n_rows)], dtype=object)
    if _norm(TIME_COLUMN) in columns:
        ts_raw = pd.to_numeric(frame[columns[_norm(TIME_COLUMN)]], errors="coerce")
        ok &= ts_raw.notna().to_numpy()
        ts = ts_raw.fillna(0).to_numpy(dtype=np.int64)
    else:
        ts = np.arange(n_rows, dtype=np.int64)

    keep = np.flatnonzero(ok)
    if keep.size == 0:
        raise EmptyDataset(f"{path}: no valid data rows ({n_rows} rows read)")
    parsed = [ClassLabel.parse(v) for v in labels.to_numpy()[keep]]
    return Dataset(
        X=X[keep],
        y=np.array([1 if lab.is_attack else 0 for lab in parsed], dtype=np.int8),
        family=np.array([lab.family or "" for lab in parsed], dtype=object),
        schema=schema,
        flow_ids=ids[keep],
        timestamps=ts[keep],
        dropped_count=int(n_rows - keep.size),
    )


def write_flow_csv(dataset: Dataset, path: str | Path) -> None:
    frame = pd.DataFrame(dataset.X, columns=list(dataset.schema.names))
    frame.insert(0, TIME_COLUMN, dataset.timestamps)
    frame.insert(0, ID_COLUMN, dataset.flow_ids)
    frame[LABEL_COLUMN] = [dataset.label(i).to_csv() for i in range(len(dataset))]
    # repr-exact floats so reloading is lossless
    frame.to_csv(path, index=False, float_format="%.17g", encoding="utf-8")


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic traffic settings.

    Every feature is ``loc + scale * z``. Benign ``z`` is N(0, noise²); an attack
    family adds ``shift`` to ``z`` on its own informative features.
    """

    benign: int = 1000
    attacks: Mapping[str, int] = field(default_factory=lambda: {"DoS": 100, "DDoS": 100})
    shift: float = 2.0
    noise: float = 1.0
    n_informative: int = 10
    features_per_family: int = 4
    family_features: Mapping[str, Sequence[int]] | None = None
    schema: FeatureSchema = field(default_factory=default_schema)
    mean_interarrival_us: int = 1000

    def validate(self) -> None:
        if self.benign < 0 or any(c < 0 for c in self.attacks.values()):
            raise InvalidConfig("counts must be non-negative")
        if self.benign + sum(self.attacks.values()) == 0:
            raise InvalidConfig("config produces zero records")
        if self.noise < 0 or not math.isfinite(self.shift):
            raise InvalidConfig("noise must be >= 0 and shift finite")
        if not 0 <= self.n_informative <= self.schema.length:
            raise InvalidConfig("n_informative outside schema")
        for fam in self.attacks:
            if self.family_features is None or fam not in self.family_features:
                if self.n_informative == 0:
                    raise InvalidConfig(f"family {fam} has no informative features")
                if fam not in FAMILIES:
                    raise InvalidConfig(f"unknown family {fam}; pass family_features")


def informative_indices(n_features: int, n_informative: int) -> np.ndarray:
    """Informative positions, evenly spread across the schema."""
    if n_informative == 0:
        return np.zeros(0, dtype=int)
    return np.unique(np.round(np.linspace(0, n_features - 1, n_informative)).astype(int))


def feature_loc_scale(n_features: int) -> tuple[np.ndarray, np.ndarray]:
    k = np.arange(n_features, dtype=np.float64)
    return 50.0 + 10.0 * k, 1.0 + (k % 5)


def family_feature_map(config: SynthConfig) -> dict[str, tuple[int, ...]]:
    """Features shifted by each family.

    Families take consecutive disjoint blocks of informative features in
    FAMILIES order, wrapping once the informative set is exhausted.
    """
    inf = informative_indices(config.schema.length, config.n_informative)
    out: dict[str, tuple[int, ...]] = {}
    per = config.features_per_family
    for i, fam in enumerate(FAMILIES):
        if len(inf):
            out[fam] = tuple(int(inf[(i * per + j) % len(inf)]) for j in range(per))
    if config.family_features:
        out.update({k: tuple(int(i) for i in v) for k, v in config.family_features.items()})
    return out


def family_mean(config: SynthConfig, family: str | None) -> np.ndarray:
    """Expected feature vector for a family (None = benign)."""
    loc, scale = feature_loc_scale(config.schema.length)
    z = np.zeros(config.schema.length)
    if family is not None:
        z[list(family_feature_map(config)[family])] += config.shift
    return loc + scale * z


def sample_family(config: SynthConfig, family: str | None, n: int, rng: np.random.Generator) -> np.ndarray:
    d = config.schema.length
    loc, scale = feature_loc_scale(d)
    z = rng.normal(0.0, config.noise, size=(n, d))
    if family is not None:
        z[:, list(family_feature_map(config)[family])] += config.shift
    return loc + scale * z


def synth_traffic(config: SynthConfig, seed: int) -> Dataset:
    config.validate()
    rng = np.random.default_rng(seed)
    blocks = [sample_family(config, None, config.benign, rng)]
    fams = [""] * config.benign
    for fam in sorted(config.attacks):
        count = config.attacks[fam]
        blocks.append(sample_family(config, fam, count, rng))
        fams += [fam] * count
    X = np.vstack(blocks)
    fam_arr = np.asarray(fams, dtype=object)
    order = rng.permutation(X.shape[0])
    gaps = rng.integers(1, 2 * config.mean_interarrival_us, size=X.shape[0])
    fam_arr = fam_arr[order]
    return Dataset(
        X=X[order],
        y=(fam_arr != "").astype(np.int8),
        family=fam_arr,
        schema=config.schema,
        flow_ids=np.asarray([f"syn{seed}-{i}" for i in range(X.shape[0])], dtype=object),
        timestamps=np.cumsum(gaps).astype(np.int64),
    )


def vectorize(record: FlowRecord) -> np.ndarray:
    return np.asarray(record.features, dtype=np.float64)


@dataclass(frozen=True)
class ByteImage:
    width: int
    height: int
    pixels: bytes

    def __post_init__(self):
        if len(self.pixels) != self.width * self.height:
            raise ValueError("pixel count must equal width * height")

    def as_array(self) -> np.ndarray:
        """Row-major (height, width) float array in [0, 255]."""
        return np.frombuffer(self.pixels, dtype=np.uint8).reshape(self.height, self.width).astype(np.float64)


@dataclass(frozen=True)
class MinMaxScaler:
    """Per-feature min/max fitted on training data only."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "MinMaxScaler":
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return cls(X.min(axis=0), X.max(axis=0))

    def to_pixels(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        span = self.hi - self.lo
        safe = np.where(span > 0, span, 1.0)
        scaled = np.where(span > 0, (X - self.lo) / safe * 255.0, 0.0)
        # round half up, clip out-of-range test values
        return np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)


def rescale_to_image(fv, U: int = 8, V: int = 8, scaler: MinMaxScaler | None = None) -> ByteImage:
    fv = np.asarray(fv, dtype=np.float64).ravel()
    if U * V < fv.size:
        raise TooSmall(f"{U}x{V} image holds {U * V} pixels, vector has {fv.size}")
    if scaler is None:
        # no fitted dataset: scale against the vector's own range
        scaler = MinMaxScaler(np.full(fv.size, fv.min()), np.full(fv.size, fv.max()))
    pix = np.zeros(U * V, dtype=np.uint8)
    pix[: fv.size] = scaler.to_pixels(fv)
    return ByteImage(U, V, pix.tobytes())


def images_from_matrix(X: np.ndarray, scaler: MinMaxScaler, U: int = 8, V: int = 8) -> np.ndarray:
    """Batch version of rescale_to_image: (n, V, U) float64 pixel array."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if U * V < X.shape[1]:
        raise TooSmall(f"{U}x{V} image holds {U * V} pixels, vector has {X.shape[1]}")
    out = np.zeros((X.shape[0], U * V), dtype=np.float64)
    out[:, : X.shape[1]] = scaler.to_pixels(X)
    return out.reshape(-1, V, U)
