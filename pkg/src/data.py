"""
Data - Loaders, writers, synthetic generators and preprocessing

CSV and LIBSVM text formats, the Abalone binary task, the two-normals
generator, train-only standardization followed by norm clipping, and seeded
train/test splits.
"""
import csv
import io
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from sklearn.datasets import load_svmlight_file
from sklearn.preprocessing import StandardScaler

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from config.settings import ABALONE_BINARIZE, DEFAULT_NORM_BOUND, SYNTHETIC_DEFAULTS
from src.errors import ArgumentError, ConfigurationError, ParseError, SchemaError
from src.model import Dataset, clip_dataset

logger = logging.getLogger(__name__)

ABALONE_SEXES = ("F", "I", "M")


def _binary_labels(raw: np.ndarray) -> np.ndarray:
    """Map a two-valued label column onto {−1, +1} (smaller value → −1)"""
    values = np.unique(raw)
    if set(values.tolist()) <= {-1.0, 1.0}:
        return raw.astype(float)
    if values.shape[0] != 2:
        raise SchemaError(f"labels must be binary, found {values.shape[0]} distinct values")
    return np.where(raw == values[1], 1.0, -1.0)


def _parse_float(token: str, line_number: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise ParseError(f"not a number: {token!r}", line_number) from None


def load_csv(path: str, label_column: Optional[int] = -1, has_header: bool = False) -> Dataset:
    """
    Load a numeric CSV file

    Args:
        path: UTF-8, comma-separated file
        label_column: index of the binary label column (negative counts from the end);
            None loads an unlabeled dataset
        has_header: skip the first line

    Returns:
        Dataset with labels in {−1, +1} and the remaining columns as features, row order kept
    """
    rows: List[List[float]] = []
    width = None
    with open(path, newline="", encoding="utf-8") as handle:
        for line_number, record in enumerate(csv.reader(handle), start=1):
            if has_header and line_number == 1:
                continue
            if not record or all(not cell.strip() for cell in record):
                continue
            if width is None:
                width = len(record)
            elif len(record) != width:
                raise ParseError(f"expected {width} fields, found {len(record)}", line_number)
            rows.append([_parse_float(cell.strip(), line_number) for cell in record])
    if not rows:
        return Dataset(np.empty((0, 0 if width is None else width - (label_column is not None))))
    table = np.array(rows)
    if label_column is None:
        return Dataset(table)
    column = label_column % table.shape[1]
    labels = _binary_labels(table[:, column])
    features = np.delete(table, column, axis=1)
    logger.info("Loaded %d rows with %d features from %s", features.shape[0], features.shape[1], path)
    return Dataset(features, labels)


def _first_bad_libsvm_line(path: str) -> int:
    with open(path, "rb") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.split(b"#", 1)[0].strip():
                continue
            try:
                load_svmlight_file(io.BytesIO(line), zero_based=False)
            except ValueError:
                return line_number
    return 0


def load_libsvm(path: str, dim: Optional[int] = None) -> Dataset:
    """
    Load a LIBSVM sparse file ("label idx:value ...", 1-based increasing indices)

    Args:
        path: input file
        dim: feature dimension; defaults to the largest index seen

    Returns:
        Dense Dataset with labels in {−1, +1}
    """
    try:
        X, y = load_svmlight_file(path, zero_based=False)
    except ValueError as e:
        raise ParseError(str(e), _first_bad_libsvm_line(path)) from None
    features = X.toarray()
    if dim is not None:
        if dim < features.shape[1]:
            raise SchemaError(f"feature index {features.shape[1]} exceeds declared dimension {dim}")
        features = np.pad(features, ((0, 0), (0, dim - features.shape[1])))
    logger.info("Loaded %d rows with %d features from %s", features.shape[0], features.shape[1], path)
    if y.size == 0:
        return Dataset(features)
    return Dataset(features, _binary_labels(np.asarray(y, dtype=float)))


def write_csv(data: Dataset, path: str) -> None:
    """Features then label per row, floats written with full precision"""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        for i in range(data.size):
            row = [repr(float(x)) for x in data.features[i]]
            if data.labels is not None:
                row.append(repr(float(data.labels[i])))
            writer.writerow(row)


def write_libsvm(data: Dataset, path: str) -> None:
    if data.labels is None:
        raise ArgumentError("LIBSVM output needs labels")
    with open(path, "w", encoding="utf-8") as handle:
        for i in range(data.size):
            pairs = [f"{j + 1}:{float(x)!r}" for j, x in enumerate(data.features[i]) if x != 0]
            handle.write(" ".join([f"{int(data.labels[i]):+d}"] + pairs) + "\n")


def load_abalone(path: str) -> Dataset:
    """
    Abalone as a binary task: sex one-hot with the first category dropped plus
    the seven measurements (9 features), rings thresholded at the median
    """
    rows, rings = [], []
    with open(path, newline="", encoding="utf-8") as handle:
        for line_number, record in enumerate(csv.reader(handle), start=1):
            if not record:
                continue
            if len(record) != 9:
                raise ParseError(f"expected 9 fields, found {len(record)}", line_number)
            sex = record[0].strip().upper()
            if sex not in ABALONE_SEXES:
                raise ParseError(f"unknown sex code {record[0]!r}", line_number)
            onehot = [1.0 if sex == code else 0.0 for code in ABALONE_SEXES[1:]]
            rows.append(onehot + [_parse_float(cell, line_number) for cell in record[1:8]])
            rings.append(_parse_float(record[8], line_number))
    if ABALONE_BINARIZE != "median":
        raise ConfigurationError(f"unsupported Abalone binarization {ABALONE_BINARIZE!r}")
    rings_arr = np.array(rings)
    labels = np.where(rings_arr > np.median(rings_arr), 1.0, -1.0)
    logger.info("Loaded Abalone: %d rows, %d features", len(rows), 9)
    return Dataset(np.array(rows).reshape(-1, 9), labels)


def make_two_normals(n: int, d: int, separation: float, seed: int, R: float = DEFAULT_NORM_BOUND) -> Dataset:
    """
    n/2 points from N(+μ, I) labelled +1 and n/2 from N(−μ, I) labelled −1,
    with ‖2μ‖ = separation, then clipped to norm R
    """
    if n < 2 or n % 2:
        raise ConfigurationError(f"n must be a positive even number, got {n}")
    if d < 1:
        raise ConfigurationError(f"dimension must be >= 1, got {d}")
    if separation < 0:
        raise ConfigurationError("separation must be nonnegative")
    rng = np.random.default_rng(seed)
    mu = np.full(d, separation / (2 * math.sqrt(d)))
    half = n // 2
    features = np.vstack([rng.normal(size=(half, d)) + mu, rng.normal(size=(half, d)) - mu])
    labels = np.concatenate([np.ones(half), -np.ones(half)])
    order = rng.permutation(n)
    return clip_dataset(Dataset(features[order], labels[order]), R)


@dataclass(frozen=True, eq=False)
class Standardizer:
    """Column means and scales fitted on training data"""

    scaler: StandardScaler

    @classmethod
    def fit(cls, data: Dataset) -> "Standardizer":
        if data.size == 0:
            raise ArgumentError("cannot fit a standardizer on an empty dataset")
        scaler = StandardScaler().fit(data.features)
        constant = scaler.var_ == 0
        if np.any(constant):
            logger.warning("Zero-variance columns %s left centered with scale 1", np.flatnonzero(constant).tolist())
        return cls(scaler)

    @property
    def mean(self) -> np.ndarray:
        return self.scaler.mean_

    @property
    def scale(self) -> np.ndarray:
        return self.scaler.scale_

    def apply(self, data: Dataset) -> Dataset:
        if data.size == 0:
            return data
        return Dataset(self.scaler.transform(data.features), data.labels)


def standardize_and_clip(data: Dataset, R: float,
                         standardizer: Optional[Standardizer] = None) -> Tuple[Dataset, Standardizer]:
    """
    z-score every column, then clip rows to norm R

    Args:
        data: dataset to transform
        R: norm bound
        standardizer: fitted parameters to reuse (test data); fitted on data when omitted

    Returns:
        (clipped dataset, standardizer)
    """
    if not R > 0:
        raise ConfigurationError(f"clip radius must be positive, got {R}")
    standardizer = standardizer or Standardizer.fit(data)
    return clip_dataset(standardizer.apply(data), R), standardizer


def split_indices(N: int, fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    if not 0 < fraction < 1:
        raise ConfigurationError(f"train fraction must lie in (0, 1), got {fraction}")
    order = np.random.default_rng(seed).permutation(N)
    cut = int(math.ceil(fraction * N))
    return order[:cut], order[cut:]


def train_test_split(data: Dataset, fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    """Disjoint uniform split with ⌈fN⌉ training points"""
    train_idx, test_idx = split_indices(data.size, fraction, seed)
    return data.subset(train_idx), data.subset(test_idx)


@dataclass(frozen=True)
class DataSource:
    """
    Where a dataset comes from: "csv:PATH", "libsvm:PATH", "abalone:PATH" or
    "synthetic:two-normals" (optionally "synthetic:two-normals:n=500,d=3,separation=2")
    """

    kind: str
    arg: str
    label_column: int = -1
    has_header: bool = False
    params: Dict[str, float] = field(default_factory=dict)

    KINDS = ("csv", "libsvm", "abalone", "synthetic")

    @classmethod
    def parse(cls, text: str, label_column: int = -1, has_header: bool = False) -> "DataSource":
        kind, sep, rest = text.partition(":")
        if not sep or kind not in cls.KINDS or not rest:
            raise ConfigurationError(f"data source must look like KIND:ARG with KIND in {cls.KINDS}, got {text!r}")
        params: Dict[str, float] = {}
        if kind == "synthetic":
            name, _, spec = rest.partition(":")
            if name != "two-normals":
                raise ConfigurationError(f"unknown synthetic generator {name!r}")
            for item in filter(None, spec.split(",")):
                key, eq, value = item.partition("=")
                if not eq or key not in ("n", "d", "dim", "separation"):
                    raise ConfigurationError(f"bad generator parameter {item!r}")
                try:
                    params["dim" if key == "d" else key] = float(value)
                except ValueError:
                    raise ConfigurationError(f"bad generator parameter {item!r}") from None
            rest = name
        return cls(kind, rest, label_column, has_header, params)

    def check(self) -> None:
        """Validate without reading any data"""
        if self.kind != "synthetic" and not os.path.isfile(self.arg):
            raise ConfigurationError(f"data file not found: {self.arg}")

    def load(self, seed: int = 0) -> Dataset:
        if self.kind == "csv":
            return load_csv(self.arg, self.label_column, self.has_header)
        if self.kind == "libsvm":
            return load_libsvm(self.arg)
        if self.kind == "abalone":
            return load_abalone(self.arg)
        settings = {**SYNTHETIC_DEFAULTS, **self.params}
        return make_two_normals(int(settings["n"]), int(settings["dim"]), float(settings["separation"]), seed)

    def __str__(self) -> str:
        return f"{self.kind}:{self.arg}"
