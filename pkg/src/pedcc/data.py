"""Dataset loading (CSV, IDX), synthetic blobs and centroid persistence."""

from __future__ import annotations

import csv
import gzip
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .centroids import UNIT_NORM_TOL, CentroidSet
from .errors import (
    BadMagicError, CentroidInvariantError, ConfigError, CountMismatchError,
    FormatVersionMismatchError, LabelRangeError, ParseError, SchemaError, TruncatedError,
)
from .numeric import Rng, gaussian_matrix, row_norms

CENTROID_FORMAT_VERSION = 1


@dataclass
class LabeledDataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = "train"
    # per-feature (mean, std) when the inputs were standardised
    stats: Optional[tuple] = field(default=None, repr=False)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        if self.inputs.ndim != 2:
            raise ConfigError(f"inputs must be 2-D, got shape {self.inputs.shape}")
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.labels.shape[0] != self.inputs.shape[0]:
            raise ConfigError("inputs and labels differ in length")
        if self.split not in ("train", "eval"):
            raise ConfigError(f"split must be 'train' or 'eval', got {self.split!r}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise LabelRangeError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def dim(self):
        return self.inputs.shape[1]

    def subset(self, index, split=None) -> "LabeledDataset":
        return LabeledDataset(self.inputs[index], self.labels[index], self.num_classes,
                              split or self.split, self.stats)


def standardize(inputs, stats=None):
    """Zero-mean unit-variance columns; ``stats`` reuses another split's (mean, std)."""
    if stats is None:
        mean = inputs.mean(axis=0)
        std = inputs.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        stats = (mean, std)
    mean, std = stats
    return (inputs - mean) / std, stats


def load_csv(path, label_column="label", normalization="none", stats=None,
             num_classes=None, split="train") -> LabeledDataset:
    """Read a headed CSV; every column except ``label_column`` is a feature."""
    if normalization not in ("none", "per-feature-standardize"):
        raise ConfigError(f"unknown normalization {normalization!r}")
    rows, labels = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file (a header row is required)", line=1) from None
        header = [h.strip() for h in header]
        if label_column not in header:
            raise ParseError(f"no column named {label_column!r}", line=1)
        li = header.index(label_column)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} cells, got {len(row)}", line=lineno)
            cell = row[li].strip()
            try:
                label = int(cell)
            except ValueError:
                raise ParseError(f"label {cell!r} is not an integer", line=lineno) from None
            try:
                values = [float(v) for i, v in enumerate(row) if i != li]
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
            if not all(math.isfinite(v) for v in values):
                raise ParseError("non-finite feature value", line=lineno)
            rows.append(values)
            labels.append(label)

    inputs = np.array(rows, dtype=np.float64).reshape(len(rows), len(header) - 1)
    labels = np.array(labels, dtype=np.int64)
    if labels.size and labels.min() < 0:
        raise LabelRangeError("negative label")
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 0
    elif labels.size and labels.max() >= num_classes:
        raise LabelRangeError(f"label {int(labels.max())} >= num_classes={num_classes}")
    out_stats = None
    if normalization == "per-feature-standardize":
        inputs, out_stats = standardize(inputs, stats)
    return LabeledDataset(inputs, labels, num_classes, split, out_stats)


def write_csv(ds: LabeledDataset, path, label_column="label"):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(ds.dim)] + [label_column])
        for x, y in zip(ds.inputs, ds.labels):
            w.writerow([repr(float(v)) for v in x] + [int(y)])


def _open_maybe_gz(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def _read_idx(path, expect_dims):
    with _open_maybe_gz(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise TruncatedError(f"{path}: shorter than the IDX magic")
    zero0, zero1, dtype, ndim = raw[:4]
    if zero0 != 0 or zero1 != 0 or dtype != 0x08 or ndim != expect_dims:
        raise BadMagicError(f"{path}: magic {raw[:4].hex()} is not an unsigned-byte "
                            f"IDX file with {expect_dims} dimension(s)")
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise TruncatedError(f"{path}: header truncated")
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    size = int(np.prod(dims))
    if len(raw) - header_len < size:
        raise TruncatedError(f"{path}: expected {size} payload bytes, found {len(raw) - header_len}")
    payload = np.frombuffer(raw, dtype=np.uint8, count=size, offset=header_len)
    return payload.reshape(dims)


def load_idx(images_path, labels_path, limit=None, num_classes=None, split="train") -> LabeledDataset:
    """MNIST-family IDX pair; pixels scaled to [0, 1] and flattened row-major.

    Gzipped files (``.gz``) are read transparently.
    """
    images = _read_idx(images_path, 3)
    labels = _read_idx(labels_path, 1)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    inputs = images.reshape(images.shape[0], int(np.prod(images.shape[1:]))).astype(np.float64) / 255.0
    labels = labels.astype(np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 0
    return LabeledDataset(inputs, labels, num_classes, split)


def write_idx(images, labels, images_path, labels_path):
    """Write uint8 arrays as an IDX pair (used for fixtures and tests)."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(bytes([0, 0, 0x08, 3]) + struct.pack(">3I", *images.shape) + images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(bytes([0, 0, 0x08, 1]) + struct.pack(">I", labels.shape[0]) + labels.tobytes())


def synth_blobs(rng: Rng, c: int, per_class: int, d_in: int, center_scale: float = 3.0,
                noise_sigma: float = 1.0) -> LabeledDataset:
    """Gaussian blobs: one random center per class, isotropic noise around it.

    Samples are ordered class by class.
    """
    if min(c, per_class, d_in) < 1:
        raise ConfigError("c, per_class and d_in must all be >= 1")
    centers = center_scale * gaussian_matrix(rng, c, d_in)
    labels = np.repeat(np.arange(c), per_class)
    noise = noise_sigma * gaussian_matrix(rng, c * per_class, d_in)
    ds = LabeledDataset(centers[labels] + noise, labels, c)
    ds.class_centers = centers
    return ds


def train_eval_split(ds: LabeledDataset, eval_per_class: int):
    """Last ``eval_per_class`` samples of every class go to the eval split."""
    train_idx, eval_idx = [], []
    for k in range(ds.num_classes):
        idx = np.flatnonzero(ds.labels == k)
        if idx.size <= eval_per_class:
            raise ConfigError(f"class {k} has {idx.size} samples, cannot hold out {eval_per_class}")
        train_idx.append(idx[: idx.size - eval_per_class])
        eval_idx.append(idx[idx.size - eval_per_class:])
    return ds.subset(np.concatenate(train_idx), "train"), ds.subset(np.concatenate(eval_idx), "eval")


def centroids_to_dict(cs: CentroidSet) -> dict:
    return {
        "format_version": CENTROID_FORMAT_VERSION,
        "num_classes": cs.num_classes,
        "dim": cs.dim,
        "seed": cs.seed,
        "force_exponent": cs.force_exponent,
        "final_energy": cs.final_energy,
        "iterations_run": cs.iterations_run,
        "stop_reason": cs.stop_reason,
        "centers": cs.centers.tolist(),
    }


def write_centroids(cs: CentroidSet, path):
    """JSON; floats use Python's shortest round-trip repr, so reads are bit-exact."""
    text = json.dumps(centroids_to_dict(cs), indent=1, allow_nan=True)
    Path(path).write_text(text + "\n")


def centroids_from_dict(doc) -> CentroidSet:
    if not isinstance(doc, dict):
        raise SchemaError("centroid document must be a JSON object")
    version = doc.get("format_version")
    if version != CENTROID_FORMAT_VERSION:
        raise FormatVersionMismatchError(
            f"format_version {version!r} is not supported (expected {CENTROID_FORMAT_VERSION})")
    required = ("num_classes", "dim", "seed", "force_exponent", "final_energy",
                "iterations_run", "centers")
    missing = [k for k in required if k not in doc]
    if missing:
        raise SchemaError(f"missing fields: {', '.join(missing)}")
    try:
        centers = np.array(doc["centers"], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"centers is not a numeric matrix: {exc}") from None
    c, d = int(doc["num_classes"]), int(doc["dim"])
    if centers.shape != (c, d):
        raise SchemaError(f"centers has shape {centers.shape}, header says ({c}, {d})")
    dev = np.abs(row_norms(centers) - 1.0)
    if dev.max() > UNIT_NORM_TOL:
        raise CentroidInvariantError(
            f"row {int(dev.argmax())} has norm {1.0 + dev.max():.12g}, expected 1 +- {UNIT_NORM_TOL}")
    try:
        return CentroidSet(
            centers, seed=int(doc["seed"]), force_exponent=float(doc["force_exponent"]),
            final_energy=float(doc["final_energy"]), iterations_run=int(doc["iterations_run"]),
            stop_reason=str(doc.get("stop_reason", "unknown")),
        )
    except ConfigError as exc:
        raise CentroidInvariantError(str(exc)) from None


def read_centroids(path) -> CentroidSet:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from None
    return centroids_from_dict(doc)
