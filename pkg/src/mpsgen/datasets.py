"""Benchmark datasets, CSV I/O, splits, and support rescaling.

All generators return features min-max normalized to [0, 1] per the
GLOBAL minimum and maximum over every coordinate (not per feature), so
the aspect ratio of the point cloud survives.  The pre-normalization
range is kept on the dataset so the original coordinates can be
recovered.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .embeddings import Embedding
from .errors import ArgumentError, DimensionError
from .rng import RngStream


@dataclass
class Dataset:
    """Features in [0, 1]^N with integer labels.

    ``feature_range`` is the (min, max) of the raw coordinates before
    global min-max normalization; ``unnormalized()`` undoes it.
    """

    features: np.ndarray
    labels: np.ndarray
    feature_range: tuple[float, float]

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise DimensionError(
                f"features {self.features.shape} and labels {self.labels.shape} disagree"
            )

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1

    def unnormalized(self) -> np.ndarray:
        lo, hi = self.feature_range
        return self.features * (hi - lo) + lo


def _global_minmax(raw: np.ndarray) -> tuple[np.ndarray, tuple[float, float]]:
    lo = float(raw.min())
    hi = float(raw.max())
    if hi <= lo:
        raise ArgumentError("degenerate data: all coordinates identical")
    return (raw - lo) / (hi - lo), (lo, hi)


def gen_spiral(n_per_class: int = 8000, rng: RngStream | None = None) -> Dataset:
    """Two interleaved noisy spirals, one per class.

    A single vector of angles is drawn and reused for both arms (the
    arms differ only by sign), radii grow linearly with angle, unit
    Gaussian jitter is added, coordinates are divided by 20 and then
    globally min-max normalized.
    """
    if n_per_class < 1:
        raise ArgumentError(f"n_per_class must be >= 1, got {n_per_class}")
    rng = rng or RngStream(0)
    theta = np.sqrt(rng.uniform(size=n_per_class)) * 2.0 * np.pi
    r_a = 2.0 * theta + np.pi
    arm_a = np.column_stack((np.cos(theta) * r_a, np.sin(theta) * r_a))
    arm_a = arm_a + rng.normal(size=(n_per_class, 2))
    r_b = -2.0 * theta - np.pi
    arm_b = np.column_stack((np.cos(theta) * r_b, np.sin(theta) * r_b))
    arm_b = arm_b + rng.normal(size=(n_per_class, 2))
    raw = np.vstack((arm_a, arm_b)) / 20.0
    feats, rng_pair = _global_minmax(raw)
    labels = np.concatenate((np.zeros(n_per_class), np.ones(n_per_class)))
    return Dataset(features=feats, labels=labels, feature_range=rng_pair)


def gen_moons(n: int = 2000, noise: float = 0.1, rng: RngStream | None = None) -> Dataset:
    """Two interleaved half-circles with Gaussian jitter.

    The first class follows the upper unit semicircle, the second the
    lower semicircle shifted by (1, -0.5).  With ``noise = 0`` the raw
    points sit exactly on those arcs.
    """
    if n < 2:
        raise ArgumentError(f"need at least 2 points, got {n}")
    if noise < 0:
        raise ArgumentError(f"noise must be >= 0, got {noise}")
    rng = rng or RngStream(0)
    n_out = n // 2
    n_in = n - n_out
    t_out = np.linspace(0.0, np.pi, n_out)
    t_in = np.linspace(0.0, np.pi, n_in)
    pts = np.vstack(
        (
            np.column_stack((np.cos(t_out), np.sin(t_out))),
            np.column_stack((1.0 - np.cos(t_in), 1.0 - np.sin(t_in) - 0.5)),
        )
    )
    if noise > 0:
        pts = pts + rng.normal(sigma=noise, size=pts.shape)
    feats, rng_pair = _global_minmax(pts)
    labels = np.concatenate((np.zeros(n_out), np.ones(n_in)))
    return Dataset(features=feats, labels=labels, feature_range=rng_pair)


def load_iris(path=None) -> Dataset:
    """The classic 150-row flower dataset, globally min-max normalized.

    Reads the bundled CSV by default.  Validates shape: 150 rows, 4
    features, labels 0/1/2.
    """
    if path is None:
        ref = resources.files("mpsgen").joinpath("data/iris.csv")
        with resources.as_file(ref) as p:
            return load_iris(p)
    ds = load_dataset_csv(path, normalized=False)
    if ds.features.shape != (150, 4):
        raise DimensionError(f"expected 150 x 4 features, got {ds.features.shape}")
    if sorted(set(ds.labels.tolist())) != [0, 1, 2]:
        raise DimensionError("expected labels 0, 1, 2")
    feats, rng_pair = _global_minmax(ds.features)
    return Dataset(features=feats, labels=ds.labels, feature_range=rng_pair)


def save_dataset_csv(ds: Dataset, path) -> None:
    """Write ``x0..x{N-1},label`` rows with full float precision."""
    n_feat = ds.features.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(n_feat)] + ["label"])
        for row, lab in zip(ds.features, ds.labels):
            writer.writerow([f"{v:.17g}" for v in row] + [int(lab)])


def load_dataset_csv(path, normalized: bool = True) -> Dataset:
    """Read a ``x0..,label`` CSV written by :func:`save_dataset_csv`.

    With ``normalized`` the features are required to lie in [0, 1].
    Malformed rows report their line number.
    """
    path = Path(path)
    rows: list[list[float]] = []
    labels: list[int] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[-1] != "label" or len(header) < 2:
            raise ArgumentError(f"{path}: expected header 'x0,...,label'")
        width = len(header) - 1
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width + 1:
                raise ArgumentError(
                    f"{path}:{lineno}: expected {width + 1} fields, got {len(row)}"
                )
            try:
                rows.append([float(v) for v in row[:-1]])
                labels.append(int(row[-1]))
            except ValueError as exc:
                raise ArgumentError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise ArgumentError(f"{path}: no data rows")
    feats = np.asarray(rows, dtype=np.float64)
    labs = np.asarray(labels, dtype=np.int64)
    if labs.min() < 0:
        raise ArgumentError(f"{path}: negative labels")
    if normalized and (feats.min() < 0.0 or feats.max() > 1.0):
        raise ArgumentError(f"{path}: features outside [0, 1]")
    return Dataset(features=feats, labels=labs, feature_range=(0.0, 1.0))


def stratified_split(
    labels: np.ndarray, val_fraction: float, rng: RngStream
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic per-class shuffle and split into (train, val) indices.

    Each class contributes ``round(count * val_fraction)`` points to the
    validation set, at least 1 when the class has 2 or more points.
    """
    if not 0.0 < val_fraction < 1.0:
        raise ArgumentError(f"val_fraction must be in (0, 1), got {val_fraction}")
    labels = np.asarray(labels)
    train_idx: list[np.ndarray] = []
    val_idx: list[np.ndarray] = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        perm = members[rng.permutation(len(members))]
        n_val = int(round(len(members) * val_fraction))
        if len(members) >= 2:
            n_val = min(max(n_val, 1), len(members) - 1)
        val_idx.append(perm[:n_val])
        train_idx.append(perm[n_val:])
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(val_idx))


def to_support(e: Embedding, x01: np.ndarray) -> np.ndarray:
    """Affinely map [0, 1] dataset coordinates onto the embedding support."""
    lo, hi = e.support
    x01 = np.asarray(x01, dtype=np.float64)
    return x01 * (hi - lo) + lo


def from_support(e: Embedding, x: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_support`."""
    lo, hi = e.support
    x = np.asarray(x, dtype=np.float64)
    return (x - lo) / (hi - lo)
