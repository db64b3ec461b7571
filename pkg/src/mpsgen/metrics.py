"""Evaluation metrics: accuracy, a Gaussian-moment sample-quality score,
outlier rate, and noise-robustness protocols."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import torch

from .embeddings import embed
from .errors import ArgumentError, DimensionError
from .mps import MpsEnsemble
from .numerics import knn_mean_distances, trace_sqrt_product
from .rng import RngStream
from .training import TrainConfig, _eval_split, train_classifier

DEFAULT_KNN_K = 5


@dataclass
class MetricsReport:
    """Bundle of evaluation results, JSON-friendly via ``as_dict``."""

    accuracy: float
    fid_like: float | None = None
    outlier_rate: float | None = None
    n_eval: int = 0
    n_samples: int = 0

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def accuracy(m: MpsEnsemble, features, labels, chunk: int = 4096) -> float:
    """Fraction of rows whose argmax posterior matches the label.

    ``features`` are rows in the embedding support.
    """
    features = np.asarray(features, dtype=np.float64)
    labs = torch.as_tensor(np.asarray(labels, dtype=np.int64))
    phi = embed(m.embedding, features)
    _, acc = _eval_split(m.tensors(), phi, labs, chunk=chunk)
    return acc


def fid_like(real: np.ndarray, generated: np.ndarray) -> float:
    """Frechet distance between Gaussian fits of the two point sets.

    ``|mu_r - mu_g|^2 + tr(S_r + S_g - 2 (S_r S_g)^{1/2})`` with
    unbiased covariance estimates.  Zero when the sets share their first
    two moments; always reported non-negative.
    """
    real = np.asarray(real, dtype=np.float64)
    generated = np.asarray(generated, dtype=np.float64)
    if real.ndim != 2 or generated.ndim != 2 or real.shape[1] != generated.shape[1]:
        raise DimensionError(
            f"point sets must share feature width, got {real.shape} and {generated.shape}"
        )
    if real.shape[0] < 2 or generated.shape[0] < 2:
        raise DimensionError("need at least 2 points per set for covariances")
    mu_r, mu_g = real.mean(axis=0), generated.mean(axis=0)
    cov_r = np.cov(real, rowvar=False, ddof=1)
    cov_g = np.cov(generated, rowvar=False, ddof=1)
    cov_r = np.atleast_2d(cov_r)
    cov_g = np.atleast_2d(cov_g)
    score = float(
        ((mu_r - mu_g) ** 2).sum()
        + np.trace(cov_r)
        + np.trace(cov_g)
        - 2.0 * trace_sqrt_product(cov_r, cov_g)
    )
    return max(score, 0.0)


def outlier_rate(
    train: np.ndarray, samples: np.ndarray, k: int = DEFAULT_KNN_K
) -> float:
    """Fraction of samples farther from the data manifold than any
    training point is.

    The yardstick per point is its mean distance to the k nearest
    training points (self excluded for the training set itself); the
    threshold is the maximum of that yardstick over the training set.
    """
    train = np.asarray(train, dtype=np.float64)
    samples = np.asarray(samples, dtype=np.float64)
    ref_dists = knn_mean_distances(train, train, k, exclude_self=True)
    threshold = float(ref_dists.max())
    sample_dists = knn_mean_distances(train, samples, k)
    return float((sample_dists > threshold).mean())


def perturbed_accuracy(
    m: MpsEnsemble,
    features,
    labels,
    sigma: float,
    rng: RngStream,
    mode: str = "eval",
    train_cfg: TrainConfig | None = None,
) -> float:
    """Accuracy under Gaussian noise on the embedded features.

    ``eval`` mode perturbs the embedded evaluation rows of the given
    model and scores them.  ``train`` mode instead fits a fresh model of
    the same shape with that noise injected into every training batch
    and reports its clean validation accuracy (the training loop holds
    out its own split).
    """
    if sigma < 0:
        raise ArgumentError(f"sigma must be >= 0, got {sigma}")
    if mode not in ("eval", "train"):
        raise ArgumentError(f"mode must be 'eval' or 'train', got {mode!r}")
    features = np.asarray(features, dtype=np.float64)
    labs = torch.as_tensor(np.asarray(labels, dtype=np.int64))
    if mode == "eval":
        phi = embed(m.embedding, features)
        if sigma > 0:
            phi = phi + torch.from_numpy(rng.normal(sigma, size=tuple(phi.shape)))
        _, acc = _eval_split(m.tensors(), phi, labs)
        return acc
    cfg = train_cfg or TrainConfig()
    cfg = dataclasses.replace(
        cfg, embed_noise_sigma=sigma, seed=int(rng.integers(0, 2**63 - 1))
    )
    _, history = train_classifier(features, labels, m.embedding, m.bond_dim, cfg)
    return max(h["val_accuracy"] for h in history) if history else 0.0
