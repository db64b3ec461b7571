"""Shared numerical routines.

Small, heavily reused pieces live here: symmetric eigendecomposition with
validation, a positive-semidefinite matrix square root, left-Riemann
binned integration (the quadrature rule behind every CDF in the package),
and k-nearest-neighbour mean distances for the outlier metric.
"""

from __future__ import annotations

import numpy as np
import torch

from .errors import DimensionError, NotSpdError

# Relative symmetry tolerance for sym_eig input validation.
SYMMETRY_RTOL = 1e-10

# Eigenvalues of a nominally PSD matrix are clamped to zero when they sit
# in [-CLAMP_RTOL * lambda_max, 0); anything more negative is rejected.
CLAMP_RTOL = 1e-10


def sym_eig(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix.

    Returns ``(w, q)`` with eigenvalues ``w`` ascending and orthonormal
    eigenvectors in the columns of ``q``, so ``m == q @ diag(w) @ q.T``.

    Raises
    ------
    DimensionError
        If ``m`` is not square or not symmetric within a relative
        tolerance of ``SYMMETRY_RTOL`` on its largest entry.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {m.shape}")
    scale = np.abs(m).max()
    asym = np.abs(m - m.T).max()
    if asym > SYMMETRY_RTOL * max(scale, 1e-300):
        raise DimensionError(
            f"matrix is not symmetric: |m - m.T| = {asym:.3e} "
            f"exceeds {SYMMETRY_RTOL:.0e} * {scale:.3e}"
        )
    w, q = np.linalg.eigh(m)
    return w, q


def spd_sqrt(m: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root ``r`` with ``r @ r == m``.

    Eigenvalues in ``[-CLAMP_RTOL * lambda_max, 0)`` are treated as
    rounding noise and clamped to zero; anything more negative raises.
    """
    w, q = sym_eig(m)
    lam_max = float(w.max(initial=0.0))
    floor = -CLAMP_RTOL * max(lam_max, 0.0)
    if w.min(initial=0.0) < floor:
        raise NotSpdError(
            f"matrix has eigenvalue {w.min():.6e}, below the PSD "
            f"clamp floor {floor:.6e}"
        )
    w = np.clip(w, 0.0, None)
    return (q * np.sqrt(w)) @ q.T


def trace_sqrt_product(a: np.ndarray, b: np.ndarray) -> float:
    """``trace((a b)^{1/2})`` for symmetric PSD ``a`` and ``b``.

    Computed through the symmetric form ``a^{1/2} b a^{1/2}``, whose
    eigenvalues match those of ``a b`` but stay real under rounding.
    """
    ra = spd_sqrt(a)
    inner = ra @ np.asarray(b, dtype=np.float64) @ ra
    inner = 0.5 * (inner + inner.T)
    w, _ = sym_eig(inner)
    lam_max = float(w.max(initial=0.0))
    floor = -CLAMP_RTOL * max(lam_max, 0.0)
    if w.min(initial=0.0) < floor:
        raise NotSpdError(
            f"product has eigenvalue {w.min():.6e} below clamp floor {floor:.6e}"
        )
    return float(np.sqrt(np.clip(w, 0.0, None)).sum())


def integrate_binned(values, width: float):
    """Cumulative left-Riemann sums: ``out[k] = sum(values[:k + 1]) * width``.

    ``values`` are samples of an integrand at the left edges of ``len(values)``
    equal bins of the given width.  Accepts a numpy array or a torch tensor
    and returns the same kind; the torch path preserves gradients.
    """
    if width <= 0.0 or not np.isfinite(width):
        raise DimensionError(f"bin width must be positive and finite, got {width}")
    if isinstance(values, torch.Tensor):
        if not torch.isfinite(values).all():
            raise DimensionError("integrand contains non-finite values")
        return torch.cumsum(values, dim=-1) * width
    values = np.asarray(values, dtype=np.float64)
    if not np.isfinite(values).all():
        raise DimensionError("integrand contains non-finite values")
    return np.cumsum(values, axis=-1) * width


def knn_mean_distance(reference: np.ndarray, query: np.ndarray, k: int) -> float:
    """Mean Euclidean distance from ``query`` to its ``k`` nearest points
    in ``reference``."""
    query = np.asarray(query, dtype=np.float64)
    return float(knn_mean_distances(reference, query[None, :], k)[0])


def knn_mean_distances(
    reference: np.ndarray,
    queries: np.ndarray,
    k: int,
    exclude_self: bool = False,
    chunk: int = 1024,
) -> np.ndarray:
    """Vectorized form of :func:`knn_mean_distance` over query rows.

    With ``exclude_self`` each query's zero-distance match to itself is
    skipped (used when queries and reference are the same set).  Work is
    chunked so the pairwise distance matrix never exceeds
    ``chunk * len(reference)`` entries.
    """
    reference = np.asarray(reference, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64)
    if reference.ndim != 2 or queries.ndim != 2:
        raise DimensionError("reference and queries must be 2-d arrays")
    if reference.shape[1] != queries.shape[1]:
        raise DimensionError(
            f"feature dimensions differ: {reference.shape[1]} vs {queries.shape[1]}"
        )
    needed = k + 1 if exclude_self else k
    if k < 1 or needed > reference.shape[0]:
        raise DimensionError(
            f"k={k} out of range for {reference.shape[0]} reference points"
        )
    ref_sq = (reference**2).sum(axis=1)
    out = np.empty(queries.shape[0], dtype=np.float64)
    for start in range(0, queries.shape[0], chunk):
        q = queries[start : start + chunk]
        d2 = (q**2).sum(axis=1)[:, None] + ref_sq[None, :] - 2.0 * (q @ reference.T)
        np.maximum(d2, 0.0, out=d2)
        part = np.partition(d2, needed - 1, axis=1)[:, :needed]
        part.sort(axis=1)
        if exclude_self:
            part = part[:, 1:]
        out[start : start + chunk] = np.sqrt(part).mean(axis=1)
    return out
