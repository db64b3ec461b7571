"""Feature embeddings and their Gram matrices.

An embedding lifts a scalar input to a d-component feature vector.  Four
families are provided:

``sincos``
    ``[sin(pi x / 2), cos(pi x / 2)]`` on [0, 1].  d is fixed at 2.
``spincoherent``
    ``sqrt(C(d-1, j)) cos(x)^(d-1-j) sin(x)^(j+1)`` for j = 0..d-1 on
    [0, 1].  Classification only; its Gram matrix is never diagonal for
    d >= 2.
``fourier``
    ``cos(j pi x)`` for j = 0..d-1 on [0, 1].
``legendre``
    Legendre polynomials ``P_j(x)`` for j = 0..d-1 on [-1, 1], via the
    three-term recursion.

The Gram matrix ``b[j, k] = integral over the support of phi_j phi_k``
decides whether exact sampling is available: marginalization contracts a
pair of embedding indices through ``b``, and the sampler requires ``b``
diagonal with a strictly positive diagonal.

All ``embed*`` functions are torch ops end to end, so sampled coordinates
can carry gradients back through the embedding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch

from .errors import ArgumentError, DimensionError, DomainError

DTYPE = torch.float64

KINDS = ("sincos", "spincoherent", "fourier", "legendre")

# Inputs may overshoot the support by this much (rescaling arithmetic,
# interpolation endpoints) and are clamped; anything further out raises.
_SUPPORT_GRACE = 1e-9

# Off-diagonal magnitudes below this count as zero when classifying a
# Gram matrix as diagonal.
DIAGONAL_ATOL = 1e-6

DEFAULT_QUADRATURE_BINS = 100_000


@dataclass(frozen=True)
class Embedding:
    """A feature map family instance.  Create via :func:`make_embedding`."""

    kind: str
    d: int
    support: tuple[float, float]


@dataclass(frozen=True)
class GramMatrix:
    """Pairwise feature overlaps ``b[j, k]`` over the embedding support.

    ``diagonal`` is true when every off-diagonal entry is below
    ``DIAGONAL_ATOL`` in magnitude; ``generation_capable`` additionally
    requires a strictly positive diagonal.
    """

    b: torch.Tensor
    diagonal: bool
    generation_capable: bool


def make_embedding(kind: str, d: int | None = None) -> Embedding:
    """Validated constructor for :class:`Embedding`.

    ``sincos`` admits only d = 2 (passing None picks it); the other kinds
    require an explicit d >= 1.  Legendre lives on [-1, 1], the rest on
    [0, 1].
    """
    if kind not in KINDS:
        raise ArgumentError(f"unknown embedding kind {kind!r}; choose from {KINDS}")
    if kind == "sincos":
        if d is None:
            d = 2
        if d != 2:
            raise DimensionError(f"sincos embedding has d = 2, got d = {d}")
    else:
        if d is None:
            raise ArgumentError(f"embedding kind {kind!r} needs an explicit d")
        if d < 1:
            raise DimensionError(f"embedding dimension must be >= 1, got {d}")
    support = (-1.0, 1.0) if kind == "legendre" else (0.0, 1.0)
    return Embedding(kind=kind, d=int(d), support=support)


def _check_support(e: Embedding, x: torch.Tensor, index_names: bool = False):
    lo, hi = e.support
    bad = (x < lo - _SUPPORT_GRACE) | (x > hi + _SUPPORT_GRACE)
    if bad.any():
        where = ""
        if index_names and x.ndim >= 1:
            flat = int(bad.reshape(-1).nonzero()[0, 0])
            where = f" at flat index {flat}"
        val = float(x.reshape(-1)[bad.reshape(-1)][0])
        raise DomainError(
            f"input {val!r}{where} outside embedding support [{lo}, {hi}]"
        )
    return x.clamp(lo, hi)


def embed(e: Embedding, x) -> torch.Tensor:
    """Map inputs of any shape to features of shape ``x.shape + (d,)``.

    Accepts floats, numpy arrays, or torch tensors; tensor inputs keep
    their autograd graph.  Values outside the support raise
    :class:`DomainError`.
    """
    if not isinstance(x, torch.Tensor):
        x = torch.as_tensor(np.asarray(x, dtype=np.float64), dtype=DTYPE)
    elif x.dtype != DTYPE:
        x = x.to(DTYPE)
    x = _check_support(e, x, index_names=True)
    if e.kind == "sincos":
        half_pi = math.pi / 2.0
        return torch.stack((torch.sin(half_pi * x), torch.cos(half_pi * x)), dim=-1)
    if e.kind == "spincoherent":
        c, s = torch.cos(x), torch.sin(x)
        cols = []
        for j in range(e.d):
            coeff = math.sqrt(math.comb(e.d - 1, j))
            cols.append(coeff * c ** (e.d - 1 - j) * s ** (j + 1))
        return torch.stack(cols, dim=-1)
    if e.kind == "fourier":
        freqs = torch.arange(e.d, dtype=DTYPE)
        return torch.cos(math.pi * x.unsqueeze(-1) * freqs)
    # legendre
    cols = [torch.ones_like(x)]
    if e.d > 1:
        cols.append(x)
    for j in range(2, e.d):
        cols.append(((2 * j - 1) * x * cols[j - 1] - (j - 1) * cols[j - 2]) / j)
    return torch.stack(cols, dim=-1)


def embed_scalar(e: Embedding, x: float) -> torch.Tensor:
    """Features of a single scalar input, shape ``(d,)``."""
    return embed(e, torch.as_tensor(float(x), dtype=DTYPE))


def embed_vector(e: Embedding, x) -> torch.Tensor:
    """Features of a 1-d batch of inputs, shape ``(n, d)``.

    Domain violations report the offending index.
    """
    if not isinstance(x, torch.Tensor):
        x = torch.as_tensor(np.asarray(x, dtype=np.float64), dtype=DTYPE)
    if x.ndim != 1:
        raise DimensionError(f"embed_vector expects a 1-d input, got shape {tuple(x.shape)}")
    return embed(e, x)


@lru_cache(maxsize=32)
def _gram_cached(kind: str, d: int, bins: int) -> GramMatrix:
    e = make_embedding(kind, d)
    lo, hi = e.support
    width = (hi - lo) / bins
    mids = torch.linspace(lo + width / 2.0, hi - width / 2.0, bins, dtype=DTYPE)
    phi = embed(e, mids)  # (bins, d)
    b = (phi.T @ phi) * width
    off = b - torch.diag(torch.diagonal(b))
    diagonal = bool(off.abs().max() < DIAGONAL_ATOL)
    capable = diagonal and bool(torch.diagonal(b).min() > 0.0)
    return GramMatrix(b=b, diagonal=diagonal, generation_capable=capable)


def gram_matrix(e: Embedding, quadrature_bins: int = DEFAULT_QUADRATURE_BINS) -> GramMatrix:
    """Gram matrix of the embedding by midpoint quadrature.

    Results are memoized per (kind, d, bins).  Callers must treat the
    returned tensor as read-only.
    """
    if quadrature_bins < 100:
        raise ArgumentError(
            f"quadrature needs at least 100 bins, got {quadrature_bins}"
        )
    return _gram_cached(e.kind, e.d, int(quadrature_bins))
