"""Exact sampling from a trained chain.

The chain's squared output is an unnormalized density over the support
box.  Sampling is autoregressive over sites: at site i the conditional
density given the already-drawn prefix is the quadratic form
``phi(x)^T V phi(x)`` with a d x d reduced matrix V obtained by
contracting the prefix through its embedded features and the suffix
through the embedding's Gram matrix.  Each conditional is binned into a
CDF table and inverted at a uniform latent coordinate, so a latent
vector ``nu`` in [0, 1]^N maps deterministically to one sample.

Everything stays in torch, and only bracket selection and rescaling
divisors are detached, so samples admit reverse-mode gradients with
respect to the model parameters (the route the adversarial trainer
uses).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
import torch

from .embeddings import DTYPE, Embedding, GramMatrix, embed, gram_matrix
from .errors import (
    ArgumentError,
    CapabilityError,
    DegenerateDensityError,
    DimensionError,
)
from .mps import MpsEnsemble
from .numerics import integrate_binned

DEFAULT_BINS = 1000


@dataclass
class ReducedDensityMatrix:
    """Coefficients of a conditional density ``phi(x)^T v phi(x)``.

    ``v`` is symmetric with largest-magnitude entry 1; the divisor used
    to normalize it is folded into ``log_scale`` together with all
    environment rescalings, so the represented matrix is
    ``v * exp(log_scale)``.
    """

    v: torch.Tensor
    log_scale: float


@dataclass
class CdfTable:
    """Binned CDF of one conditional density.

    ``grid`` holds the ``bins + 1`` edges, ``pdf`` the density at the
    left edge of each bin, and ``cdf`` the running left-Riemann mass with
    ``cdf[0] = 0``.  ``cdf[-1]`` is the total (unnormalized) mass.
    """

    grid: torch.Tensor
    pdf: torch.Tensor
    cdf: torch.Tensor
    support: tuple[float, float]
    width: float


def _boundary_sliced(tensors: torch.Tensor) -> list[torch.Tensor]:
    """Site tensors with boundary bonds cut to size 1: the first site
    uses left row 0 only, the last site right column 0 only."""
    n = tensors.shape[0]
    sites = [tensors[i] for i in range(n)]
    sites[0] = sites[0][0:1]
    sites[-1] = sites[-1][:, 0:1]
    return sites


def _env_divide(env: torch.Tensor, what: str):
    mx = env.detach().abs().amax(dim=(-2, -1))
    if (mx == 0).any():
        raise DegenerateDensityError(f"{what} environment collapsed to zero")
    return env / mx[..., None, None], mx


def reduced_density_matrix(
    m: MpsEnsemble,
    c: int,
    site: int,
    conditioned: Mapping[int, float] | None = None,
    gram: GramMatrix | None = None,
) -> ReducedDensityMatrix:
    """Reduced d x d matrix of the conditional density at ``site``.

    Sites listed in ``conditioned`` are pinned to the given values (their
    features contracted into both copies of the chain); all remaining
    sites other than ``site`` are integrated out through the Gram
    matrix.  The result is symmetrized and divided by its
    largest-magnitude entry, with the divisor logged into ``log_scale``.
    """
    m._check_class(c)
    n = m.n_sites
    cond = {int(k): float(v) for k, v in (conditioned or {}).items()}
    if not 0 <= site < n:
        raise ArgumentError(f"site {site} out of range for {n} sites")
    if site in cond:
        raise ArgumentError(f"site {site} cannot be both open and conditioned")
    for k in cond:
        if not 0 <= k < n:
            raise ArgumentError(f"conditioned site {k} out of range for {n} sites")
    needs_gram = len(cond) < n - 1
    if gram is None and needs_gram:
        gram = gram_matrix(m.embedding)
    b = gram.b if gram is not None else None

    sites = _boundary_sliced(m.site_tensors(c))
    log_scale = 0.0

    def step(env: torch.Tensor, j: int, from_left: bool) -> torch.Tensor:
        a = sites[j]
        if j in cond:
            mat = torch.einsum("lre,e->lr", a, embed(m.embedding, cond[j]))
            if from_left:
                return torch.einsum("lm,lr,ms->rs", env, mat, mat)
            return torch.einsum("lr,ms,rs->lm", mat, mat, env)
        if from_left:
            return torch.einsum("lm,lre,ef,msf->rs", env, a, b, a)
        return torch.einsum("lre,ef,msf,rs->lm", a, b, a, env)

    left = torch.ones(1, 1, dtype=DTYPE)
    for j in range(site):
        left, mx = _env_divide(step(left, j, from_left=True), "left")
        log_scale += float(torch.log(mx))
    right = torch.ones(1, 1, dtype=DTYPE)
    for j in range(n - 1, site, -1):
        right, mx = _env_divide(step(right, j, from_left=False), "right")
        log_scale += float(torch.log(mx))

    a = sites[site]
    v = torch.einsum("lm,lre,msf,rs->ef", left, a, a, right)
    v = 0.5 * (v + v.T)
    mx = float(v.detach().abs().max())
    if mx == 0.0:
        raise DegenerateDensityError(
            f"reduced density matrix at site {site} is identically zero"
        )
    return ReducedDensityMatrix(v=v / mx, log_scale=log_scale + math.log(mx))


def pdf_eval(rdm: ReducedDensityMatrix, e: Embedding, x):
    """Unnormalized conditional density at ``x``: ``phi(x)^T v phi(x)``.

    Values are on the mantissa scale of ``rdm.v`` (``log_scale`` is not
    applied; the CDF normalizes it away).  Negative values from rounding
    are clamped to zero.  Scalars in, float out; arrays in, arrays out.
    """
    scalar = np.isscalar(x) or (isinstance(x, torch.Tensor) and x.ndim == 0)
    phi = embed(e, x)
    vals = torch.einsum("...e,ef,...f->...", phi, rdm.v, phi).clamp_min(0.0)
    if scalar:
        return float(vals)
    if isinstance(x, torch.Tensor):
        return vals
    return vals.detach().numpy()


def build_cdf(rdm: ReducedDensityMatrix, e: Embedding, bins: int = DEFAULT_BINS) -> CdfTable:
    """Bin the conditional density into a left-Riemann CDF table.

    The density is evaluated at the left edge of each of ``bins`` equal
    bins and accumulated, giving ``bins + 1`` CDF values from 0 to the
    total mass.  A total of zero (no mass anywhere) raises.
    """
    if bins < 2:
        raise ArgumentError(f"need at least 2 bins, got {bins}")
    lo, hi = e.support
    grid = torch.linspace(lo, hi, bins + 1, dtype=DTYPE)
    phi = embed(e, grid[:-1])
    pdf = torch.einsum("ke,ef,kf->k", phi, rdm.v, phi).clamp_min(0.0)
    width = (hi - lo) / bins
    cdf = torch.cat((torch.zeros(1, dtype=DTYPE), integrate_binned(pdf, width)))
    if float(cdf[-1]) <= 0.0:
        raise DegenerateDensityError("conditional density has zero total mass")
    return CdfTable(grid=grid, pdf=pdf, cdf=cdf, support=(lo, hi), width=width)


def _invert_shared(grid: torch.Tensor, cdf: torch.Tensor, nu: torch.Tensor) -> torch.Tensor:
    """Invert one CDF table at a batch of latent coordinates."""
    k_bins = grid.shape[0] - 1
    total = cdf[-1]
    target = nu * total
    idx = torch.searchsorted(cdf.detach(), target.detach(), right=True)
    k = (idx - 1).clamp(0, k_bins - 1)
    c0, c1 = cdf[k], cdf[k + 1]
    mass = c1 - c0
    safe = torch.where(mass.detach() > 0, mass, torch.ones_like(mass))
    width = grid[1] - grid[0]
    x = grid[k] + (target - c0) / safe * width
    top = target.detach() >= total.detach()
    if bool(top.any()):
        j = torch.searchsorted(cdf.detach(), total.detach().reshape(1), right=False)
        x = torch.where(top, grid[j.clamp(max=k_bins)].squeeze(), x)
    return x.clamp(float(grid[0]), float(grid[-1]))


def _invert_batch(grid: torch.Tensor, cdf: torch.Tensor, nu: torch.Tensor) -> torch.Tensor:
    """Invert per-row CDF tables (cdf: (B, K+1)) at per-row coordinates."""
    k_bins = grid.shape[0] - 1
    totals = cdf[:, -1]
    target = nu * totals
    idx = torch.searchsorted(cdf.detach(), target.detach().unsqueeze(1), right=True)
    k = (idx - 1).clamp(0, k_bins - 1)
    c0 = cdf.gather(1, k).squeeze(1)
    c1 = cdf.gather(1, k + 1).squeeze(1)
    mass = c1 - c0
    safe = torch.where(mass.detach() > 0, mass, torch.ones_like(mass))
    width = grid[1] - grid[0]
    x = grid[k.squeeze(1)] + (target - c0) / safe * width
    top = target.detach() >= totals.detach()
    if bool(top.any()):
        j = torch.searchsorted(cdf.detach(), totals.detach().unsqueeze(1), right=False)
        x = torch.where(top, grid[j.clamp(max=k_bins).squeeze(1)], x)
    return x.clamp(float(grid[0]), float(grid[-1]))


def inverse_cdf(table: CdfTable, nu):
    """Map latent coordinates in [0, 1] through the inverse of the table.

    ``nu * total`` is located in the running mass; the bin found by a
    right-bisect (which steps over zero-mass bins toward larger x) is
    interpolated linearly.  ``nu`` at or above the total maps to the
    first grid point where the mass saturates.  Scalars in, float out.
    """
    scalar = np.isscalar(nu) or (isinstance(nu, torch.Tensor) and nu.ndim == 0)
    if isinstance(nu, torch.Tensor):
        nu_t = nu.to(DTYPE).reshape(-1)
    else:
        nu_t = torch.as_tensor(np.asarray(nu, dtype=np.float64)).reshape(-1)
    if bool((nu_t < 0).any()) or bool((nu_t > 1).any()):
        raise ArgumentError("latent coordinates must lie in [0, 1]")
    x = _invert_shared(table.grid, table.cdf, nu_t)
    if scalar:
        return float(x[0])
    if isinstance(nu, torch.Tensor):
        return x.reshape(nu.shape)
    return x.detach().numpy().reshape(np.asarray(nu).shape)


def _check_capability(e: Embedding, gram: GramMatrix):
    if not gram.generation_capable:
        raise CapabilityError(
            f"embedding {e.kind!r} has a non-diagonal Gram matrix; "
            "exact sampling is unavailable"
        )


def sample(
    m: MpsEnsemble,
    c: int,
    nu,
    bins: int = DEFAULT_BINS,
    gram: GramMatrix | None = None,
):
    """Draw samples by inverting per-site conditionals at latents ``nu``.

    ``nu`` is one latent vector of shape (N,) or a batch (B, N) with
    entries in [0, 1].  The map is deterministic: the same model and
    latents give the same samples.  Passing a torch tensor returns a
    torch tensor that carries gradients back to the model parameters;
    anything else returns numpy.

    Memory scales with ``batch * bins``; chunk large batches externally.
    """
    m._check_class(c)
    if gram is None:
        gram = gram_matrix(m.embedding)
    _check_capability(m.embedding, gram)
    torch_in = isinstance(nu, torch.Tensor)
    nu_t = nu.to(DTYPE) if torch_in else torch.as_tensor(np.asarray(nu, dtype=np.float64))
    single = nu_t.ndim == 1
    if single:
        nu_t = nu_t.unsqueeze(0)
    n = m.n_sites
    if nu_t.ndim != 2 or nu_t.shape[1] != n:
        raise DimensionError(
            f"latents must have shape (batch, {n}) or ({n},), got {tuple(nu_t.shape)}"
        )
    if bool((nu_t < 0).any()) or bool((nu_t > 1).any()):
        raise ArgumentError("latent coordinates must lie in [0, 1]")
    if bins < 2:
        raise ArgumentError(f"need at least 2 bins, got {bins}")

    e = m.embedding
    batch = nu_t.shape[0]
    sites = _boundary_sliced(m.site_tensors(c))
    b = gram.b

    # Suffix environments through the Gram matrix, shared across the batch.
    renvs: list[torch.Tensor | None] = [None] * (n + 1)
    renvs[n] = torch.ones(1, 1, dtype=DTYPE)
    for i in range(n - 1, 0, -1):
        env = torch.einsum("lre,ef,msf,rs->lm", sites[i], b, sites[i], renvs[i + 1])
        renvs[i], _ = _env_divide(env, f"suffix site {i}")

    lo, hi = e.support
    grid = torch.linspace(lo, hi, bins + 1, dtype=DTYPE)
    width = (hi - lo) / bins
    gphi = embed(e, grid[:-1])  # (K, d)
    pairs = (gphi[:, :, None] * gphi[:, None, :]).reshape(bins, -1)  # (K, d*d)

    lenv = torch.ones(1, 1, 1, dtype=DTYPE)
    out = []
    for i in range(n):
        a = sites[i]
        suff = torch.einsum("lre,rs->lse", a, renvs[i + 1])
        block = torch.einsum("lse,msf->lmef", suff, a)
        v = torch.einsum("blm,lmef->bef", lenv, block)
        v = 0.5 * (v + v.transpose(-2, -1))
        v, _ = _env_divide(v, f"conditional at site {i}")
        rows = v.shape[0]
        pdf = (v.reshape(rows, -1) @ pairs.T).clamp_min(0.0)
        cdf = torch.cat(
            (torch.zeros(rows, 1, dtype=DTYPE), integrate_binned(pdf, width)), dim=1
        )
        if bool((cdf[:, -1].detach() <= 0).any()):
            raise DegenerateDensityError(
                f"conditional density at site {i} has zero total mass"
            )
        if rows == 1:
            x_i = _invert_shared(grid, cdf[0], nu_t[:, i])
        else:
            x_i = _invert_batch(grid, cdf, nu_t[:, i])
        out.append(x_i)
        if i == n - 1:
            break
        phi_i = embed(e, x_i)  # (B, d)
        mat = torch.einsum("lre,be->blr", a, phi_i)
        if lenv.shape[0] == 1 and batch > 1:
            lenv = lenv.expand(batch, -1, -1)
        lenv = torch.einsum("blm,blr,bms->brs", lenv, mat, mat)
        lenv, _ = _env_divide(lenv, f"prefix after site {i}")

    xs = torch.stack(out, dim=1)
    if single:
        xs = xs.squeeze(0)
    return xs if torch_in else xs.detach().numpy()


def interpolate_latent(
    m: MpsEnsemble,
    c: int,
    nu_a,
    nu_b,
    steps: int,
    bins: int = DEFAULT_BINS,
) -> np.ndarray:
    """Samples along the straight latent-space path from nu_a to nu_b.

    Returns a (steps, N) array whose first and last rows decode the two
    endpoints exactly.
    """
    if steps < 2:
        raise ArgumentError(f"need at least 2 steps, got {steps}")
    nu_a = np.asarray(nu_a, dtype=np.float64)
    nu_b = np.asarray(nu_b, dtype=np.float64)
    if nu_a.shape != (m.n_sites,) or nu_b.shape != (m.n_sites,):
        raise DimensionError(
            f"latent endpoints must have shape ({m.n_sites},), "
            f"got {nu_a.shape} and {nu_b.shape}"
        )
    ts = np.linspace(0.0, 1.0, steps)[:, None]
    nus = (1.0 - ts) * nu_a[None, :] + ts * nu_b[None, :]
    return sample(m, c, nus, bins=bins)
