"""Matrix product state ensembles: storage, contraction, classification.

An ensemble holds one MPS per class.  Each site carries a rank-3 tensor
``A[l, r, e]`` of shape (D, D, d): left bond, right bond, embedding
index.  Open boundaries are stored embedded in the full tensor; the first
site only ever uses left-bond row 0 and the last site right-bond column
0.  Parameters are stored as an offset ``delta`` from the frozen base
``base[l, r, e] = I_D[l, r] / sqrt(d)``, and gradients flow through
``delta`` alone.

The raw model output for class c on input x is the scalar contraction of
the chain with the embedded features, ``y_c = L . R`` after sweeping site
matrices in from both ends.  The squared outputs act as unnormalized
class scores: ``p(c | x) = y_c^2 / sum_i y_i^2``.  The same squared
contraction, normalized over the support, is the density the sampler
draws from.

Intermediate vectors are rescaled by their largest-magnitude component
after every absorption step, with the logs of the divisors accumulated
separately, so chains of any length stay inside float range.  Results are
returned as :class:`ScaledScalar` pairs ``(mantissa, log_scale)`` with
value ``mantissa * exp(log_scale)``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import struct
from dataclasses import dataclass

import numpy as np
import torch

from .embeddings import (
    DTYPE,
    Embedding,
    GramMatrix,
    embed,
    embed_vector,
    gram_matrix,
    make_embedding,
)
from .errors import (
    ArgumentError,
    DegenerateContractionError,
    DimensionError,
    ModelFormatError,
)
from .rng import RngStream

MAGIC = b"MPSENS01"
FORMAT_VERSION = 1

# Mantissas this small are floored before taking logs so autograd never
# sees log(0); the corresponding log-prob floor is around -690.
_TINY = 1e-300

# Cross-entropy per-sample floor, matching the smallest positive double.
LOG_PROB_FLOOR = -745.0


@dataclass
class ScaledScalar:
    """A scalar stored as ``mantissa * exp(log_scale)``.

    Keeps contraction results representable when the plain product would
    overflow or underflow float64.
    """

    mantissa: float
    log_scale: float

    @property
    def value(self) -> float:
        return self.mantissa * math.exp(self.log_scale)

    def log_abs(self) -> float:
        """``log |value|``; -inf for an exact zero mantissa."""
        if self.mantissa == 0.0:
            return -math.inf
        return math.log(abs(self.mantissa)) + self.log_scale


@dataclass
class MpsEnsemble:
    """One MPS per class over a shared embedding.

    ``delta`` has shape (C, N, D, D, d); the effective site tensors are
    ``base + delta`` with the identity-times-1/sqrt(d) base.
    """

    embedding: Embedding
    delta: torch.Tensor

    @property
    def n_classes(self) -> int:
        return self.delta.shape[0]

    @property
    def n_sites(self) -> int:
        return self.delta.shape[1]

    @property
    def bond_dim(self) -> int:
        return self.delta.shape[2]

    @property
    def phys_dim(self) -> int:
        return self.delta.shape[4]

    def base(self) -> torch.Tensor:
        """The frozen initialization point, shape (D, D, d)."""
        d = self.phys_dim
        eye = torch.eye(self.bond_dim, dtype=DTYPE) / math.sqrt(d)
        return eye.unsqueeze(-1).expand(-1, -1, d)

    def tensors(self) -> torch.Tensor:
        """Effective site tensors for all classes, shape (C, N, D, D, d)."""
        return self.delta + self.base()

    def site_tensors(self, c: int) -> torch.Tensor:
        """Effective site tensors of class ``c``, shape (N, D, D, d)."""
        self._check_class(c)
        return self.delta[c] + self.base()

    def _check_class(self, c: int):
        if not 0 <= c < self.n_classes:
            raise ArgumentError(
                f"class index {c} out of range for {self.n_classes} classes"
            )

    def clone(self) -> "MpsEnsemble":
        return dataclasses.replace(self, delta=self.delta.detach().clone())


def init_ensemble(
    n_classes: int,
    n_sites: int,
    bond_dim: int,
    embedding: Embedding,
    sigma: float = 0.1,
    rng: RngStream | None = None,
) -> MpsEnsemble:
    """Fresh ensemble: identity base plus Gaussian offsets of scale sigma.

    With ``sigma = 0`` every class is the same product of identities and
    all class outputs coincide on every input.
    """
    if n_classes < 2:
        raise DimensionError(f"need at least 2 classes, got {n_classes}")
    if n_sites < 1 or bond_dim < 1:
        raise DimensionError(
            f"n_sites and bond_dim must be >= 1, got {n_sites}, {bond_dim}"
        )
    if sigma < 0:
        raise ArgumentError(f"sigma must be >= 0, got {sigma}")
    if rng is None:
        rng = RngStream(0)
    shape = (n_classes, n_sites, bond_dim, bond_dim, embedding.d)
    delta = torch.from_numpy(rng.normal(sigma, size=shape)) if sigma > 0 else torch.zeros(shape, dtype=DTYPE)
    return MpsEnsemble(embedding=embedding, delta=delta.to(DTYPE))


def site_matrices(m: MpsEnsemble, c: int, x) -> np.ndarray:
    """Per-site D x D matrices ``M_n = sum_e A_n[:, :, e] phi(x_n)_e``.

    ``x`` is one input of length N in the embedding support.
    """
    phi = embed_vector(m.embedding, x)
    if phi.shape[0] != m.n_sites:
        raise DimensionError(
            f"input has {phi.shape[0]} components, model has {m.n_sites} sites"
        )
    mats = torch.einsum("nlre,ne->nlr", m.site_tensors(c), phi)
    return mats.detach().numpy()


def _rescale_rows(vec: torch.Tensor, logs: torch.Tensor, strict: bool):
    """Divide each batch row by its max-abs component (detached) and
    accumulate the log of the divisor.

    A row that collapsed to all zeros raises under ``strict``; otherwise
    its divisor is 1 (the row stays zero and its mantissa ends up 0).
    """
    mx = vec.detach().abs().amax(dim=-1)
    dead = mx == 0
    if bool(dead.any()):
        if strict:
            idx = int(dead.nonzero()[0, 0])
            raise DegenerateContractionError(
                f"intermediate contraction vector collapsed to zero (batch row {idx})"
            )
        mx = torch.where(dead, torch.ones_like(mx), mx)
    return vec / mx.unsqueeze(-1), logs + torch.log(mx)


def _contract_chain(
    mats: torch.Tensor,
    rescale: bool = True,
    strict: bool = False,
    trace: list | None = None,
):
    """Sweep a batch of site-matrix chains in from both ends.

    ``mats`` has shape (X, N, D, D).  Returns ``(mantissa, log_scale)``
    of shape (X,) each; ``log_scale`` never carries gradients.  The left
    sweep owns sites 0..ceil(N/2)-1, the right sweep the rest, matching a
    meet-in-the-middle evaluation order.  ``trace`` collects the rescaled
    intermediate vectors when provided (diagnostics and tests).
    """
    x_rows, n, _, _ = mats.shape
    logs = torch.zeros(x_rows, dtype=DTYPE)
    if n == 1:
        return mats[:, 0, 0, 0], logs
    half = (n + 1) // 2
    left = mats[:, 0, 0, :]
    if rescale:
        left, logs = _rescale_rows(left, logs, strict)
    if trace is not None:
        trace.append(left.detach().clone())
    for i in range(1, half):
        left = torch.einsum("xl,xlr->xr", left, mats[:, i])
        if rescale:
            left, logs = _rescale_rows(left, logs, strict)
        if trace is not None:
            trace.append(left.detach().clone())
    right = mats[:, n - 1, :, 0]
    if rescale:
        right, logs = _rescale_rows(right, logs, strict)
    if trace is not None:
        trace.append(right.detach().clone())
    for i in range(n - 2, half - 1, -1):
        right = torch.einsum("xlr,xr->xl", mats[:, i], right)
        if rescale:
            right, logs = _rescale_rows(right, logs, strict)
        if trace is not None:
            trace.append(right.detach().clone())
    return (left * right).sum(dim=-1), logs


def _forward_embedded(
    tensors: torch.Tensor, phi: torch.Tensor, rescale: bool = True, strict: bool = False
):
    """Raw outputs for every (input, class) pair.

    ``tensors``: (C, N, D, D, d); ``phi``: (B, N, d).  Returns mantissa
    and log-scale tensors of shape (B, C).
    """
    b, n, d = phi.shape
    c = tensors.shape[0]
    if (n, d) != (tensors.shape[1], tensors.shape[4]):
        raise DimensionError(
            f"embedded batch shape {(n, d)} does not match model sites/features "
            f"{(tensors.shape[1], tensors.shape[4])}"
        )
    mats = torch.einsum("cnlre,bne->bcnlr", tensors, phi)
    man, logs = _contract_chain(
        mats.reshape(b * c, n, *mats.shape[-2:]), rescale=rescale, strict=strict
    )
    return man.reshape(b, c), logs.reshape(b, c)


def _as_feature_batch(m: MpsEnsemble, x) -> torch.Tensor:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != m.n_sites:
        raise DimensionError(
            f"expected inputs of shape (batch, {m.n_sites}), got {x.shape}"
        )
    return embed(m.embedding, x)


def classify(m: MpsEnsemble, x, rescale: bool = True) -> list[ScaledScalar]:
    """Raw per-class outputs ``y_c`` for one input, as scaled scalars.

    With rescaling off the mantissa is the plain contraction and
    ``log_scale`` is 0; results agree after recombination either way.
    """
    phi = _as_feature_batch(m, x)
    if phi.shape[0] != 1:
        raise DimensionError("classify takes a single input; see predict_proba for batches")
    man, logs = _forward_embedded(m.tensors(), phi, rescale=rescale, strict=rescale)
    return [
        ScaledScalar(mantissa=float(man[0, c]), log_scale=float(logs[0, c]))
        for c in range(m.n_classes)
    ]


def contraction_trace(m: MpsEnsemble, c: int, x) -> list[np.ndarray]:
    """Rescaled intermediate L/R vectors for one (class, input) pair."""
    m._check_class(c)
    phi = _as_feature_batch(m, x)
    trace: list = []
    _contract_chain(
        torch.einsum("nlre,bne->bnlr", m.site_tensors(c), phi),
        rescale=True,
        strict=True,
        trace=trace,
    )
    return [t[0].numpy() for t in trace]


def _log_scores(man: torch.Tensor, logs: torch.Tensor) -> torch.Tensor:
    """``log y_c^2`` per class from mantissa/log-scale pairs, with the
    mantissa floored at +-_TINY so autograd never meets log(0)."""
    man_sq = (man * man).clamp_min(_TINY)
    return 2.0 * logs + torch.log(man_sq)


def predict_proba(m: MpsEnsemble, x, rescale: bool = True) -> np.ndarray:
    """Class posteriors ``y_c^2 / sum_i y_i^2`` for one input or a batch.

    Normalization happens in the log domain, so widely separated scales
    survive.  All-zero outputs across every class raise.  ``rescale``
    exists so the stabilization path can be checked against the raw
    product; leave it on for real work.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    phi = _as_feature_batch(m, x)
    man, logs = _forward_embedded(m.tensors(), phi, rescale=rescale)
    if bool((man == 0).all(dim=1).any()):
        raise DegenerateContractionError(
            "all class outputs are exactly zero for at least one input"
        )
    probs = torch.softmax(_log_scores(man, logs), dim=1).numpy()
    return probs[0] if single else probs


def predict(m: MpsEnsemble, x) -> np.ndarray | int:
    """Argmax class label(s) under :func:`predict_proba`."""
    p = predict_proba(m, x)
    return int(p.argmax()) if p.ndim == 1 else p.argmax(axis=1)


def joint_density(m: MpsEnsemble, c: int, x) -> ScaledScalar:
    """Unnormalized density ``y_c(x)^2`` as a scaled scalar."""
    m._check_class(c)
    ys = classify(m, x)
    y = ys[c]
    return ScaledScalar(mantissa=y.mantissa * y.mantissa, log_scale=2.0 * y.log_scale)


def mps_norm_sq(m: MpsEnsemble, c: int, gram: GramMatrix | None = None) -> ScaledScalar:
    """Total mass ``integral of y_c(x)^2 dx`` over the embedding support.

    Contracts two copies of the chain with the Gram matrix joining the
    embedding indices at every site.  The D x D environment is rescaled
    by its largest entry after each absorption.
    """
    m._check_class(c)
    if gram is None:
        gram = gram_matrix(m.embedding)
    a = m.site_tensors(c).detach()
    b = gram.b
    n = m.n_sites
    log_scale = 0.0
    if n == 1:
        vec = a[0, 0, 0, :]
        return ScaledScalar(mantissa=float(vec @ b @ vec), log_scale=0.0)
    env = torch.einsum("re,ef,sf->rs", a[0, 0], b, a[0, 0])
    mx = float(env.abs().max())
    if mx == 0.0:
        raise DegenerateContractionError("norm environment collapsed to zero at site 0")
    env = env / mx
    log_scale += math.log(mx)
    for i in range(1, n - 1):
        env = torch.einsum("lm,lre,ef,msf->rs", env, a[i], b, a[i])
        mx = float(env.abs().max())
        if mx == 0.0:
            raise DegenerateContractionError(
                f"norm environment collapsed to zero at site {i}"
            )
        env = env / mx
        log_scale += math.log(mx)
    total = torch.einsum("lm,le,ef,mf->", env, a[n - 1, :, 0], b, a[n - 1, :, 0])
    return ScaledScalar(mantissa=float(total), log_scale=log_scale)


def _meta_dict(m: MpsEnsemble) -> dict:
    return {
        "format": FORMAT_VERSION,
        "n_classes": m.n_classes,
        "n_sites": m.n_sites,
        "bond_dim": m.bond_dim,
        "phys_dim": m.phys_dim,
        "embedding": m.embedding.kind,
        "support": list(m.embedding.support),
    }


def save_model(m: MpsEnsemble, path) -> None:
    """Write the ensemble to ``path``.

    Layout: magic, u32 version, u32 metadata length, canonical JSON
    metadata, raw little-endian float64 ``delta``, sha256 of everything
    before it.  Identical models produce identical bytes.
    """
    meta = json.dumps(_meta_dict(m), sort_keys=True, separators=(",", ":")).encode()
    payload = np.ascontiguousarray(
        m.delta.detach().numpy(), dtype="<f8"
    ).tobytes()
    body = MAGIC + struct.pack("<II", FORMAT_VERSION, len(meta)) + meta + payload
    digest = hashlib.sha256(body).digest()
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(digest)


def load_model(path) -> MpsEnsemble:
    """Read an ensemble written by :func:`save_model`.

    Raises :class:`ModelFormatError` on a bad magic, version, metadata,
    payload size, or checksum.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 8 + 32:
        raise ModelFormatError("model file truncated")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ModelFormatError("model file checksum mismatch")
    if body[: len(MAGIC)] != MAGIC:
        raise ModelFormatError("bad magic; not a model file")
    version, meta_len = struct.unpack_from("<II", body, len(MAGIC))
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version}")
    meta_start = len(MAGIC) + 8
    if meta_start + meta_len > len(body):
        raise ModelFormatError("metadata extends past end of file")
    try:
        meta = json.loads(body[meta_start : meta_start + meta_len].decode())
        shape = tuple(
            int(meta[k])
            for k in ("n_classes", "n_sites", "bond_dim", "bond_dim", "phys_dim")
        )
        kind = meta["embedding"]
    except (ValueError, KeyError, TypeError) as exc:
        raise ModelFormatError(f"bad model metadata: {exc}") from exc
    payload = body[meta_start + meta_len :]
    expected = int(np.prod(shape)) * 8
    if len(payload) != expected:
        raise ModelFormatError(
            f"payload holds {len(payload)} bytes, header implies {expected}"
        )
    try:
        embedding = make_embedding(kind, shape[-1])
    except ArgumentError as exc:
        raise ModelFormatError(f"bad embedding in metadata: {exc}") from exc
    if list(embedding.support) != list(meta.get("support", embedding.support)):
        raise ModelFormatError("support in metadata contradicts embedding kind")
    delta = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
    return MpsEnsemble(embedding=embedding, delta=torch.from_numpy(delta.copy()))
