"""Independent reference implementations used to check the package.

Everything here works from first principles on tiny shapes: the full
coefficient tensor is expanded index by index, integrals become explicit
Kronecker sums, and gauge transformations are applied directly to site
tensors.  Nothing imports the package's contraction code paths beyond
plain data access.
"""

import itertools

import numpy as np
import torch

from mpsgen import MpsEnsemble, make_embedding
from mpsgen.embeddings import embed


def np_phi(e, x):
    """Embedding features as a numpy array."""
    return embed(e, np.asarray(x, dtype=np.float64)).detach().numpy()


def dense_coefficients(tensors: np.ndarray) -> np.ndarray:
    """Full coefficient tensor W[e_1, ..., e_N] of one chain.

    Expanded one physical-index combination at a time; each entry is the
    (0, 0) element of the product of the chosen site matrices.
    """
    n, dim, _, d = tensors.shape
    w = np.zeros((d,) * n)
    for combo in itertools.product(range(d), repeat=n):
        mat = np.eye(dim)
        for site, e_idx in enumerate(combo):
            mat = mat @ tensors[site][:, :, e_idx]
        w[combo] = mat[0, 0]
    return w


def dense_output(tensors: np.ndarray, e, x) -> float:
    """Raw output y = sum_e W_e prod_n phi(x_n)_{e_n}, fully expanded."""
    w = dense_coefficients(tensors)
    phis = np_phi(e, x)  # (N, d)
    total = 0.0
    n = tensors.shape[0]
    for combo in itertools.product(range(tensors.shape[3]), repeat=n):
        term = w[combo]
        for site, e_idx in enumerate(combo):
            term *= phis[site, e_idx]
        total += term
    return total


def dense_norm_sq(tensors: np.ndarray, b: np.ndarray) -> float:
    """Integral of y^2 via the expanded coefficients and Kronecker Gram."""
    n, _, _, d = tensors.shape
    w = dense_coefficients(tensors).reshape(-1)
    kron = np.ones((1, 1))
    for _ in range(n):
        kron = np.kron(kron, b)
    return float(w @ kron @ w)


def dense_reduced_matrix(
    tensors: np.ndarray, b: np.ndarray, e, site: int, cond: dict
) -> np.ndarray:
    """Reduced d x d matrix at ``site`` from the expanded coefficients.

    v[a, c] = sum over index pairs of W_e W_f with phi phi^T factors at
    conditioned sites, Gram factors at marginalized ones, and the open
    site contributing the (a, c) slot.
    """
    n, _, _, d = tensors.shape
    w = dense_coefficients(tensors)
    factors = []
    for j in range(n):
        if j == site:
            factors.append(None)
        elif j in cond:
            phi = np_phi(e, cond[j])
            factors.append(np.outer(phi, phi))
        else:
            factors.append(b)
    v = np.zeros((d, d))
    for combo_e in itertools.product(range(d), repeat=n):
        for combo_f in itertools.product(range(d), repeat=n):
            term = w[combo_e] * w[combo_f]
            for j in range(n):
                if j == site:
                    continue
                term *= factors[j][combo_e[j], combo_f[j]]
            v[combo_e[site], combo_f[site]] += term
    return v


def apply_gauge(m: MpsEnsemble, c: int, bond: int, x_mat: np.ndarray) -> MpsEnsemble:
    """Insert X X^{-1} on the bond between sites ``bond`` and ``bond + 1``.

    The represented function is unchanged; the stored tensors are not.
    """
    t = m.tensors().detach().numpy().copy()
    inv = np.linalg.inv(x_mat)
    t[c, bond] = np.einsum("lre,rk->lke", t[c, bond], x_mat)
    t[c, bond + 1] = np.einsum("kl,lre->kre", inv, t[c, bond + 1])
    base = m.base().numpy()
    delta = torch.from_numpy(t - base[None, None])
    return MpsEnsemble(embedding=m.embedding, delta=delta)


def fourier_identity_pdf(d: int, x):
    """Closed form for phi(x)^T I phi(x) with the cosine features."""
    x = np.asarray(x, dtype=np.float64)
    total = np.ones_like(x)
    for j in range(1, d):
        total = total + np.cos(j * np.pi * x) ** 2
    return total


def make_fourier(d: int):
    return make_embedding("fourier", d)
