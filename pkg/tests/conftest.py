import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from mpsgen import RngStream, init_ensemble, make_embedding

torch.set_num_threads(1)


def random_model(seed, n_classes=2, n_sites=3, bond_dim=2, kind="fourier", d=3, sigma=0.3):
    """Small seeded ensemble for contraction and sampling tests."""
    e = make_embedding(kind, d)
    return init_ensemble(n_classes, n_sites, bond_dim, e, sigma=sigma, rng=RngStream(seed))


@pytest.fixture
def tiny_model():
    return random_model(11)
