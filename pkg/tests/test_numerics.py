import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from mpsgen import DimensionError, NotSpdError, RngStream
from mpsgen.numerics import (
    integrate_binned,
    knn_mean_distance,
    knn_mean_distances,
    spd_sqrt,
    sym_eig,
    trace_sqrt_product,
)


def random_spd(rng, n, scale=1.0):
    a = rng.normal(size=(n, n))
    return a @ a.T * scale + 1e-3 * np.eye(n)


class TestSymEig:
    def test_reconstructs(self):
        rng = RngStream(1)
        for _ in range(20):
            a = rng.normal(size=(5, 5))
            m = a + a.T
            w, q = sym_eig(m)
            np.testing.assert_allclose((q * w) @ q.T, m, atol=1e-12)

    def test_eigenvalues_ascending(self):
        m = np.diag([3.0, -1.0, 2.0])
        w, _ = sym_eig(m)
        assert list(w) == sorted(w)

    def test_rejects_non_square(self):
        with pytest.raises(DimensionError):
            sym_eig(np.zeros((2, 3)))

    def test_rejects_asymmetric(self):
        m = np.array([[1.0, 2.0], [0.0, 1.0]])
        with pytest.raises(DimensionError):
            sym_eig(m)

    def test_accepts_near_symmetric(self):
        # rounding-level asymmetry must pass
        m = np.array([[1.0, 0.5], [0.5 + 1e-14, 1.0]])
        sym_eig(m)


class TestSpdSqrt:
    def test_diagonal_is_elementwise_sqrt(self):
        m = np.diag([4.0, 9.0, 0.25])
        np.testing.assert_allclose(spd_sqrt(m), np.diag([2.0, 3.0, 0.5]), atol=1e-14)

    def test_squares_back(self):
        rng = RngStream(2)
        for _ in range(10):
            m = random_spd(rng, 4)
            r = spd_sqrt(m)
            np.testing.assert_allclose(r @ r, m, rtol=1e-10, atol=1e-12)
            np.testing.assert_allclose(r, r.T, atol=1e-12)

    def test_clamps_tiny_negative(self):
        m = np.diag([1.0, -1e-12])
        r = spd_sqrt(m)
        assert r[1, 1] == 0.0

    def test_rejects_negative_definite(self):
        with pytest.raises(NotSpdError):
            spd_sqrt(np.diag([1.0, -0.5]))

    def test_zero_matrix(self):
        np.testing.assert_array_equal(spd_sqrt(np.zeros((3, 3))), np.zeros((3, 3)))


class TestTraceSqrtProduct:
    def test_matches_general_eigenvalues(self):
        """tr((ab)^{1/2}) equals the sum of sqrt eigenvalues of ab."""
        rng = RngStream(3)
        for _ in range(10):
            a = random_spd(rng, 4)
            b = random_spd(rng, 4)
            want = np.sqrt(np.real(np.linalg.eigvals(a @ b))).sum()
            assert trace_sqrt_product(a, b) == pytest.approx(want, rel=1e-9)

    def test_identical_matrices(self):
        rng = RngStream(4)
        a = random_spd(rng, 3)
        assert trace_sqrt_product(a, a) == pytest.approx(np.trace(a), rel=1e-10)


class TestIntegrateBinned:
    def test_constant_ramps_linearly(self):
        out = integrate_binned(np.ones(4), 0.25)
        np.testing.assert_allclose(out, [0.25, 0.5, 0.75, 1.0], atol=1e-15)

    def test_torch_matches_numpy(self):
        vals = np.array([0.5, 1.5, 0.0, 2.0])
        a = integrate_binned(vals, 0.1)
        b = integrate_binned(torch.from_numpy(vals), 0.1).numpy()
        np.testing.assert_allclose(a, b, atol=0)

    def test_torch_keeps_gradients(self):
        vals = torch.tensor([1.0, 2.0], dtype=torch.float64, requires_grad=True)
        integrate_binned(vals, 0.5).sum().backward()
        np.testing.assert_allclose(vals.grad.numpy(), [1.0, 0.5])

    def test_rejects_bad_width(self):
        with pytest.raises(DimensionError):
            integrate_binned(np.ones(3), 0.0)

    def test_rejects_non_finite(self):
        with pytest.raises(DimensionError):
            integrate_binned(np.array([1.0, np.nan]), 0.5)

    @given(
        st.lists(st.floats(0.0, 10.0), min_size=1, max_size=30),
        st.floats(1e-3, 10.0),
    )
    @settings(max_examples=50, deadline=None)
    def test_cumulative_property(self, vals, width):
        """out[k] - out[k-1] == vals[k] * width and output is monotone
        for non-negative integrands."""
        out = integrate_binned(np.asarray(vals), width)
        np.testing.assert_allclose(np.diff(out), np.asarray(vals[1:]) * width, atol=1e-9)
        assert (np.diff(out) >= -1e-12).all()


class TestKnn:
    def test_matches_brute_force(self):
        rng = RngStream(5)
        ref = rng.normal(size=(40, 3))
        for _ in range(10):
            q = rng.normal(size=3)
            dists = np.sort(np.linalg.norm(ref - q, axis=1))
            want = dists[:4].mean()
            assert knn_mean_distance(ref, q, 4) == pytest.approx(want, rel=1e-12)

    def test_exclude_self(self):
        ref = np.array([[0.0], [1.0], [3.0]])
        out = knn_mean_distances(ref, ref, 1, exclude_self=True)
        np.testing.assert_allclose(out, [1.0, 1.0, 2.0])

    def test_chunking_invariant(self):
        rng = RngStream(6)
        ref = rng.normal(size=(30, 2))
        q = rng.normal(size=(25, 2))
        a = knn_mean_distances(ref, q, 3, chunk=4)
        b = knn_mean_distances(ref, q, 3, chunk=1000)
        np.testing.assert_allclose(a, b, atol=0)

    def test_k_out_of_range(self):
        ref = np.zeros((3, 2))
        with pytest.raises(DimensionError):
            knn_mean_distances(ref, ref, 3, exclude_self=True)

    def test_feature_mismatch(self):
        with pytest.raises(DimensionError):
            knn_mean_distance(np.zeros((4, 2)), np.zeros(3), 1)
