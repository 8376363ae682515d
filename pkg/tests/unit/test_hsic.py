import itertools

import numpy as np
import pytest
import torch

from app.schemas import KernelSpec
from app.services.hsic import (
    FALLBACK_BANDWIDTH,
    centering_matrix,
    double_center,
    gram_matrix,
    hsic_biased,
    hsic_oracle,
    resolve_bandwidth,
)


def randn(*shape, seed=0):
    return torch.randn(*shape, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)


# 20 fixtures cycling through every (m, d) pair
ORACLE_CASES = [
    (seed, m, d)
    for seed, (m, d) in enumerate(itertools.islice(itertools.cycle(itertools.product((2, 4, 8, 16), (1, 3, 8))), 20))
]


class TestHsicOracle:
    """Matrix estimator against the explicit-sum oracle."""

    @pytest.mark.parametrize("seed, m, d", ORACLE_CASES)
    def test_matches_oracle(self, seed, m, d):
        """Random fixtures agree to 1e-10."""
        X = randn(m, d, seed=seed)
        Y = randn(m, max(1, d - 1), seed=seed + 100)
        assert abs(hsic_biased(X, Y).item() - hsic_oracle(X, Y)) <= 1e-10

    def test_matches_oracle_with_fixed_bandwidth(self):
        X, Y = randn(8, 3, seed=1), randn(8, 2, seed=2)
        kx, ky = KernelSpec.fixed(0.7), KernelSpec.fixed(2.0)
        assert abs(hsic_biased(X, Y, kx, ky).item() - hsic_oracle(X, Y, kx, ky)) <= 1e-10

    def test_oracle_rejects_large_batches(self):
        with pytest.raises(ValueError):
            hsic_oracle(randn(65, 2), randn(65, 2))


class TestHsicProperties:
    """Non-negativity, symmetry, degenerate inputs."""

    def test_non_negative(self):
        for seed in range(10):
            assert hsic_biased(randn(16, 4, seed=seed), randn(16, 4, seed=seed + 50)).item() >= 0.0

    def test_symmetric(self):
        X, Y = randn(16, 3, seed=3), randn(16, 5, seed=4)
        assert hsic_biased(X, Y).item() == pytest.approx(hsic_biased(Y, X).item(), abs=1e-12)

    def test_constant_feature_gives_exact_zero(self):
        """A constant Y has a constant Gram matrix, which centers to zero."""
        X = randn(16, 3)
        Y = torch.ones(16, 2, dtype=torch.float64)
        assert hsic_biased(X, Y).item() == 0.0

    def test_identical_points_fall_back_to_unit_bandwidth(self):
        Y = torch.ones(5, 2, dtype=torch.float64)
        assert resolve_bandwidth(Y, KernelSpec()).item() == FALLBACK_BANDWIDTH

    def test_median_bandwidth_uses_positive_distances(self):
        # positive distances are 1, 1, 1, 2, 2; the duplicate pair contributes 0
        X = torch.tensor([[0.0], [0.0], [1.0], [2.0]], dtype=torch.float64)
        assert resolve_bandwidth(X, KernelSpec()).item() == 1.0

    def test_gram_matrix_has_unit_diagonal(self):
        K = gram_matrix(randn(6, 3), KernelSpec())
        assert torch.equal(torch.diagonal(K), torch.ones(6, dtype=torch.float64))

    def test_double_center_matches_centering_matrix(self):
        K = gram_matrix(randn(7, 2), KernelSpec())
        H = centering_matrix(7)
        assert torch.allclose(double_center(K), H @ K @ H, atol=1e-12)

    def test_accepts_numpy_and_vectors(self):
        x = np.linspace(0.0, 1.0, 10)
        assert hsic_biased(x, x ** 2).item() > 0.0

    @pytest.mark.parametrize(
        "X, Y",
        [
            (torch.zeros(1, 2), torch.zeros(1, 2)),
            (torch.zeros(4, 2), torch.zeros(5, 2)),
            (torch.full((4, 2), float("nan")), torch.zeros(4, 2)),
            (torch.zeros(4, 2, 2), torch.zeros(4, 2)),
        ],
    )
    def test_invalid_batches_raise(self, X, Y):
        with pytest.raises(ValueError):
            hsic_biased(X, Y)

    def test_fixed_bandwidth_must_be_positive(self):
        with pytest.raises(ValueError):
            KernelSpec.fixed(0.0)


class TestHsicSensitivity:
    """Dependent pairs score far above independent ones."""

    @pytest.mark.parametrize("seed", range(5))
    def test_self_dependence_dominates(self, seed):
        X = randn(512, 8, seed=seed)
        Y = randn(512, 8, seed=seed + 1000)
        assert hsic_biased(X, X).item() / hsic_biased(X, Y).item() >= 10.0


class TestHsicGradient:
    """Autograd against central finite differences."""

    def test_gradient_matches_finite_differences(self):
        """m=6, d=3 in float64 with central step 1e-5."""
        X = randn(6, 3, seed=5).requires_grad_(True)
        Y = randn(6, 2, seed=6)
        hsic_biased(X, Y).backward()
        analytic = X.grad.clone()

        h = 1e-5
        numeric = torch.zeros_like(analytic)
        with torch.no_grad():
            for i in range(X.shape[0]):
                for j in range(X.shape[1]):
                    Xp, Xm = X.detach().clone(), X.detach().clone()
                    Xp[i, j] += h
                    Xm[i, j] -= h
                    numeric[i, j] = (hsic_biased(Xp, Y) - hsic_biased(Xm, Y)) / (2 * h)

        rel = (analytic - numeric).norm() / numeric.norm()
        assert rel.item() <= 1e-4

    def test_gradient_flows_through_both_arguments(self):
        X = randn(6, 2, seed=7).requires_grad_(True)
        Y = randn(6, 2, seed=8).requires_grad_(True)
        hsic_biased(X, Y).backward()
        assert X.grad.abs().sum() > 0
        assert Y.grad.abs().sum() > 0


class TestHsicKnownValues:
    """Closed-form values on two-point batches."""

    def test_gram_off_diagonal_at_unit_distance(self):
        X = torch.tensor([[0.0], [1.0]], dtype=torch.float64)
        K = gram_matrix(X, KernelSpec.fixed(1.0))
        assert K[0, 1].item() == pytest.approx(np.exp(-0.5), abs=1e-12)
        assert K[1, 0].item() == pytest.approx(np.exp(-0.5), abs=1e-12)

    def test_centering_matrix_is_idempotent(self):
        H = centering_matrix(9)
        assert torch.allclose(H @ H, H, atol=1e-12)

    def test_centering_matrix_two_points(self):
        expected = torch.tensor([[0.5, -0.5], [-0.5, 0.5]], dtype=torch.float64)
        assert torch.allclose(centering_matrix(2).to(torch.float64), expected, atol=1e-12)

    def test_two_point_value(self):
        """Median bandwidth is 1 at unit distance, giving (1 - e^-0.5)^2."""
        X = torch.tensor([[0.0], [1.0]], dtype=torch.float64)
        expected = (1.0 - np.exp(-0.5)) ** 2
        assert hsic_biased(X, X.clone()).item() == pytest.approx(expected, abs=1e-12)
        assert hsic_oracle(X, X.clone()) == pytest.approx(expected, abs=1e-12)

    def test_invariant_to_batch_permutation(self):
        X, Y = randn(12, 3, seed=9), randn(12, 4, seed=10)
        perm = torch.randperm(12, generator=torch.Generator().manual_seed(0))
        assert abs(hsic_biased(X[perm], Y[perm]).item() - hsic_biased(X, Y).item()) <= 1e-12
