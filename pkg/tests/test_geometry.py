"""
Tests for source stacks, mixing and the mean/centering projectors
"""

import pytest
import torch
from hypothesis import given, settings, strategies as st

from floss.core.geometry import (
    DTYPE, MeanStack, ProjectorK, SourceStack, mix, project_mean, project_perp, row_mean_deviation,
)
from floss.utils.exceptions import ValidationError


def _stack(seed, k, length, batch=()):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(batch + (k, length), generator=g, dtype=DTYPE)


class TestMix:
    """Test mixing"""

    def test_mix_sums_sources(self):
        """Test y = sum_k s_k"""
        s = torch.tensor([[1.0, 2.0, 3.0], [10.0, 20.0, 30.0]], dtype=DTYPE)
        assert torch.equal(mix(s), torch.tensor([11.0, 22.0, 33.0], dtype=DTYPE))
        assert torch.equal(SourceStack(s).mixture(), mix(s))

    def test_mix_rejects_nan(self):
        """Test that non-finite sources are refused"""
        s = torch.tensor([[1.0, float("nan")], [0.0, 0.0]], dtype=DTYPE)
        with pytest.raises(ValidationError):
            mix(s)

    def test_source_stack_shape_checks(self):
        """Test SourceStack rejects K < 2 and non-matrix inputs"""
        with pytest.raises(ValidationError):
            SourceStack(torch.zeros(1, 10))
        with pytest.raises(ValidationError):
            SourceStack(torch.zeros(10))


class TestMeanStack:
    """Test the mixture average"""

    def test_from_mixture(self):
        """Test s_bar = y / K replicated over rows"""
        y = torch.tensor([3.0, -6.0, 9.0], dtype=DTYPE)
        m = MeanStack.from_mixture(y, 3)
        assert torch.allclose(m.mean, torch.tensor([1.0, -2.0, 3.0], dtype=DTYPE))
        assert m.data.shape == (3, 3)
        assert torch.allclose(m.mixture, y)

    def test_from_sources_matches_project_mean(self):
        """Test that the mean stack equals P applied to the sources"""
        s = _stack(0, 3, 50)
        m = MeanStack.from_sources(s)
        assert torch.allclose(m.data, project_mean(s), atol=1e-15)

    def test_k_must_be_at_least_two(self):
        """Test K >= 2"""
        with pytest.raises(ValidationError):
            MeanStack.from_mixture(torch.zeros(4), 1)


class TestProjectors:
    """Test P and P_perp algebra"""

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2 ** 31 - 1), k=st.integers(1, 6), length=st.integers(1, 40))
    def test_decomposition_and_idempotence(self, seed, k, length):
        """Test P + P_perp = I, P P = P, P_perp P_perp = P_perp, P P_perp = 0"""
        x = _stack(seed, k, length)
        p, q = project_mean(x), project_perp(x)
        assert torch.allclose(p + q, x, atol=1e-12)
        assert torch.allclose(project_mean(p), p, atol=1e-12)
        assert torch.allclose(project_perp(q), q, atol=1e-12)
        assert torch.allclose(project_mean(q), torch.zeros_like(q), atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2 ** 31 - 1), k=st.integers(2, 5))
    def test_commute_with_permutations(self, seed, k):
        """Test that both projectors commute with source permutations"""
        x = _stack(seed, k, 16)
        perm = torch.randperm(k, generator=torch.Generator().manual_seed(seed))
        assert torch.allclose(project_perp(x[perm]), project_perp(x)[perm], atol=1e-12)
        assert torch.allclose(project_mean(x[perm]), project_mean(x)[perm], atol=1e-12)

    def test_perp_has_zero_column_sums(self):
        """Test that P_perp output sums to zero over sources"""
        x = _stack(1, 4, 100)
        assert torch.allclose(project_perp(x).sum(dim=0), torch.zeros(100, dtype=DTYPE), atol=1e-12)

    def test_batched_stacks(self):
        """Test projectors on (N, K, L) stacks act per batch entry"""
        x = _stack(2, 3, 20, batch=(4,))
        for i in range(4):
            assert torch.allclose(project_perp(x)[i], project_perp(x[i]), atol=1e-15)

    def test_projector_k_checks_source_count(self):
        """Test that ProjectorK refuses stacks with another K"""
        p = ProjectorK(3)
        with pytest.raises(ValidationError, match="K=3"):
            p.perp(torch.zeros(2, 5))
        with pytest.raises(ValidationError):
            ProjectorK(0)

    def test_k_equals_one(self):
        """Test the degenerate K = 1 case: P = I, P_perp = 0"""
        x = _stack(3, 1, 10)
        assert torch.allclose(project_mean(x), x)
        assert torch.allclose(project_perp(x), torch.zeros_like(x))


class TestRowMeanDeviation:
    """Test the slice deviation measure"""

    def test_zero_on_slice(self):
        """Test zero deviation for a stack whose rows average to the target"""
        s = _stack(4, 3, 30)
        assert row_mean_deviation(s, s.mean(dim=0)) < 1e-15

    def test_relative(self):
        """Test deviation is relative to the target norm"""
        target = torch.ones(4, dtype=DTYPE)
        x = torch.full((2, 4), 1.1, dtype=DTYPE)
        assert row_mean_deviation(x, target) == pytest.approx(0.1)
