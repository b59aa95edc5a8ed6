"""
Tests for PIT, Euclidean assignment and mini-batch OT coupling
"""

import itertools

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from floss.core.assignment import (
    PermutationAssignment, euclidean_assign, lexicographic_assignment, ot_couple,
    pit_assign, pit_from_velocity,
)
from floss.core.flowpath import WrappedDrift, make_pair
from floss.core.geometry import DTYPE
from floss.core.noiseshape import NoiseShaper
from floss.utils.exceptions import ValidationError
from tests.utils.test_helpers import ConstantDrift, oracles, random_stacks


def _pair(seed, k, length=32):
    g = torch.Generator().manual_seed(seed)
    s = torch.randn(k, length, generator=g, dtype=DTYPE)
    return make_pair(s, NoiseShaper.constant(length), g)


class TestPermutationAssignment:
    """Test the permutation value type"""

    def test_apply_convention(self):
        """Test (pi x)[a] = x[perm[a]]"""
        x = torch.arange(6, dtype=DTYPE).reshape(3, 2)
        out = PermutationAssignment((2, 0, 1)).apply(x)
        assert torch.equal(out[0], x[2])
        assert torch.equal(out[1], x[0])

    def test_inverse_and_compose(self):
        """Test inverse and composition"""
        for perm in itertools.permutations(range(4)):
            p = PermutationAssignment(perm)
            assert p.then(p.inverse()).is_identity()
            assert p.inverse().then(p).is_identity()

    def test_invalid(self):
        """Test rejection of non-bijections"""
        with pytest.raises(ValidationError):
            PermutationAssignment((0, 0))


class TestLexicographicAssignment:
    """Test the Hungarian solver with tie-breaking"""

    def test_matches_brute_force(self):
        """Test optimum and tie-breaking against enumeration"""
        rng = np.random.default_rng(0)
        for n in (1, 2, 3, 4, 5):
            for _ in range(20):
                cost = rng.standard_normal((n, n))
                perm, total = lexicographic_assignment(cost)
                ref_perm, ref_total = oracles.brute_force_assignment(cost)
                assert perm == ref_perm
                assert total == pytest.approx(ref_total)

    def test_all_ties_choose_identity(self):
        """Test that a constant cost matrix yields the identity"""
        perm, _ = lexicographic_assignment(np.ones((4, 4)))
        assert perm == (0, 1, 2, 3)

    def test_partial_ties(self):
        """Test lexicographic choice among several optima"""
        cost = np.array([[1.0, 1.0, 5.0], [1.0, 1.0, 5.0], [5.0, 5.0, 0.0]])
        assert lexicographic_assignment(cost)[0] == (0, 1, 2)

    def test_non_square(self):
        """Test rejection of rectangular costs"""
        with pytest.raises(ValidationError):
            lexicographic_assignment(np.zeros((2, 3)))


class TestEuclideanAssign:
    """Test argmin_pi ||x0 - pi x1||^2"""

    def test_matches_exhaustive_search(self):
        """Test against K! enumeration for K <= 4"""
        for k in (2, 3, 4):
            for seed in range(50):
                x0, x1 = random_stacks(seed, k, 16, count=2)
                assert euclidean_assign(x0, x1).perm == oracles.brute_force_euclidean(x0, x1)

    def test_recovers_shuffle(self):
        """Test that a shuffled copy is assigned back"""
        x1 = random_stacks(7, 4, 64)[0]
        perm = (3, 1, 0, 2)
        x0 = x1[list(perm)]
        assert euclidean_assign(x0, x1).perm == perm

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2 ** 31 - 1), k=st.integers(2, 4))
    def test_relabeling_x1(self, seed, k):
        """Test that relabeling the sources relabels the assignment"""
        x0, x1 = random_stacks(seed, k, 8, count=2)
        sigma = PermutationAssignment(tuple(np.random.default_rng(seed).permutation(k)))
        base = euclidean_assign(x0, x1)
        relabeled = euclidean_assign(x0, sigma.apply(x1))
        assert torch.allclose(relabeled.apply(sigma.apply(x1)), base.apply(x1))


class TestPIT:
    """Test permutation-invariant training assignment at t = 0"""

    def test_matches_exhaustive_search(self, tiny_net):
        """Test PIT against K! enumeration with a real network"""
        drift = WrappedDrift(tiny_net)
        for k in (2, 3):
            for seed in range(3):
                g = torch.Generator().manual_seed(seed)
                s = torch.randn(k, 480, generator=g, dtype=DTYPE)
                pair = make_pair(s, NoiseShaper.constant(480), g)
                with torch.no_grad():
                    v0 = drift(torch.zeros(1, dtype=DTYPE), pair.x0.unsqueeze(0), pair.cond.mean.unsqueeze(0))[0]
                expected = oracles.brute_force_pit(v0, pair.x0, pair.x1)
                assert pit_assign(drift, pair).perm == expected

    def test_zero_model_equals_euclidean(self):
        """Test that PIT under a zero drift reduces to the Euclidean assignment"""
        zero = WrappedDrift(lambda t, x, c: torch.zeros_like(x))
        for k in (2, 3, 4):
            for seed in range(50):
                pair = _pair(seed, k)
                assert pit_assign(zero, pair).perm == euclidean_assign(pair.x0, pair.x1).perm

    def test_pit_from_velocity_oracle(self):
        """Test pit_from_velocity against enumeration on random velocities"""
        for seed in range(50):
            v0, x0, x1 = random_stacks(seed, 4, 12, count=3)
            assert pit_from_velocity(v0, x0, x1).perm == oracles.brute_force_pit(v0, x0, x1)

    def test_no_gradient_through_choice(self, generator):
        """Test that PIT leaves no autograd graph on the model parameters"""
        weight = torch.zeros(2, 32, dtype=DTYPE, requires_grad=True)
        drift = WrappedDrift(lambda t, x, c: x * 0 + weight)
        pair = _pair(1, 2)
        pit_assign(drift, pair)
        assert weight.grad is None

    def test_too_many_sources(self):
        """Test that K > pit_max is refused with a pointer to Euclidean assignment"""
        drift = WrappedDrift(ConstantDrift(torch.zeros(5, 32, dtype=DTYPE)))
        with pytest.raises(ValidationError, match="euclidean"):
            pit_assign(drift, _pair(0, 5))


class TestOTCouple:
    """Test mini-batch conditional OT"""

    def test_matches_enumeration(self):
        """Test the batch matching against B! enumeration on 54 instances with B <= 6"""
        for b in (1, 2, 3, 4, 5, 6):
            for seed in range(9):
                pairs = [_pair(100 * seed + i, 2, 16) for i in range(b)]
                x0s = [p.x0 for p in pairs]
                x1s = [p.x1 for p in pairs]
                conds = [p.cond.mean for p in pairs]
                plan = ot_couple(x0s, x1s, conds, beta=0.5)
                match = tuple(j for _, j, _ in plan.pairs)
                ref_match, ref_cost = oracles.brute_force_ot(x0s, x1s, conds, beta=0.5)
                assert match == ref_match
                assert plan.total_cost == pytest.approx(ref_cost)

    def test_large_beta_keeps_own_mixture(self):
        """Test that a large beta pairs each noise with its own conditioning"""
        pairs = [_pair(i, 2, 16) for i in range(5)]
        plan = ot_couple([p.x0 for p in pairs], [p.x1 for p in pairs], [p.cond.mean for p in pairs], beta=1e4)
        assert [(i, j) for i, j, _ in plan.pairs] == [(i, i) for i in range(5)]

    def test_inner_permutations_are_euclidean(self):
        """Test that each matched pair keeps its Euclidean inner permutation"""
        pairs = [_pair(i, 3, 16) for i in range(3)]
        x0s, x1s = [p.x0 for p in pairs], [p.x1 for p in pairs]
        plan = ot_couple(x0s, x1s, [p.cond.mean for p in pairs])
        for i, j, perm in plan.pairs:
            assert perm == euclidean_assign(x0s[i], x1s[j]).perm

    def test_bounds(self):
        """Test batch size and beta limits"""
        p = _pair(0, 2, 16)
        with pytest.raises(ValidationError):
            ot_couple([], [], [])
        with pytest.raises(ValidationError):
            ot_couple([p.x0] * 3, [p.x1] * 3, [p.cond.mean] * 3, ot_max=2)
        with pytest.raises(ValidationError):
            ot_couple([p.x0], [p.x1], [p.cond.mean], beta=0.0)
