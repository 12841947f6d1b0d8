import itertools

import numpy as np
import pytest

from sinkbisim.aggregate import (
    Abstraction,
    build_abstract_view,
    epsilon_aggregate,
    lift_values,
    pam_partition,
    pam_total_cost,
)
from sinkbisim.mdp import StochasticPolicy, evaluate_markov_chain, policy_evaluation
from sinkbisim.envgen import gen_ring_sparse
from conftest import random_mdp, random_metric, random_policy


class TestEpsilonAggregate:
    def test_huge_epsilon_one_partition(self, rng):
        d = random_metric(rng, 8)
        agg = epsilon_aggregate(d, d.max() + 1.0)
        assert agg.num_partitions == 1
        assert np.all(agg.labels == 0)

    def test_zero_epsilon_singletons(self, rng):
        d = random_metric(rng, 8) + 0.1
        np.fill_diagonal(d, 0.0)
        agg = epsilon_aggregate(d, 0.0)
        assert agg.num_partitions == 8

    def test_hand_traced_three_states(self):
        # states 0 and 1 are 0.05 apart, state 2 is far; eps = 0.1
        d = np.array([[0.0, 0.05, 1.0], [0.05, 0.0, 1.0], [1.0, 1.0, 0.0]])
        agg = epsilon_aggregate(d, 0.1)
        assert agg.num_partitions == 2
        assert agg.labels[0] == agg.labels[1] != agg.labels[2]
        assert agg.medoids[0] == 0  # ties break to the lowest index

    def test_medoid_radius_property(self, rng):
        for _ in range(5):
            d = random_metric(rng, 12)
            eps = 0.3
            agg = epsilon_aggregate(d, eps)
            for s in range(12):
                assert d[agg.medoids[agg.labels[s]], s] <= eps
            # hence any two members of a partition are within 2 eps
            for a, b in itertools.combinations(range(12), 2):
                if agg.labels[a] == agg.labels[b]:
                    assert d[a, b] <= 2 * eps + 1e-12

    def test_partition_count_antitone_in_epsilon(self, rng):
        d = random_metric(rng, 15)
        counts = [
            epsilon_aggregate(d, eps).num_partitions
            for eps in (0.0, 0.05, 0.1, 0.2, 0.4, 1.0)
        ]
        assert all(x >= y for x, y in zip(counts, counts[1:]))


class TestPam:
    def test_full_budget_zero_cost(self, rng):
        d = random_metric(rng, 6)
        agg = pam_partition(d, 6)
        assert agg.num_partitions == 6
        assert pam_total_cost(d, agg) == 0.0

    def test_recovers_separated_clusters(self, rng):
        # two blobs far apart; brute force over all medoid pairs agrees
        pts = np.concatenate([rng.random((5, 2)), rng.random((5, 2)) + 10.0])
        d = np.linalg.norm(pts[:, None] - pts[None, :], axis=-1)
        agg = pam_partition(d, 2)
        assert agg.num_partitions == 2
        assert len(set(agg.labels[:5])) == 1
        assert len(set(agg.labels[5:])) == 1
        best = min(
            sum(min(d[m1, s], d[m2, s]) for s in range(10))
            for m1, m2 in itertools.combinations(range(10), 2)
        )
        assert pam_total_cost(d, agg) == pytest.approx(best)

    def test_swap_descent_improves_on_build(self, rng):
        from sinkbisim.aggregate import _pam_build

        d = random_metric(rng, 20)
        agg = pam_partition(d, 4)
        build_medoids = _pam_build(d, 4)
        build_cost = d[build_medoids].min(axis=0).sum()
        assert pam_total_cost(d, agg) <= build_cost + 1e-12

    def test_deterministic(self, rng):
        d = random_metric(rng, 15)
        a = pam_partition(d, 5, seed=0)
        b = pam_partition(d, 5, seed=99)
        assert np.array_equal(a.labels, b.labels)

    def test_rejects_bad_budget(self, rng):
        d = random_metric(rng, 4)
        with pytest.raises(ValueError):
            pam_partition(d, 5)


class TestAbstractView:
    def test_identity_abstraction_is_ground(self, rng):
        mdp = random_mdp(rng, 6, 2)
        pol = random_policy(rng, 6, 2)
        agg = Abstraction(np.arange(6), np.arange(6))
        view = build_abstract_view(mdp, pol, agg)
        from sinkbisim.mdp import expected_reward, policy_transition

        assert np.allclose(view.rewards, expected_reward(mdp, pol))
        assert np.allclose(view.transitions, policy_transition(mdp, pol))

    def test_single_partition(self, rng):
        mdp = random_mdp(rng, 5, 2)
        pol = random_policy(rng, 5, 2)
        agg = Abstraction(np.zeros(5, dtype=int), np.array([0]))
        view = build_abstract_view(mdp, pol, agg)
        from sinkbisim.mdp import expected_reward

        assert view.rewards[0] == pytest.approx(expected_reward(mdp, pol).mean())
        assert view.transitions == pytest.approx(np.array([[1.0]]))

    def test_ring_family_reduces_exactly(self):
        # EC-constant policies on the ring family admit an exact reduction:
        # abstract evaluation lifted equals ground evaluation.
        gen = gen_ring_sparse(num_states=40, m=4, seed=5)
        mdp = gen.mdp
        pol = StochasticPolicy.uniform(40, 2)
        agg = Abstraction(gen.ec_labels, np.arange(0, 40, 10))
        view = build_abstract_view(mdp, pol, agg)
        v_abs = evaluate_markov_chain(view.rewards, view.transitions, mdp.discount)
        lifted = lift_values(v_abs, agg)
        assert np.abs(lifted - policy_evaluation(mdp, pol)).max() < 1e-8
        # EC-level dynamics are deterministic for each action, so the
        # abstract chain rows are two-point mixtures of the uniform policy.
        assert np.allclose(np.sort(view.transitions, axis=1)[:, :-2], 0.0, atol=1e-12)


class TestLiftValues:
    def test_identity(self, rng):
        vals = rng.random(5)
        agg = Abstraction(np.arange(5), np.arange(5))
        assert np.allclose(lift_values(vals, agg), vals)

    def test_constant(self):
        agg = Abstraction(np.zeros(4, dtype=int), np.array([0]))
        assert np.allclose(lift_values(np.array([3.7]), agg), 3.7)

    def test_rejects_wrong_length(self):
        agg = Abstraction(np.zeros(4, dtype=int), np.array([0]))
        with pytest.raises(ValueError):
            lift_values(np.array([1.0, 2.0]), agg)


class TestAbstractionType:
    def test_rejects_gap_in_labels(self):
        with pytest.raises(ValueError):
            Abstraction(np.array([0, 2, 2]), np.array([0, 1, 2]))

    def test_indicator_one_hot(self):
        agg = Abstraction(np.array([0, 1, 0]), np.array([0, 1]))
        phi = agg.indicator()
        assert phi.shape == (2, 3)
        assert np.allclose(phi.sum(axis=0), 1.0)
        assert np.array_equal(agg.sizes(), [2, 1])
