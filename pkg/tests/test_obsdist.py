import numpy as np
import pytest

from locality_lab.graph import Dag, generate_dag, undirected_neighborhood
from locality_lab.obsdist import (
    HeldOutPair,
    ObservationSpec,
    RadiusDistribution,
    apply_dropout_and_holdout,
    graph_diameter,
    sample_radius,
    select_variables,
    select_with_details,
    verify_exclusion,
)
from locality_lab.rng import make_rng

from conftest import chain_dag


class TestRadiusDistribution:
    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            RadiusDistribution("geometric", 0.0)
        with pytest.raises(ValueError):
            RadiusDistribution("zipf", 2.0)  # missing k_max
        with pytest.raises(ValueError):
            RadiusDistribution("zipf", 1.0, k_max=5)
        with pytest.raises(ValueError):
            RadiusDistribution("poisson", 1.0)

    def test_geometric_p1_always_one(self):
        dist = RadiusDistribution("geometric", 1.0)
        rng = make_rng(0)
        assert all(sample_radius(dist, rng) == 1 for _ in range(100))

    def test_geometric_mean(self):
        dist = RadiusDistribution("geometric", 0.5)
        rng = make_rng(1)
        draws = np.array([sample_radius(dist, rng) for _ in range(100_000)])
        assert draws.min() >= 1
        assert abs(draws.mean() - 2.0) < 0.05

    def test_zipf_head_probability(self):
        dist = RadiusDistribution("zipf", 2.0, k_max=20)
        expected_p1 = 1.0 / sum(k**-2.0 for k in range(1, 21))
        rng = make_rng(2)
        draws = np.array([sample_radius(dist, rng) for _ in range(100_000)])
        assert draws.min() >= 1 and draws.max() <= 20
        assert abs((draws == 1).mean() - expected_p1) < 0.01


class TestSelectVariables:
    def test_whole_graph_with_no_removal(self):
        dag = chain_dag(6)
        spec = ObservationSpec(
            "local", dag, RadiusDistribution("geometric", 1.0), 0.0, ()
        )
        # radius 1 on a chain never covers everything; use a star instead
        star = Dag(5, frozenset({(0, 1), (0, 2), (0, 3), (0, 4)}))
        spec = ObservationSpec("local", star, RadiusDistribution("geometric", 1.0), 0.0, ())
        seen_all = 0
        rng = make_rng(3)
        for _ in range(50):
            got = select_variables(spec, rng)
            if got == set(range(5)):
                seen_all += 1
        assert seen_all > 0  # whenever the center lands on the hub

    def test_chain_center_radius_forced(self):
        dag = chain_dag(5)
        spec = ObservationSpec("local", dag, RadiusDistribution("geometric", 1.0), 0.0, ())
        rng = make_rng(4)
        for _ in range(200):
            center, k, got = select_with_details(spec, rng)
            assert k == 1
            assert got == undirected_neighborhood(dag, center, 1)

    def test_held_out_pair_fair_coin(self):
        members = {1, 2, 3}
        pair = (HeldOutPair(1, 2),)
        rng = make_rng(5)
        kept_a = 0
        for _ in range(10_000):
            kept = apply_dropout_and_holdout(members, 0.0, pair, rng)
            assert not (1 in kept and 2 in kept)
            assert len(kept & {1, 2}) == 1
            kept_a += 1 in kept
        assert abs(kept_a / 10_000 - 0.5) < 0.02

    def test_subset_of_neighborhood(self):
        dag = generate_dag(15, 22, make_rng(6))
        spec = ObservationSpec("local", dag, RadiusDistribution("geometric", 0.5), 0.2, ())
        rng = make_rng(7)
        for _ in range(2000):
            center, k, got = select_with_details(spec, rng)
            assert got <= undirected_neighborhood(dag, center, k)

    def test_wrong_local_uses_locality_graph(self):
        data_dag = chain_dag(8)
        decoy = Dag(8, frozenset({(0, 7), (7, 3), (3, 5), (5, 1), (1, 6), (6, 2), (2, 4)}))
        spec = ObservationSpec("wrong_local", decoy, RadiusDistribution("geometric", 1.0), 0.0, ())
        rng = make_rng(8)
        for _ in range(500):
            center, k, got = select_with_details(spec, rng)
            assert got == undirected_neighborhood(decoy, center, k)

    def test_fully_observed_drops_one_per_pair(self):
        dag = chain_dag(10)
        pairs = (HeldOutPair(0, 4), HeldOutPair(2, 7))
        spec = ObservationSpec("fully_observed", dag, RadiusDistribution("geometric", 0.5), 0.2, pairs)
        rng = make_rng(9)
        for _ in range(500):
            got = select_variables(spec, rng)
            assert len(got) == 8  # disjoint pairs: exactly one removed from each
            for p in pairs:
                assert not (p.a in got and p.b in got)

    def test_dropout_fraction(self):
        members = set(range(50))
        rng = make_rng(10)
        removed = 0
        trials = 2000  # 100k member decisions
        for _ in range(trials):
            kept = apply_dropout_and_holdout(members, 0.2, (), rng)
            removed += 50 - len(kept)
        assert abs(removed / (50 * trials) - 0.2) < 0.01

    def test_dropout_validation(self):
        with pytest.raises(ValueError):
            ObservationSpec("local", chain_dag(3), RadiusDistribution("geometric", 0.5), 1.0, ())


class TestVerifyExclusion:
    def test_constructed_corpus_clean(self):
        dag = chain_dag(8)
        pairs = (HeldOutPair(1, 5), HeldOutPair(2, 6))
        spec = ObservationSpec("local", dag, RadiusDistribution("geometric", 0.5), 0.2, pairs)
        rng = make_rng(11)
        subsets = [select_variables(spec, rng) for _ in range(20_000)]
        assert verify_exclusion(subsets, pairs) == 0

    def test_hand_built_violation(self):
        pairs = (HeldOutPair(1, 5),)
        assert verify_exclusion([{1, 5, 7}], pairs) == 1
        assert verify_exclusion([{1, 7}, {5}], pairs) == 0


def test_graph_diameter():
    assert graph_diameter(chain_dag(5)) == 4
    assert graph_diameter(Dag(3, frozenset())) == 1
