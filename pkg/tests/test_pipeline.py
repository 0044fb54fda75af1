import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from locality_lab.graph import Dag
from locality_lab.infer import conditional
from locality_lab.obsdist import HeldOutPair, ObservationSpec, RadiusDistribution
from locality_lab.pipeline import (
    CorpusManifest,
    MalformedLineError,
    NetParams,
    Sample,
    TargetMismatchError,
    corpus_stats,
    generate_corpus,
    iter_corpus_blocks,
    observation_spec_from_dict,
    observation_spec_to_dict,
    parse_corpus,
    parse_sample,
    select_nets_and_pairs,
    serialize_sample,
)
from conftest import chain_dag, chain_net, random_net

# the worked example block from the training-data documentation
EXAMPLE_BLOCK = (
    "###\n"
    "target: X5\n"
    "X17=0\nX92=0\nX13=0\nX52=1\nX24=1\nX26=1\nX91=0\nX36=0\nX34=0\nX12=1\nX20=0\nX5=1\n"
)


class TestSerialization:
    def test_single_record(self):
        s = Sample(((1, 0),))
        assert serialize_sample(s) == "###\ntarget: X1\nX1=0\n"

    def test_worked_example_byte_exact(self):
        records = (
            (17, 0), (92, 0), (13, 0), (52, 1), (24, 1), (26, 1),
            (91, 0), (36, 0), (34, 0), (12, 1), (20, 0), (5, 1),
        )
        assert serialize_sample(Sample(records)) == EXAMPLE_BLOCK
        assert parse_sample(EXAMPLE_BLOCK) == Sample(records)

    def test_target_mismatch(self):
        with pytest.raises(TargetMismatchError):
            parse_sample("###\ntarget: X5\nX4=1\n")

    @pytest.mark.parametrize(
        "bad",
        [
            "target: X1\nX1=0\n",
            "###\nX1=0\n",
            "###\ntarget: X1\nX1=2\n",
            "###\ntarget: X1\nX1:0\n",
            "###\ntarget: X1\ngarbage\n",
            "###\ntarget: X1\n",
        ],
    )
    def test_malformed(self, bad):
        with pytest.raises(MalformedLineError):
            parse_sample(bad)

    @settings(max_examples=200)
    @given(
        st.lists(
            st.tuples(st.integers(0, 99), st.integers(0, 1)),
            min_size=1,
            max_size=15,
            unique_by=lambda r: r[0],
        )
    )
    def test_round_trip_property(self, records):
        sample = Sample(tuple(records))
        assert parse_sample(serialize_sample(sample)) == sample

    def test_corpus_block_iteration(self):
        text = EXAMPLE_BLOCK + "###\ntarget: X1\nX2=0\nX1=1\n"
        blocks = list(iter_corpus_blocks(text))
        assert len(blocks) == 2
        assert blocks[0] == EXAMPLE_BLOCK
        samples = list(parse_corpus(text))
        assert samples[1].target == 1


class TestGenerateCorpus:
    def test_single_variable_universe(self):
        net = chain_net(0.7, [])
        spec = ObservationSpec("local", net.dag, RadiusDistribution("geometric", 0.5), 0.0, ())
        samples = list(generate_corpus(net, spec, 5, seed=1))
        assert all(len(s.records) == 1 and s.target == 0 for s in samples)

    def test_target_is_last_and_no_duplicates(self):
        net = random_net(3, 12, 18)
        spec = ObservationSpec("local", net.dag, RadiusDistribution("geometric", 0.5), 0.2, ())
        for s in generate_corpus(net, spec, 2000, seed=2):
            assert s.records[-1][0] == s.target
            names = [v for v, _ in s.records]
            assert len(names) == len(set(names))

    def test_conditional_frequencies_match_exact(self):
        net = random_net(4, 12, 18)
        spec = ObservationSpec("local", net.dag, RadiusDistribution("geometric", 0.5), 0.2, ())
        counts: dict = {}
        for s in generate_corpus(net, spec, 100_000, seed=3):
            values = dict(s.records)
            for u, v in net.dag.edges:
                if u in values and v in values:
                    cell = counts.setdefault((u, v, values[u]), [0, 0])
                    cell[values[v]] += 1
        checked = 0
        for (u, v, vu), (n0, n1) in counts.items():
            if n0 + n1 < 5000:
                continue
            want = conditional(net, v, 1, {u: vu})
            assert abs(n1 / (n0 + n1) - want) < 0.02
            checked += 1
        assert checked >= 3

    def test_exclusion_holds(self):
        net = random_net(5, 12, 18)
        pairs = (HeldOutPair(0, 7), HeldOutPair(2, 9))
        spec = ObservationSpec("local", net.dag, RadiusDistribution("geometric", 0.5), 0.2, pairs)
        for s in generate_corpus(net, spec, 30_000, seed=4):
            assert not ({0, 7} <= s.variables or {2, 9} <= s.variables)

    def test_byte_identical_reruns_and_resume(self):
        net = random_net(6, 12, 18)
        spec = ObservationSpec("local", net.dag, RadiusDistribution("geometric", 0.5), 0.2, ())
        full = [serialize_sample(s) for s in generate_corpus(net, spec, 300, seed=5)]
        again = [serialize_sample(s) for s in generate_corpus(net, spec, 300, seed=5)]
        tail = [serialize_sample(s) for s in generate_corpus(net, spec, 300, seed=5, start=120)]
        assert full == again
        assert full[120:] == tail

    def test_fully_observed_lengths(self):
        net = random_net(7, 12, 14)
        pairs = (HeldOutPair(0, 5), HeldOutPair(1, 7), HeldOutPair(2, 9))
        assert len({v for p in pairs for v in (p.a, p.b)}) == 6  # disjoint
        spec = ObservationSpec(
            "fully_observed", net.dag, RadiusDistribution("geometric", 0.5), 0.2, pairs
        )
        for s in generate_corpus(net, spec, 500, seed=6):
            assert len(s.records) == 12 - 3

    def test_length_distribution_stable_across_seeds(self):
        net = random_net(8, 12, 18)
        spec = ObservationSpec("local", net.dag, RadiusDistribution("geometric", 0.5), 0.2, ())
        def lengths(seed):
            return np.array([len(s.records) for s in generate_corpus(net, spec, 100_000, seed=seed)])
        a, b = lengths(7), lengths(8)
        grid = np.arange(0, 14)
        ecdf_a = np.array([(a <= g).mean() for g in grid])
        ecdf_b = np.array([(b <= g).mean() for g in grid])
        assert np.max(np.abs(ecdf_a - ecdf_b)) < 0.02


class TestSelection:
    def test_desk_scale_report_consistency(self):
        report, selected = select_nets_and_pairs(10, 10, 5, 2, NetParams(10, 12), seed=50)
        assert report.candidate_count == 10
        assert len(selected) == 2
        mis = [s.mean_holdout_mi for s in selected]
        assert mis == sorted(mis, reverse=True)
        for s in selected:
            assert set(s.held_out) <= set(s.top_pairs)
            assert len(s.held_out) == 5
            for p in s.held_out:
                assert not s.net.dag.adjacent(p.a, p.b)

    def test_single_candidate_always_selected(self):
        report, selected = select_nets_and_pairs(1, 5, 2, 1, NetParams(8, 10), seed=51)
        assert report.chosen_net_ids == (0,)

    def test_holdout_larger_than_top_rejected(self):
        with pytest.raises(ValueError):
            select_nets_and_pairs(2, 3, 5, 1, NetParams(8, 10), seed=0)

    def test_deterministic(self):
        r1, s1 = select_nets_and_pairs(4, 6, 3, 2, NetParams(10, 12), seed=52)
        r2, s2 = select_nets_and_pairs(4, 6, 3, 2, NetParams(10, 12), seed=52)
        assert r1 == r2
        assert [s.net for s in s1] == [s.net for s in s2]
        assert [s.held_out for s in s1] == [s.held_out for s in s2]


class TestStatsAndManifest:
    def test_empty(self):
        stats = corpus_stats([])
        assert stats.n_samples == 0 and stats.n_records == 0 and stats.n_characters == 0

    def test_hand_counted(self):
        sample = Sample(((3, 1), (1, 0)))
        stats = corpus_stats([sample])
        text = serialize_sample(sample)
        assert stats.n_samples == 1
        assert stats.n_records == 2
        assert stats.n_characters == len(text)
        assert stats.variable_frequency == {1: 1, 3: 1}
        assert stats.pair_cooccurrence == {(1, 3): 1}

    def test_holdout_cooccurrence_zero(self):
        net = random_net(9, 12, 18)
        pairs = (HeldOutPair(0, 6),)
        spec = ObservationSpec("local", net.dag, RadiusDistribution("geometric", 0.5), 0.2, pairs)
        stats = corpus_stats(generate_corpus(net, spec, 20_000, seed=9))
        assert stats.pair_cooccurrence.get((0, 6), 0) == 0

    def test_manifest_round_trip(self):
        net = chain_net(0.4, [(0.2, 0.9)])
        spec = ObservationSpec(
            "local", net.dag, RadiusDistribution("zipf", 2.0, k_max=4), 0.2, (HeldOutPair(0, 1, 0.5),)
        )
        manifest = CorpusManifest("abc123", observation_spec_to_dict(spec), 100, 7)
        back = CorpusManifest.from_json(manifest.to_json())
        assert back == manifest
        spec_back = observation_spec_from_dict(back.spec, net.dag)
        assert spec_back == spec

    def test_wrong_local_spec_round_trip(self):
        data_dag = chain_dag(4)
        decoy = Dag(4, frozenset({(0, 2), (2, 1), (1, 3)}))
        spec = ObservationSpec("wrong_local", decoy, RadiusDistribution("geometric", 0.5), 0.2, ())
        back = observation_spec_from_dict(observation_spec_to_dict(spec), data_dag)
        assert back.locality_graph == decoy
