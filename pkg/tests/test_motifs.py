import time

import numpy as np
import pytest

from motifx.errors import EnumerationLimitError
from motifx.graph import TemporalGraph, generate_synthetic, neighbor_events
from motifx.motifs import (MotifInstance, anchor_time, census, code_alphabet,
                           empirical_class_probs, enumerate_motifs, graph_census,
                           motif_code, null_class_probs, null_model, sample_motifs,
                           sample_motifs_tree, total_variation)

from conftest import random_graph
from oracles import anchored_equivalent, enumerate_reference, validate_instance


def inst(anchor, pairs, times, t0=100.0, truncated=False):
    return MotifInstance(anchor=anchor, t0=t0, event_ids=tuple(range(len(pairs))),
                         pairs=tuple(pairs), times=tuple(times), truncated=truncated)


class TestSampling:
    def test_chain_unique_trajectory(self, chain_graph):
        out = sample_motifs(chain_graph, 3, 4.0, n=4, l=3, c=5, seed=1)
        assert len(out) == 5
        assert all(m.event_ids == (2, 1, 0) for m in out)
        assert all(not m.truncated for m in out)

    def test_chain_single_event(self, chain_graph):
        out = sample_motifs(chain_graph, 3, 4.0, n=4, l=1, c=5, seed=1)
        assert all(m.event_ids == (2,) for m in out)

    def test_no_history_returns_empty(self, chain_graph):
        assert sample_motifs(chain_graph, 0, 1.0, n=3, l=3, c=5, seed=0) == []

    def test_deterministic_given_seed(self):
        g = generate_synthetic("uniform-random", 10, 60, seed=2)
        a = sample_motifs(g, 3, 61.0, n=3, l=3, c=50, seed=9)
        b = sample_motifs(g, 3, 61.0, n=3, l=3, c=50, seed=9)
        assert a == b

    def test_delta_window_respected(self):
        g = generate_synthetic("uniform-random", 8, 50, seed=4)
        out = sample_motifs(g, 2, 51.0, n=3, l=3, c=200, seed=1, delta=5.0)
        for m in out:
            assert 51.0 - m.times[-1] <= 5.0

    @pytest.mark.parametrize("seed", range(12))
    def test_sampled_instances_are_valid(self, seed):
        rng = np.random.default_rng(seed)
        g = random_graph(rng, n_events=35)
        u0 = int(rng.integers(g.node_count))
        t0 = float(g.n_events + 1)
        delta = None if seed % 2 else float(rng.integers(5, 40))
        for m in sample_motifs(g, u0, t0, n=3, l=3, c=60, seed=seed, delta=delta):
            assert validate_instance(g, m, u0, t0, 3, 3, delta) == []


class TestTreeSampling:
    def test_single_level(self, chain_graph):
        out = sample_motifs_tree(chain_graph, 3, 4.0, n=4, l=1, fanout=[5], seed=0)
        assert len(out) == 5
        assert all(m.event_ids == (2,) for m in out)

    def test_two_levels_product(self, chain_graph):
        out = sample_motifs_tree(chain_graph, 3, 4.0, n=4, l=2, fanout=[2, 2], seed=0)
        assert len(out) == 4
        assert all(m.event_ids == (2, 1) for m in out)

    def test_dead_end_truncated_once(self, chain_graph):
        # l=3 with n=3 needs fanout of n-1=2 entries plus one completion step
        out = sample_motifs_tree(chain_graph, 3, 4.0, n=3, l=3, fanout=[2, 2], seed=0)
        assert len(out) == 4
        # n=3 budget stops at {d,c,b}: (a,b,1) is outside, so all truncate at length 2
        assert all(m.truncated and len(m) == 2 for m in out)

    def test_fanout_length_validated(self, chain_graph):
        with pytest.raises(ValueError):
            sample_motifs_tree(chain_graph, 3, 4.0, n=4, l=2, fanout=[2, 2, 2], seed=0)

    def test_same_support_as_sequential(self):
        g = generate_synthetic("uniform-random", 6, 25, seed=3)
        t0 = 26.0
        seq = {m for m in sample_motifs(g, 1, t0, n=3, l=3, c=20_000, seed=0)}
        tree = {m for m in sample_motifs_tree(g, 1, t0, n=3, l=3, fanout=[40, 40], seed=0)}
        enum = set(enumerate_motifs(g, 1, t0, n=3, l=3))
        assert seq == enum
        assert tree <= enum


class TestEnumeration:
    def test_chain_exactly_one(self, chain_graph):
        out = enumerate_motifs(chain_graph, 3, 4.0, n=4, l=3)
        assert len(out) == 1
        assert out[0].event_ids == (2, 1, 0)

    def test_triangle_instances(self, triangle_graph):
        # anchored at a: one full trajectory plus two dead-ended prefixes
        out = enumerate_motifs(triangle_graph, 0, 4.0, n=3, l=3)
        by_len = sorted((len(m), m.truncated) for m in out)
        assert by_len == [(1, True), (2, True), (3, False)]
        full = [m for m in out if not m.truncated][0]
        assert full.event_ids == (2, 1, 0)

    def test_single_event_count_matches_neighborhood(self):
        g = generate_synthetic("uniform-random", 8, 40, seed=1)
        t0 = 30.5
        out = enumerate_motifs(g, 2, t0, n=3, l=1)
        assert len(out) == len(neighbor_events(g, [2], t0))

    def test_size_guard(self):
        g = generate_synthetic("uniform-random", 10, 300, seed=0)
        with pytest.raises(EnumerationLimitError):
            enumerate_motifs(g, 0, 301.0, n=3, l=3, max_events=200)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_reference_enumeration(self, seed):
        rng = np.random.default_rng(seed + 50)
        g = random_graph(rng, n_events=20)
        u0 = int(rng.integers(g.node_count))
        t0 = float(g.n_events + 1)
        got = {(m.event_ids, m.truncated) for m in enumerate_motifs(g, u0, t0, n=3, l=3)}
        want = set(enumerate_reference(g, u0, t0, n=3, l=3))
        assert got == want

    @pytest.mark.parametrize("seed", range(8))
    def test_sampler_support_equals_enumeration(self, seed):
        rng = np.random.default_rng(seed + 200)
        g = random_graph(rng, n_events=18)
        u0 = int(rng.integers(g.node_count))
        t0 = float(g.n_events + 1)
        enum = set(enumerate_motifs(g, u0, t0, n=3, l=3))
        if len(enum) > 25:
            pytest.skip("support too large for exhaustive sampling comparison")
        sampled = set(sample_motifs(g, u0, t0, n=3, l=3, c=10_000, seed=seed))
        assert sampled == enum


class TestMotifCode:
    def test_repeated_interactions(self):
        m = inst(5, [(5, 9), (5, 9), (9, 5)], [30.0, 20.0, 10.0])
        assert motif_code(m) == "010101"

    def test_two_event_path(self):
        m = inst(5, [(5, 9), (9, 7)], [30.0, 20.0], truncated=True)
        assert motif_code(m) == "0112"

    def test_single_event(self):
        m = inst(5, [(5, 9)], [30.0], truncated=True)
        assert motif_code(m) == "01"

    def test_anchor_is_label_zero(self):
        # same pair, anchored at the other endpoint: still 01
        assert motif_code(inst(9, [(5, 9)], [30.0], truncated=True)) == "01"

    def test_triangle_closure_code(self):
        m = inst(1, [(1, 2), (2, 3), (3, 1)], [30.0, 20.0, 10.0])
        assert motif_code(m) == "011202"

    def test_known_both_endpoints_smaller_label_first(self):
        m = inst(1, [(1, 2), (2, 3), (2, 3)], [30.0, 20.0, 10.0])
        assert motif_code(m) == "011212"

    @pytest.mark.parametrize("seed", range(6))
    def test_code_equality_iff_anchored_isomorphism(self, seed):
        rng = np.random.default_rng(seed + 300)
        g = random_graph(rng, n_events=14)
        insts = []
        for u0 in range(g.node_count):
            insts.extend(enumerate_motifs(g, u0, float(g.n_events + 1), n=3, l=3))
        insts = insts[:40]
        for i, a in enumerate(insts):
            for b in insts[i + 1:]:
                same_code = motif_code(a) == motif_code(b)
                assert same_code == anchored_equivalent(a, b), (a, b)


class TestAlphabet:
    def test_twelve_classes_up_to_three_events(self):
        assert len(code_alphabet(3, 3)) == 12

    def test_three_classes_for_two_events(self):
        assert code_alphabet(3, 2) == ["0101", "0102", "0112"]

    def test_three_event_codes_extend_two_event_codes(self):
        a2 = set(code_alphabet(3, 2))
        a3 = set(code_alphabet(3, 3)) - a2
        assert len(a3) == 9
        assert all(code[:4] in a2 for code in a3)

    def test_four_node_alphabet_grows(self):
        assert len(code_alphabet(4, 3)) > 12


class TestCensus:
    def test_identical_instances_single_class(self):
        m = inst(5, [(5, 9), (9, 7)], [30.0, 20.0], truncated=True)
        cen = census([m] * 5)
        assert cen.counts == {"0112": 5}
        assert cen.probs == {"0112": 1.0}

    def test_single_event_instances_skipped(self):
        short = inst(5, [(5, 9)], [30.0], truncated=True)
        cen = census([short])
        assert cen.is_empty
        assert cen.skipped_short == 1
        assert cen.probs == {}

    def test_rich_graph_probs_sum_to_one(self):
        g = generate_synthetic("uniform-random", 8, 60, seed=0)
        cen = graph_census(g, 3, 3, c_per_node=10, seed=0)
        assert sum(cen.probs.values()) == pytest.approx(1.0, abs=1e-12)

    def test_census_json_round_trip(self):
        import json
        m = inst(5, [(5, 9), (9, 7)], [30.0, 20.0], truncated=True)
        payload = json.loads(census([m, m]).to_json())
        assert payload["classes"]["0112"] == {"count": 2, "prob": 1.0}


class TestNullModel:
    @pytest.mark.parametrize("seed", range(5))
    def test_preserves_spectrum_and_times(self, seed):
        g = generate_synthetic("preferential-attachment", 15, 120, seed=seed)
        shuffled = null_model(g, seed=seed)
        assert np.array_equal(np.sort(shuffled.t), np.sort(g.t))
        assert shuffled.n_events == g.n_events
        deg = lambda gr: sorted(np.bincount(np.concatenate([gr.src, gr.dst]),
                                            minlength=gr.node_count).tolist())
        assert deg(shuffled) == deg(g)

    def test_single_event_graph_unchanged(self):
        g = TemporalGraph([0], [1], [5.0], np.zeros((1, 0)), 2)
        shuffled = null_model(g, seed=3)
        assert shuffled.to_json() == g.to_json()

    def test_endpoint_multiset_kept_per_pair(self):
        g = generate_synthetic("uniform-random", 10, 60, seed=1)
        shuffled = null_model(g, seed=7)
        pairs = lambda gr: sorted((min(a, b), max(a, b)) for a, b in zip(gr.src, gr.dst))
        assert pairs(shuffled) == pairs(g)


class TestClassProbs:
    def test_smoothing_keeps_everything_positive(self):
        g = generate_synthetic("uniform-random", 10, 60, seed=2)
        probs = null_class_probs(g, 3, 3, c_per_node=5, seed=0)
        assert set(probs) == set(code_alphabet(3, 3))
        assert all(p > 0 for p in probs.values())

    def test_probs_sum_to_one(self):
        g = generate_synthetic("uniform-random", 10, 60, seed=2)
        probs = null_class_probs(g, 3, 3, c_per_node=5, seed=0)
        assert sum(probs.values()) == pytest.approx(1.0, abs=1e-12)

    def test_uniform_graph_close_to_own_null(self):
        g = generate_synthetic("uniform-random", 30, 600, seed=3)
        emp = empirical_class_probs(g, 3, 3, c_per_node=40, seed=0)
        nul = null_class_probs(g, 3, 3, c_per_node=40, seed=0)
        assert total_variation(emp, nul) < 0.1


def test_anchor_time_sees_last_event():
    g = TemporalGraph([0, 0], [1, 2], [1.0, 5.0], np.zeros((2, 0)), 3)
    t0 = anchor_time(g, 0)
    assert t0 > 5.0
    assert len(neighbor_events(g, [0], t0)) == 2


def test_sampling_cost_scales_about_linearly_in_c():
    """Trend report only: doubling C should roughly double sampling time."""
    g = generate_synthetic("uniform-random", 20, 150, seed=1)
    t0 = float(g.n_events + 1)
    sample_motifs(g, 0, t0, n=3, l=3, c=500, seed=0)  # warm the candidate cache
    timings = []
    for c in (2000, 4000, 8000):
        start = time.perf_counter()
        sample_motifs(g, 0, t0, n=3, l=3, c=c, seed=0)
        timings.append(time.perf_counter() - start)
    r1 = timings[1] / timings[0]
    r2 = timings[2] / timings[1]
    print(f"\nsampling time ratios for C doublings: {r1:.2f}, {r2:.2f} "
          f"(times: {['%.3fs' % t for t in timings]})")
