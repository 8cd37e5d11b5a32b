import numpy as np
import pytest

from motifx.errors import IngestError, SchemaError
from motifx.graph import (TemporalGraph, computational_graph, degree_spectrum,
                          generate_synthetic, ingest_csv, neighbor_events,
                          query_event)
from motifx.motifs import null_model

from conftest import random_graph
from oracles import brute_force_neighbor_events


def write_csv(tmp_path, text, name="g.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestIngest:
    def test_basic_rows(self, tmp_path):
        g, report = ingest_csv(write_csv(tmp_path, "a,b,1\nb,c,2\nc,d,3\n"))
        assert g.node_count == 4
        assert g.n_events == 3
        assert list(g.src) == [0, 1, 2]
        assert list(g.dst) == [1, 2, 3]
        assert report.rows_kept == 3

    def test_out_of_order_rows_sort_stably(self, tmp_path):
        g1, _ = ingest_csv(write_csv(tmp_path, "a,b,1\nb,c,2\nc,d,3\n", "s.csv"))
        g2, _ = ingest_csv(write_csv(tmp_path, "c,d,3\na,b,1\nb,c,2\n", "u.csv"))
        assert g1.to_json() == g2.to_json()

    def test_self_loop_skipped_with_warning(self, tmp_path):
        g, report = ingest_csv(write_csv(tmp_path, "a,b,1\na,a,5\n"))
        assert g.n_events == 1
        assert report.self_loops_skipped == 1
        assert "self-loop" in report.warnings[0]

    def test_malformed_row_names_line(self, tmp_path):
        with pytest.raises(IngestError, match="line 2"):
            ingest_csv(write_csv(tmp_path, "a,b,1\na,b,notatime\n"))

    def test_attr_width_mismatch(self, tmp_path):
        with pytest.raises(SchemaError, match="line 2"):
            ingest_csv(write_csv(tmp_path, "a,b,1,0.5\na,c,2\n"))

    def test_header_flag(self, tmp_path):
        g, _ = ingest_csv(write_csv(tmp_path, "u,v,t\na,b,1\n"), has_header=True)
        assert g.n_events == 1

    def test_attrs_round_trip_bit_exact(self, tmp_path):
        text = "a,b,1.25,0.1,0.30000000000000004\nb,c,2.5,-1e-9,3.14159\n"
        g, _ = ingest_csv(write_csv(tmp_path, text))
        blob = g.to_json()
        again = TemporalGraph.from_json(blob)
        assert again.to_json() == blob
        assert np.array_equal(again.t, g.t)
        assert np.array_equal(again.attrs, g.attrs)


class TestNeighborEvents:
    def test_chain_single_incident(self, chain_graph):
        assert list(neighbor_events(chain_graph, [3], 4.0)) == [2]

    def test_chain_two_nodes(self, chain_graph):
        assert list(neighbor_events(chain_graph, [1, 2], 3.0)) == [0, 1]

    def test_strict_cut(self, chain_graph):
        assert list(neighbor_events(chain_graph, [0], 1.0)) == []
        assert list(neighbor_events(chain_graph, [0], 1.0, strict=False)) == [0]

    @pytest.mark.parametrize("seed", range(25))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        g = random_graph(rng, duplicate_times=bool(seed % 2))
        nodes = rng.choice(g.node_count, size=int(rng.integers(1, 4)), replace=False)
        before = float(rng.uniform(0, g.n_events + 2))
        strict = bool(seed % 3)
        got = list(neighbor_events(g, nodes, before, strict))
        want = brute_force_neighbor_events(g, nodes, before, strict)
        assert got == want


class TestComputationalGraph:
    def test_chain_two_hops(self, chain_graph):
        sub = computational_graph(chain_graph, chain_graph.event(2), hops=2, per_hop_cap=20)
        assert sub.members == {0, 1}
        assert sub.hop_of == {1: 1, 0: 2}

    def test_chain_one_hop(self, chain_graph):
        sub = computational_graph(chain_graph, chain_graph.event(2), hops=1, per_hop_cap=20)
        assert sub.members == {1}

    def test_earliest_event_empty(self, chain_graph):
        sub = computational_graph(chain_graph, chain_graph.event(0), hops=2, per_hop_cap=20)
        assert len(sub) == 0

    @pytest.mark.parametrize("seed", range(10))
    def test_monotone_in_hops(self, seed):
        rng = np.random.default_rng(seed + 100)
        g = random_graph(rng, n_events=30)
        target = g.event(g.n_events - 1)
        prev = set()
        for hops in (1, 2, 3):
            got = computational_graph(g, target, hops=hops, per_hop_cap=5).members
            assert prev <= got
            prev = got

    def test_cap_limits_per_node(self):
        # star: node 0 interacts with 1..6; target is a fresh (0, 7) query
        g = TemporalGraph([0] * 6, [1, 2, 3, 4, 5, 6], np.arange(1.0, 7.0),
                         np.zeros((6, 0)), 8)
        sub = computational_graph(g, query_event(0, 7, 10.0), hops=1, per_hop_cap=3)
        assert sub.members == {3, 4, 5}  # three most recent


class TestSynthetic:
    def test_deterministic(self):
        a = generate_synthetic("uniform-random", 10, 50, seed=7)
        b = generate_synthetic("uniform-random", 10, 50, seed=7)
        assert a.to_json() == b.to_json()

    def test_triadic_wedge_fraction(self):
        g = generate_synthetic("triadic-closure", 30, 500, seed=3)
        adj: dict = {}
        closes = 0
        for i in range(g.n_events):
            u, v = int(g.src[i]), int(g.dst[i])
            if adj.get(u, set()) & adj.get(v, set()):
                closes += 1
            adj.setdefault(u, set()).add(v)
            adj.setdefault(v, set()).add(u)
        assert closes / g.n_events >= 0.6

    def test_preferential_attachment_hubs(self):
        g = generate_synthetic("preferential-attachment", 30, 500, seed=3)
        deg = np.bincount(np.concatenate([g.src, g.dst]), minlength=30)
        assert deg.max() > 2 * np.median(deg)

    def test_timestamps_strictly_increasing(self):
        g = generate_synthetic("uniform-random", 5, 40, seed=0)
        assert np.all(np.diff(g.t) > 0)

    def test_unknown_rule(self):
        with pytest.raises(ValueError):
            generate_synthetic("small-world", 10, 10, seed=0)


class TestDegreeSpectrum:
    def test_chain(self, chain_graph):
        assert degree_spectrum(chain_graph) == [2, 2, 1, 1]

    def test_empty(self):
        g = TemporalGraph([], [], [], np.zeros((0, 0)), 0)
        assert degree_spectrum(g) == []

    def test_null_model_preserves(self):
        g = generate_synthetic("uniform-random", 12, 80, seed=5)
        assert degree_spectrum(null_model(g, seed=1)) == degree_spectrum(g)
