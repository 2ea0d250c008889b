import networkx as nx
import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import worklife as wl

from conftest import build_panel, panel_row


def panel_from_pairs(pairs):
    """pairs: iterable of (person_id, firm_id) incidences."""
    rows = []
    seen = {}
    for person, firm in pairs:
        year = 2000 + seen.get(person, 0)
        seen[person] = seen.get(person, 0) + 1
        rows.append(panel_row(person, year, firm_id=firm, log_monthly=1.0))
    return build_panel(rows)


def nx_components(pairs):
    """Firm components via networkx on the bipartite graph (oracle)."""
    g = nx.Graph()
    firms = set()
    for person, firm in pairs:
        firms.add(firm)
        g.add_edge(("w", person), ("f", firm))
    out = []
    for comp in nx.connected_components(g):
        out.append(frozenset(node[1] for node in comp if node[0] == "f"))
    return {c for c in out if c}


def uf_components(graph):
    comps = {}
    for firm, label in graph.component_of_firm.items():
        comps.setdefault(label, set()).add(firm)
    return {frozenset(v) for v in comps.values()}


class TestBuildGraph:
    def test_no_movers_means_one_component_per_firm(self):
        pairs = [(p, p) for p in range(1, 6)]
        graph = wl.build_graph(panel_from_pairs(pairs))
        assert graph.n_components == 5

    def test_single_link(self):
        graph = wl.build_graph(panel_from_pairs([(1, 10), (1, 11)]))
        assert graph.component_of_firm[10] == graph.component_of_firm[11]

    def test_chain_three_firms(self):
        pairs = [(1, 10), (1, 11), (2, 11), (2, 12)]
        graph = wl.build_graph(panel_from_pairs(pairs))
        assert uf_components(graph) == nx_components(pairs)
        assert graph.n_components == 1
        assert graph.component_sizes[0].n_firms == 3

    def test_empty_panel(self):
        rows = [panel_row(1, 2000, firm_id=None)]
        graph = wl.build_graph(build_panel(rows))
        assert graph.n_components == 0
        assert graph.histogram().empty

    def test_matches_bfs_on_random_graphs(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            n_firms = int(rng.integers(2, 30))
            n_workers = int(rng.integers(1, 40))
            n_edges = int(rng.integers(1, 80))
            pairs = {
                (int(rng.integers(1, n_workers + 1)), int(rng.integers(1, n_firms + 1)))
                for _ in range(n_edges)
            }
            graph = wl.build_graph(panel_from_pairs(sorted(pairs)))
            assert uf_components(graph) == nx_components(pairs)

    @given(st.sets(st.tuples(st.integers(1, 25), st.integers(1, 12)), min_size=1, max_size=60))
    @settings(max_examples=60, deadline=None)
    def test_matches_bfs_property(self, pairs):
        graph = wl.build_graph(panel_from_pairs(sorted(pairs)))
        assert uf_components(graph) == nx_components(pairs)

    def test_adding_edge_never_increases_components(self):
        rng = np.random.default_rng(11)
        pairs = []
        previous = None
        for step in range(40):
            pairs.append((int(rng.integers(1, 12)), int(rng.integers(1, 10))))
            count = wl.build_graph(panel_from_pairs(set(pairs))).n_components
            n_firms = len({f for _, f in pairs})
            isolated = 0  # all firms here appear in an edge
            if previous is not None and n_firms == previous[1]:
                assert count <= previous[0]
            previous = (count, n_firms)


class TestLargestConnectedSet:
    def test_single_component_identity(self):
        pairs = [(1, 10), (1, 11), (2, 11)]
        panel = panel_from_pairs(pairs)
        graph = wl.build_graph(panel)
        out = wl.largest_connected_set(panel, graph)
        pd.testing.assert_frame_equal(out.df, panel.df)
        assert out.metadata["connected_set_report"]["dropped_obs"] == 0.0

    def test_isolated_firm_dropped(self):
        pairs = [(1, 10), (1, 11), (2, 11), (3, 12)]
        panel = panel_from_pairs(pairs)
        graph = wl.build_graph(panel)
        out = wl.largest_connected_set(panel, graph)
        assert set(out.df["firm_id"].astype(int)) == {10, 11}
        assert out.metadata["connected_set_report"]["dropped_firms"] == pytest.approx(1 / 3)

    def test_tie_broken_by_more_firms(self):
        # Component A: two firms, two obs. Component B: one firm, two obs.
        pairs = [(1, 10), (1, 11), (2, 20), (3, 20)]
        panel = panel_from_pairs(pairs)
        graph = wl.build_graph(panel)
        assert graph.component_of_firm[10] == 0
        assert graph.component_of_firm[20] == 1

    def test_tie_broken_by_smallest_firm_id(self):
        pairs = [(1, 10), (2, 10), (3, 5), (4, 5)]
        graph = wl.build_graph(panel_from_pairs(pairs))
        assert graph.component_of_firm[5] == 0

    def test_idempotent(self):
        pairs = [(1, 10), (1, 11), (2, 11), (3, 12), (4, 12)]
        panel = panel_from_pairs(pairs)
        once = wl.largest_connected_set(panel, wl.build_graph(panel))
        twice = wl.largest_connected_set(once, wl.build_graph(once))
        pd.testing.assert_frame_equal(once.df, twice.df)
