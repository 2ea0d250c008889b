"""
Worker-firm mobility graph and connected components.

Firm effects are only comparable within a set of firms linked by worker
moves, so estimation is restricted to the largest connected component of
the firm projection: two firms are connected when some worker was employed
at both (in any pair of years).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .panel import Panel


class UnionFind:
    """Disjoint sets over dense integer ids, path compression + union by size."""

    def __init__(self, n: int):
        self.parent = np.arange(n, dtype=np.int64)
        self.size = np.ones(n, dtype=np.int64)
        self.n_components = n

    def find(self, a: int) -> int:
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        self.n_components -= 1

    def roots(self) -> np.ndarray:
        return np.array([self.find(i) for i in range(len(self.parent))], dtype=np.int64)


@dataclass(frozen=True)
class ComponentStats:
    n_firms: int
    n_workers: int
    n_obs: int


@dataclass(frozen=True)
class MobilityGraph:
    """Bipartite worker-firm incidence structure with firm components.

    Component labels are dense integers sorted by descending observation
    count; ties break by more firms, then by the smallest firm_id in the
    component, so label 0 is always the same component for the same data.
    """

    firm_nodes: frozenset
    worker_nodes: frozenset
    edges: frozenset  # unique (person_id, firm_id) incidences
    component_of_firm: dict
    component_sizes: dict

    @property
    def n_components(self) -> int:
        return len(self.component_sizes)

    def component_of_worker(self) -> dict:
        """Map person_id -> component label (all of a worker's firms share one)."""
        out = {}
        for person, firm in self.edges:
            out[person] = self.component_of_firm[firm]
        return out

    def histogram(self) -> pd.DataFrame:
        rows = [
            {
                "component": label,
                "n_firms": stats.n_firms,
                "n_workers": stats.n_workers,
                "n_obs": stats.n_obs,
            }
            for label, stats in sorted(self.component_sizes.items())
        ]
        return pd.DataFrame(rows, columns=["component", "n_firms", "n_workers", "n_obs"])


def build_graph(panel: Panel) -> MobilityGraph:
    """Build the mobility graph of a filtered panel.

    Components are computed with union-find on the firm projection: all
    firms a worker ever appears at are merged. Rows without a firm are
    ignored. An empty panel yields an empty graph.
    """
    df = panel.df
    employed = df[df["firm_id"].notna()]
    if employed.empty:
        return MobilityGraph(frozenset(), frozenset(), frozenset(), {}, {})

    persons = employed["person_id"].to_numpy()
    firms = employed["firm_id"].to_numpy(dtype=np.int64)
    firm_ids, firm_idx = np.unique(firms, return_inverse=True)

    uf = UnionFind(len(firm_ids))
    # Rows are sorted by (person, year); link each worker's firms in a chain.
    same_person = persons[1:] == persons[:-1]
    for i in np.nonzero(same_person)[0]:
        uf.union(firm_idx[i], firm_idx[i + 1])

    roots = uf.roots()

    pairs = pd.DataFrame({"person_id": persons, "firm_id": firms}).drop_duplicates()
    root_of_firm = dict(zip(firm_ids, roots))

    obs_per_root = np.bincount(roots[firm_idx], minlength=len(firm_ids))
    firms_per_root = np.bincount(roots, minlength=len(firm_ids))
    workers_per_root = (
        pairs.assign(root=pairs["firm_id"].map(root_of_firm))
        .groupby("root")["person_id"]
        .nunique()
    )
    min_firm_per_root = pd.Series(firm_ids).groupby(roots).min()

    order = sorted(
        set(roots.tolist()),
        key=lambda r: (-int(obs_per_root[r]), -int(firms_per_root[r]), int(min_firm_per_root[r])),
    )
    label_of_root = {root: label for label, root in enumerate(order)}

    component_of_firm = {int(f): label_of_root[root_of_firm[f]] for f in firm_ids}
    component_sizes = {
        label_of_root[r]: ComponentStats(
            n_firms=int(firms_per_root[r]),
            n_workers=int(workers_per_root[r]),
            n_obs=int(obs_per_root[r]),
        )
        for r in order
    }
    edges = frozenset((int(p), int(f)) for p, f in pairs.itertuples(index=False))
    return MobilityGraph(
        firm_nodes=frozenset(int(f) for f in firm_ids),
        worker_nodes=frozenset(int(p) for p in pairs["person_id"].unique()),
        edges=edges,
        component_of_firm=component_of_firm,
        component_sizes=component_sizes,
    )


def largest_connected_set(panel: Panel, graph: MobilityGraph) -> Panel:
    """Keep only person-years whose firm lies in component 0.

    The dropped shares of firms, workers and observations are recorded in
    the returned panel's metadata under ``connected_set_report``.
    """
    df = panel.df
    if not graph.component_sizes:
        return panel.with_df(df, connected_set_report={"dropped_firms": 0.0, "dropped_workers": 0.0, "dropped_obs": 0.0})

    comp = df["firm_id"].map(graph.component_of_firm)
    kept = df[comp == 0]

    stats0 = graph.component_sizes[0]
    n_firms = len(graph.firm_nodes)
    n_workers = len(graph.worker_nodes)
    n_obs = int(df["firm_id"].notna().sum())
    report = {
        "dropped_firms": 1.0 - stats0.n_firms / n_firms if n_firms else 0.0,
        "dropped_workers": 1.0 - stats0.n_workers / n_workers if n_workers else 0.0,
        "dropped_obs": 1.0 - stats0.n_obs / n_obs if n_obs else 0.0,
    }
    return panel.with_df(kept, connected_set_report=report)
