"""Hierarchical density clustering (HDBSCAN) and purity reporting.

The classic pipeline, built directly on a dense distance matrix since the
row counts here are in the hundreds: core distances at k = min_samples,
mutual reachability distances, a minimum spanning tree, single-linkage
merging, a condensed tree at min_cluster_size, and excess-of-mass cluster
selection. Density falls as 1/distance: lambda = 1/d, so points "fall
out" of clusters as lambda rises.

Selection semantics, pinned here because implementations differ at the
root: a cluster's stability is the mass it holds beyond its birth
density. The root may be selected only when allow_single_cluster is
set, and when it is the sole selected cluster a point keeps its label
only if it persisted to the root's final density (its fall-out lambda
reaches the largest lambda among the root's direct entries). Uniform
noise therefore comes back mostly -1 even as a single cluster, while
coincident points (all merges at zero distance) label everything.
Points under any selected non-root cluster take its label outright.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .errors import ClusterError, SpecError

_POINT = -1  # marker for condensed rows whose child is a data point


@dataclass(frozen=True)
class _CondensedRow:
    parent: int
    child: int  # cluster id, or point index when is_point
    is_point: bool
    lam: float
    size: int


def _mutual_reachability(X: np.ndarray, min_samples: int) -> np.ndarray:
    distances = squareform(pdist(X))
    # k-th nearest neighbour including the point itself (row has a 0).
    core = np.sort(distances, axis=1)[:, min_samples - 1]
    return np.maximum(distances, np.maximum.outer(core, core))


def _prim_mst(weights: np.ndarray) -> list[tuple[int, int, float]]:
    """Dense-graph Prim. Repeated points give 0-weight edges, which must
    survive; sparse MST helpers treat zeros as missing edges."""
    n = len(weights)
    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    best = weights[0].copy()
    best_from = np.zeros(n, dtype=np.int64)
    edges: list[tuple[int, int, float]] = []
    for _ in range(n - 1):
        candidate = np.where(in_tree, np.inf, best)
        v = int(np.argmin(candidate))
        edges.append((int(best_from[v]), v, float(best[v])))
        in_tree[v] = True
        closer = ~in_tree & (weights[v] < best)
        best[closer] = weights[v][closer]
        best_from[closer] = v
    return edges


def _single_linkage(
    edges: list[tuple[int, int, float]], n: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Merge MST edges by ascending weight into a dendrogram.

    Returns (children, dists, sizes) indexed by node id; points are
    0..n-1, merge nodes n..2n-2, the root is 2n-2.
    """
    order = sorted(range(len(edges)), key=lambda i: edges[i][2])
    parent = np.arange(2 * n - 1, dtype=np.int64)
    children = np.full((2 * n - 1, 2), -1, dtype=np.int64)
    dists = np.zeros(2 * n - 1)
    sizes = np.ones(2 * n - 1, dtype=np.int64)

    def find(x: int) -> int:
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    next_id = n
    for i in order:
        u, v, w = edges[i]
        ru, rv = find(u), find(v)
        children[next_id] = (ru, rv)
        dists[next_id] = w
        sizes[next_id] = sizes[ru] + sizes[rv]
        parent[ru] = parent[rv] = next_id
        next_id += 1
    return children, dists, sizes


def _subtree_points(children: np.ndarray, node: int, n: int) -> list[int]:
    points, stack = [], [node]
    while stack:
        cur = stack.pop()
        if cur < n:
            points.append(cur)
        else:
            stack.extend(children[cur])
    return points


def _condense(
    children: np.ndarray, dists: np.ndarray, sizes: np.ndarray, n: int, mcs: int
) -> list[_CondensedRow]:
    """Walk the dendrogram top-down, keeping only >= mcs structure.

    A side smaller than mcs sheds its points at the current lambda; a
    split where both sides qualify births two new condensed clusters.
    Cluster ids are assigned in walk order starting at 0 (the root).
    """
    root = 2 * n - 2
    rows: list[_CondensedRow] = []
    relabel = {root: 0}
    next_cluster = 1
    stack = deque([root])
    while stack:
        node = stack.popleft()
        cluster = relabel[node]
        lam = 1.0 / dists[node] if dists[node] > 0 else np.inf
        left, right = children[node]
        branches = []
        for side in (left, right):
            side_size = 1 if side < n else int(sizes[side])
            branches.append((side, side_size))
        big_enough = [b for b in branches if b[1] >= mcs]
        if len(big_enough) == 2:
            for side, side_size in branches:
                rows.append(_CondensedRow(cluster, next_cluster, False, lam, side_size))
                relabel[side] = next_cluster
                next_cluster += 1
                stack.append(side)
        elif len(big_enough) == 1:
            keep = big_enough[0][0]
            for side, _ in branches:
                if side == keep:
                    # The surviving side continues as the same cluster.
                    relabel[side] = cluster
                    stack.append(side)
                else:
                    for p in _subtree_points(children, side, n):
                        rows.append(_CondensedRow(cluster, p, True, lam, 1))
        else:
            for side, _ in branches:
                for p in _subtree_points(children, side, n):
                    rows.append(_CondensedRow(cluster, p, True, lam, 1))
    return rows


def _stability(rows: list[_CondensedRow]) -> dict[int, float]:
    births: dict[int, float] = {0: 0.0}
    for row in rows:
        if not row.is_point:
            births[row.child] = row.lam
    totals: dict[int, float] = {c: 0.0 for c in births}
    for row in rows:
        birth = births[row.parent]
        if np.isinf(row.lam) and np.isinf(birth):
            continue  # coincident-point degeneracy: no measurable mass
        totals[row.parent] += (row.lam - birth) * row.size
    return totals


def _select_eom(
    rows: list[_CondensedRow],
    stability: dict[int, float],
    allow_single_cluster: bool,
) -> set[int]:
    children_of: dict[int, list[int]] = {}
    for row in rows:
        if not row.is_point:
            children_of.setdefault(row.parent, []).append(row.child)
    candidates = sorted(stability, reverse=True)
    if not allow_single_cluster:
        candidates = [c for c in candidates if c != 0]
    selected = {c: True for c in candidates}
    running = dict(stability)
    for node in candidates:
        subtree = sum(running[ch] for ch in children_of.get(node, []))
        if subtree > running[node]:
            selected[node] = False
            running[node] = subtree
        else:
            stack = list(children_of.get(node, []))
            while stack:
                ch = stack.pop()
                if ch in selected:
                    selected[ch] = False
                stack.extend(children_of.get(ch, []))
    return {c for c, keep in selected.items() if keep}


def _select_leaf(rows: list[_CondensedRow]) -> set[int]:
    children = {row.child for row in rows if not row.is_point}
    if not children:
        return {0}  # no condensed substructure: the root is the only leaf
    parents = {row.parent for row in rows if not row.is_point}
    return (children | {0}) - parents


@dataclass(frozen=True)
class ClusterAssignment:
    """Flat labels (-1 = outlier) plus the stability of each kept cluster."""

    labels: np.ndarray
    stabilities: tuple[float, ...]

    def __post_init__(self) -> None:
        found = sorted(set(self.labels[self.labels >= 0]))
        if found != list(range(len(found))):
            raise SpecError("cluster labels must be contiguous from 0")
        if len(found) != len(self.stabilities):
            raise SpecError("one stability per cluster required")

    @property
    def n_clusters(self) -> int:
        return len(self.stabilities)


def hdbscan_fit(
    X: np.ndarray,
    min_cluster_size: int = 5,
    min_samples: int = 5,
    selection: str = "eom",
    allow_single_cluster: bool = True,
) -> ClusterAssignment:
    """Cluster rows by hierarchical density; unassigned points get -1."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise SpecError("hdbscan_fit expects a 2-D matrix")
    if min_cluster_size < 2:
        raise SpecError("min_cluster_size must be >= 2")
    if min_samples < 1:
        raise SpecError("min_samples must be >= 1")
    if selection not in ("eom", "leaf"):
        raise SpecError(f"unknown selection method {selection!r}")
    n = len(X)
    if n < min_cluster_size:
        raise ClusterError(f"{n} rows is fewer than min_cluster_size={min_cluster_size}")
    if n < min_samples:
        raise ClusterError(f"{n} rows is fewer than min_samples={min_samples}")

    reach = _mutual_reachability(X, min_samples)
    edges = _prim_mst(reach)
    children, dists, sizes = _single_linkage(edges, n)
    rows = _condense(children, dists, sizes, n, min_cluster_size)
    stability = _stability(rows)
    if selection == "eom":
        chosen = _select_eom(rows, stability, allow_single_cluster)
    else:
        chosen = _select_leaf(rows)

    parent_of: dict[int, int] = {}
    fallout: dict[int, tuple[int, float]] = {}
    for row in rows:
        if row.is_point:
            fallout[row.child] = (row.parent, row.lam)
        else:
            parent_of[row.child] = row.parent

    ordered = sorted(chosen)
    label_of = {cluster: i for i, cluster in enumerate(ordered)}
    # A selected root only keeps points whose fall-out density reached the
    # root's last entry; everything shed earlier stays noise.
    root_death = max(row.lam for row in rows if row.parent == 0)
    labels = np.full(n, -1, dtype=np.int64)
    for point in range(n):
        node, lam = fallout[point]
        while node not in chosen and node in parent_of:
            node = parent_of[node]
        if node not in chosen:
            continue
        if node == 0 and not (allow_single_cluster and lam >= root_death):
            continue
        labels[point] = label_of[node]

    present = sorted(int(lab) for lab in set(labels.tolist()) if lab >= 0)
    if len(present) != len(ordered):
        # a selected root that kept no points drops out entirely
        remap = {old: new for new, old in enumerate(present)}
        labels = np.asarray([remap.get(int(lab), -1) for lab in labels], dtype=np.int64)
        ordered = [ordered[old] for old in present]
    return ClusterAssignment(
        labels=labels, stabilities=tuple(float(stability[c]) for c in ordered)
    )


@dataclass(frozen=True)
class ClassClusterSummary:
    class_label: str
    n_clusters: int
    mean_size: float | None
    mean_purity: float | None
    n_outliers: int


@dataclass(frozen=True)
class ClusterReport:
    """Per-class summary of how clusters align with known class labels."""

    groups: tuple[ClassClusterSummary, ...]
    n_points: int

    def to_dict(self) -> dict[str, object]:
        return {
            "n_points": self.n_points,
            "n_clusters": int(sum(g.n_clusters for g in self.groups)),
            "groups": [
                {
                    "class": g.class_label,
                    "Count": g.n_clusters,
                    "E[Size]": g.mean_size,
                    "E[Purity]": g.mean_purity,
                    "Outliers": g.n_outliers,
                }
                for g in self.groups
            ],
        }


def cluster_report(assignment: ClusterAssignment, class_labels: list[str]) -> ClusterReport:
    """Attribute each cluster to its majority class and summarize per class.

    Purity is the majority fraction within a cluster. Majority ties go to
    the lexicographically smallest class label. Outliers are counted under
    their own class, so sizes plus outliers add back up to the row count.
    """
    labels = assignment.labels
    if len(labels) != len(class_labels):
        raise SpecError("labels and class_labels must align")
    classes = np.asarray(class_labels)
    per_class_clusters: dict[str, list[tuple[int, float]]] = {}
    for cluster in range(assignment.n_clusters):
        members = classes[labels == cluster]
        values, counts = np.unique(members, return_counts=True)
        best = counts.max()
        majority = min(values[counts == best])  # lexicographic tie break
        per_class_clusters.setdefault(str(majority), []).append(
            (len(members), best / len(members))
        )
    groups = []
    for cls in sorted(set(class_labels)):
        mine = per_class_clusters.get(cls, [])
        outliers = int(((labels == -1) & (classes == cls)).sum())
        if mine:
            sizes = np.asarray([m[0] for m in mine], dtype=np.float64)
            purities = np.asarray([m[1] for m in mine])
            groups.append(
                ClassClusterSummary(
                    class_label=cls,
                    n_clusters=len(mine),
                    mean_size=float(sizes.mean()),
                    mean_purity=float(purities.mean()),
                    n_outliers=outliers,
                )
            )
        else:
            groups.append(
                ClassClusterSummary(
                    class_label=cls,
                    n_clusters=0,
                    mean_size=None,
                    mean_purity=None,
                    n_outliers=outliers,
                )
            )
    return ClusterReport(groups=tuple(groups), n_points=len(labels))
