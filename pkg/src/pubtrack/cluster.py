"""Density-based clustering (HDBSCAN) of reduced embeddings.

Full pipeline: core distances, mutual-reachability distances, an exact
minimum spanning tree (Prim's over the complete graph), single-linkage
hierarchy, condensed tree at min_cluster_size, and stability-based
cluster selection (excess-of-mass) with epsilon merging.

Conventions follow the scikit-learn HDBSCAN implementation: the core
distance of a point is the distance to its min_samples-th nearest
neighbor counting the point itself, and a lone root cluster is never
selected (no single-cluster results). Ties are broken by the smaller
point index in the canonical (sorted-id) point order, which makes the
partition independent of input ordering.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .embed import EmbeddingMatrix
from .errors import NonFiniteInput
from .reduce import pairwise_distances

NOISE = -1


@dataclass(frozen=True)
class ClusteringConfig:
    min_cluster_size: int = 7
    min_samples: int = 4
    selection_epsilon: float = 0.2
    selection_method: str = "eom"  # or "leaf"

    def __post_init__(self):
        if self.min_samples > self.min_cluster_size:
            raise ValueError("min_samples must be <= min_cluster_size")


@dataclass(frozen=True)
class ClusterAssignment:
    labels: dict[str, int]
    probabilities: dict[str, float]

    def n_clusters(self) -> int:
        return len({label for label in self.labels.values() if label >= 0})

    def members(self, label: int) -> list[str]:
        return sorted(pid for pid, lab in self.labels.items() if lab == label)


def mutual_reachability(a: np.ndarray, b: np.ndarray, core_a: float, core_b: float) -> float:
    """max(core_a, core_b, euclidean(a, b))."""
    d = float(np.linalg.norm(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)))
    return max(core_a, core_b, d)


def _core_distances(dist: np.ndarray, min_samples: int) -> np.ndarray:
    """Distance to the min_samples-th nearest neighbor, self included."""
    k = min(min_samples, dist.shape[0]) - 1
    return np.partition(dist, k, axis=1)[:, k]


def _prim_mst(dist: np.ndarray, core: np.ndarray) -> np.ndarray:
    """Exact MST over the mutual-reachability graph.

    Returns (n-1, 3) rows [a, b, weight]. Ties resolved toward the
    smallest point index via argmin.
    """
    n = dist.shape[0]
    attached = np.zeros(n, dtype=bool)
    best_weight = np.full(n, np.inf)
    best_source = np.zeros(n, dtype=np.int64)
    edges = np.empty((n - 1, 3), dtype=np.float64)

    current = 0
    for step in range(n - 1):
        attached[current] = True
        reach = np.maximum(dist[current], np.maximum(core, core[current]))
        update = ~attached & (reach < best_weight)
        best_weight[update] = reach[update]
        best_source[update] = current

        candidate_weights = np.where(attached, np.inf, best_weight)
        nxt = int(np.argmin(candidate_weights))
        edges[step] = (best_source[nxt], nxt, best_weight[nxt])
        current = nxt
    return edges


class _UnionFind:
    """Union-find over linkage labels: points 0..n-1, merges n..2n-2."""

    def __init__(self, n: int):
        self.parent = np.full(2 * n - 1, -1, dtype=np.int64)
        self.size = np.concatenate([np.ones(n, dtype=np.int64), np.zeros(n - 1, dtype=np.int64)])
        self.next_label = n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != -1:
            root = self.parent[root]
        while self.parent[x] != -1:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> int:
        label = self.next_label
        self.next_label += 1
        self.parent[a] = label
        self.parent[b] = label
        self.size[label] = self.size[a] + self.size[b]
        return label


def _single_linkage(edges: np.ndarray) -> np.ndarray:
    """Sorted-edge union-find; rows (left, right, weight, size) as in scipy."""
    n = edges.shape[0] + 1
    a = edges[:, 0].astype(np.int64)
    b = edges[:, 1].astype(np.int64)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    order = np.lexsort((hi, lo, edges[:, 2]))

    uf = _UnionFind(n)
    linkage = np.empty((n - 1, 4), dtype=np.float64)
    for i, e in enumerate(order):
        ra, rb = uf.find(int(lo[e])), uf.find(int(hi[e]))
        linkage[i] = (ra, rb, edges[e, 2], uf.size[ra] + uf.size[rb])
        uf.union(ra, rb)
    return linkage


def _bfs_descendants(linkage: np.ndarray, n: int, start: int) -> list[int]:
    out = []
    stack = [start]
    while stack:
        node = stack.pop()
        out.append(node)
        if node >= n:
            row = linkage[node - n]
            stack.append(int(row[0]))
            stack.append(int(row[1]))
    return out


@dataclass(frozen=True)
class CondensedTree:
    """Columns of the condensed hierarchy plus the id count it was built over."""

    parent: np.ndarray
    child: np.ndarray
    lam: np.ndarray  # 1 / merge distance at which the child separates
    size: np.ndarray
    n_points: int

    def cluster_rows(self) -> np.ndarray:
        return self.size > 1


def condense_tree(linkage: np.ndarray, min_cluster_size: int) -> CondensedTree:
    n = linkage.shape[0] + 1
    root = 2 * n - 2
    relabel = {root: n}
    next_label = n + 1
    ignore: set[int] = set()
    rows: list[tuple[int, int, float, int]] = []

    def node_size(node: int) -> int:
        return 1 if node < n else int(linkage[node - n, 3])

    for node in _bfs_descendants(linkage, n, root):
        if node in ignore or node < n:
            continue
        left, right, distance = int(linkage[node - n, 0]), int(linkage[node - n, 1]), linkage[node - n, 2]
        lam = 1.0 / distance if distance > 0.0 else math.inf
        left_count, right_count = node_size(left), node_size(right)
        label = relabel[node]

        if left_count >= min_cluster_size and right_count >= min_cluster_size:
            relabel[left] = next_label
            rows.append((label, next_label, lam, left_count))
            next_label += 1
            relabel[right] = next_label
            rows.append((label, next_label, lam, right_count))
            next_label += 1
        elif left_count < min_cluster_size and right_count < min_cluster_size:
            for side in (left, right):
                for sub in _bfs_descendants(linkage, n, side):
                    if sub < n:
                        rows.append((label, sub, lam, 1))
                    ignore.add(sub)
        else:
            keep, drop = (right, left) if left_count < min_cluster_size else (left, right)
            relabel[keep] = label
            for sub in _bfs_descendants(linkage, n, drop):
                if sub < n:
                    rows.append((label, sub, lam, 1))
                ignore.add(sub)

    arr = np.array(rows, dtype=np.float64).reshape(-1, 4)
    return CondensedTree(
        parent=arr[:, 0].astype(np.int64),
        child=arr[:, 1].astype(np.int64),
        lam=arr[:, 2],
        size=arr[:, 3].astype(np.int64),
        n_points=n,
    )


def compute_stability(tree: CondensedTree) -> dict[int, float]:
    """Excess-of-mass stability per cluster node."""
    births: dict[int, float] = {int(tree.n_points): 0.0}
    for child, lam in zip(tree.child, tree.lam):
        if child >= tree.n_points:
            births[int(child)] = float(lam) if math.isfinite(lam) else 0.0

    stability: dict[int, float] = {c: 0.0 for c in births}
    for parent, lam, size in zip(tree.parent, tree.lam, tree.size):
        # zero-distance merges (infinite lambda) carry no excess mass
        if math.isfinite(lam):
            p = int(parent)
            stability[p] += (float(lam) - births[p]) * int(size)
    return stability


def _cluster_children(tree: CondensedTree) -> dict[int, list[int]]:
    children: dict[int, list[int]] = {}
    for parent, child, size in zip(tree.parent, tree.child, tree.size):
        if child >= tree.n_points:
            children.setdefault(int(parent), []).append(int(child))
    return children


def _bfs_clusters(children: dict[int, list[int]], start: int) -> list[int]:
    out = []
    stack = [start]
    while stack:
        node = stack.pop()
        out.append(node)
        stack.extend(children.get(node, []))
    return out


def _birth_eps(tree: CondensedTree, node: int) -> float:
    mask = tree.child == node
    lam = float(tree.lam[mask][0])
    return 1.0 / lam if lam > 0 and math.isfinite(lam) else 0.0


def _traverse_upwards(tree: CondensedTree, epsilon: float, leaf: int) -> int:
    root = int(tree.n_points)
    node = leaf
    while True:
        parent = int(tree.parent[tree.child == node][0])
        if parent == root:
            return node  # nearest-to-root selectable node
        if _birth_eps(tree, parent) > epsilon:
            return parent
        node = parent


def _epsilon_search(
    tree: CondensedTree, selected: list[int], epsilon: float, children: dict[int, list[int]]
) -> set[int]:
    chosen: set[int] = set()
    processed: set[int] = set()
    for leaf in selected:
        if _birth_eps(tree, leaf) >= epsilon:
            chosen.add(leaf)
            continue
        if leaf in processed:
            continue
        ancestor = _traverse_upwards(tree, epsilon, leaf)
        chosen.add(ancestor)
        processed.update(_bfs_clusters(children, ancestor))
    return chosen


def select_clusters(tree: CondensedTree, config: ClusteringConfig) -> set[int]:
    """Choose the flat clustering from the condensed tree."""
    root = int(tree.n_points)
    children = _cluster_children(tree)
    all_clusters = sorted({root} | {c for kids in children.values() for c in kids})
    if len(all_clusters) == 1:
        return set()  # lone root is never selected

    stability = compute_stability(tree)

    if config.selection_method == "leaf":
        selected = [c for c in all_clusters if c != root and not children.get(c)]
        if not selected:
            return set()
    else:
        is_cluster = {c: True for c in all_clusters}
        for node in sorted(all_clusters, reverse=True):
            if node == root:
                continue
            subtree = sum(stability[child] for child in children.get(node, []))
            if subtree > stability[node]:
                stability[node] = subtree
                is_cluster[node] = False
            else:
                for sub in _bfs_clusters(children, node):
                    if sub != node:
                        is_cluster[sub] = False
        is_cluster[root] = False
        selected = [c for c in all_clusters if is_cluster[c]]

    if config.selection_epsilon > 0.0 and selected:
        return _epsilon_search(tree, selected, config.selection_epsilon, children)
    return set(selected)


def _label_points(tree: CondensedTree, selected: set[int]) -> tuple[np.ndarray, np.ndarray]:
    """Per-point labels and membership probabilities from the condensed tree."""
    n = tree.n_points
    labels = np.full(n, NOISE, dtype=np.int64)
    probabilities = np.zeros(n, dtype=np.float64)
    if not selected:
        return labels, probabilities

    # union every child into its parent except at selected-cluster boundaries
    max_node = int(tree.child.max()) if len(tree.child) else n
    parent_of = np.arange(max(max_node, n) + 1, dtype=np.int64)

    def find(x: int) -> int:
        root = x
        while parent_of[root] != root:
            root = parent_of[root]
        while parent_of[x] != root:
            parent_of[x], x = root, parent_of[x]
        return root

    for parent, child in zip(tree.parent, tree.child):
        if int(child) not in selected:
            parent_of[find(int(child))] = find(int(parent))

    label_map = {c: i for i, c in enumerate(sorted(selected))}
    deaths: dict[int, float] = {}
    for parent, lam in zip(tree.parent, tree.lam):
        if math.isfinite(lam):
            deaths[int(parent)] = max(deaths.get(int(parent), 0.0), float(lam))

    point_lambda = np.zeros(n, dtype=np.float64)
    for child, lam in zip(tree.child, tree.lam):
        if child < n:
            point_lambda[int(child)] = float(lam) if math.isfinite(lam) else np.inf

    for point in range(n):
        cluster = find(point)
        if cluster not in selected:
            continue
        labels[point] = label_map[cluster]
        max_lambda = deaths.get(cluster, 0.0)
        lam = point_lambda[point]
        if max_lambda <= 0.0 or not math.isfinite(lam):
            probabilities[point] = 1.0
        else:
            probabilities[point] = min(lam, max_lambda) / max_lambda
    return labels, probabilities


def hdbscan(points: EmbeddingMatrix, config: Optional[ClusteringConfig] = None) -> ClusterAssignment:
    """Cluster points; label -1 marks noise, labels 0..K-1 are clusters."""
    config = config or ClusteringConfig()
    ids = points.ids()
    n = len(ids)
    if n < max(config.min_cluster_size, 2):
        return ClusterAssignment(
            labels={pid: NOISE for pid in ids},
            probabilities={pid: 0.0 for pid in ids},
        )
    data = points.as_array(ids)
    if not np.all(np.isfinite(data)):
        raise NonFiniteInput("clustering input contains non-finite values")

    dist = pairwise_distances(data, "euclidean")
    core = _core_distances(dist, config.min_samples)
    mst = _prim_mst(dist, core)
    linkage = _single_linkage(mst)
    tree = condense_tree(linkage, config.min_cluster_size)
    selected = select_clusters(tree, config)
    labels, probabilities = _label_points(tree, selected)

    return ClusterAssignment(
        labels={pid: int(labels[i]) for i, pid in enumerate(ids)},
        probabilities={pid: float(probabilities[i]) for i, pid in enumerate(ids)},
    )
