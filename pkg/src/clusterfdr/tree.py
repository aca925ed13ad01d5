"""Hierarchy of cluster hypotheses over predictors.

A :class:`ClusterTree` is a forest of bifurcating cluster nodes: every leaf is a
singleton predictor set, every internal node is the disjoint union of its (at
most two) children.  Hypotheses are ordered by reverse implication: rejecting
the hypothesis for a cluster forces rejection of every enclosing cluster, so
"rejectable" hypothesis sets are exactly the ancestor-closed ("upward-closed")
sets of nodes.  This module provides the closure operator, minimal elements,
the sizing function, and lossless JSON serialization.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, InputError, StructuralError

HypothesisSet = frozenset[int]

EMPTY_SET: HypothesisSet = frozenset()


@dataclass(frozen=True)
class ClusterNode:
    """One cluster hypothesis: a set of predictor indices plus tree wiring.

    ``merge_height`` is the clustering dissimilarity at which the node formed
    (0 for leaves).
    """

    id: int
    members: frozenset[int]
    children: tuple[int, ...]
    parent: int | None = None
    merge_height: float = 0.0


class ClusterTree:
    """Bifurcating forest of cluster hypotheses with dense node ids 0..m-1.

    Construction validates the structural invariants: at most two children per
    node, children partition their parent's member set, leaves are singletons,
    roots have pairwise-disjoint member sets, and the leaf singletons cover
    exactly the predictor indices 0..p-1.  Instances are immutable after
    construction and safe for concurrent read access.
    """

    def __init__(self, nodes: Sequence[ClusterNode]):
        if not nodes:
            raise StructuralError("a cluster tree needs at least one node")
        self.nodes: tuple[ClusterNode, ...] = tuple(nodes)
        m = len(self.nodes)
        if sorted(node.id for node in self.nodes) != list(range(m)):
            raise StructuralError("node ids must be the dense range 0..m-1")
        if any(self.nodes[i].id != i for i in range(m)):
            self.nodes = tuple(sorted(self.nodes, key=lambda node: node.id))

        self.parent = np.full(m, -1, dtype=np.int64)
        for node in self.nodes:
            if len(node.children) > 2:
                raise StructuralError(
                    f"node {node.id} covers {len(node.children)} children; at most 2 allowed"
                )
            for child in node.children:
                if not 0 <= child < m:
                    raise StructuralError(f"node {node.id} references unknown child {child}")
                if self.parent[child] != -1:
                    raise StructuralError(f"node {child} has two parents")
                self.parent[child] = node.id

        for node in self.nodes:
            declared = node.parent if node.parent is not None else -1
            if declared != self.parent[node.id]:
                raise StructuralError(
                    f"node {node.id} declares parent {node.parent} but is a child of "
                    f"{self.parent[node.id] if self.parent[node.id] >= 0 else None}"
                )

        self.root_ids: tuple[int, ...] = tuple(
            node.id for node in self.nodes if self.parent[node.id] == -1
        )

        leaves = []
        for node in self.nodes:
            if not node.members:
                raise StructuralError(f"node {node.id} has an empty member set")
            if node.children:
                union: set[int] = set()
                size = 0
                for child in node.children:
                    union |= self.nodes[child].members
                    size += len(self.nodes[child].members)
                    if self.nodes[child].merge_height > node.merge_height + 1e-12:
                        raise StructuralError(
                            f"node {node.id} merged below its child {child}"
                        )
                if size != len(union) or union != set(node.members):
                    raise StructuralError(
                        f"children of node {node.id} do not partition its member set"
                    )
            else:
                if len(node.members) != 1:
                    raise StructuralError(
                        f"leaf node {node.id} must be a singleton, got {set(node.members)}"
                    )
                leaves.append(node)

        seen_predictors: set[int] = set()
        for root in self.root_ids:
            root_members = self.nodes[root].members
            if root_members & seen_predictors:
                raise StructuralError("root member sets overlap; family is not laminar")
            seen_predictors |= root_members

        self.leaf_count = len(leaves)
        if seen_predictors != set(range(self.leaf_count)):
            raise StructuralError(
                "leaf singletons must cover exactly the predictor indices "
                f"0..{self.leaf_count - 1}"
            )

        # children-before-parents order for bottom-up sweeps
        order: list[int] = []
        stack = list(self.root_ids)
        while stack:
            node_id = stack.pop()
            order.append(node_id)
            stack.extend(self.nodes[node_id].children)
        order.reverse()
        self.topo_order: tuple[int, ...] = tuple(order)

        self.leaf_for_predictor = np.full(self.leaf_count, -1, dtype=np.int64)
        for node in self.nodes:
            if not node.children:
                self.leaf_for_predictor[next(iter(node.members))] = node.id

    def __len__(self) -> int:
        return len(self.nodes)

    def node(self, node_id: int) -> ClusterNode:
        return self.nodes[self.validate_id(node_id)]

    def validate_id(self, node_id: int) -> int:
        if not 0 <= int(node_id) < len(self.nodes):
            raise InputError(f"node id {node_id} outside 0..{len(self.nodes) - 1}")
        return int(node_id)

    def ancestors(self, node_id: int) -> Iterable[int]:
        """Yield the strict ancestors of a node, nearest first."""
        current = self.parent[self.validate_id(node_id)]
        while current != -1:
            yield int(current)
            current = self.parent[current]

    def is_ancestor(self, upper: int, lower: int) -> bool:
        return any(anc == upper for anc in self.ancestors(lower))

    def comparable(self, a: int, b: int) -> bool:
        """Whether one node's member set contains the other's."""
        return a == b or self.is_ancestor(a, b) or self.is_ancestor(b, a)

    def to_json(self) -> str:
        payload = [
            {
                "id": node.id,
                "members": sorted(node.members),
                "children": list(node.children),
                "merge_height": node.merge_height,
            }
            for node in self.nodes
        ]
        return json.dumps({"nodes": payload}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ClusterTree":
        try:
            payload = json.loads(text)
            raw_nodes = payload["nodes"]
        except (json.JSONDecodeError, TypeError, KeyError) as exc:
            raise InputError(f"malformed tree JSON: {exc}") from exc
        parent: dict[int, int] = {}
        for raw in raw_nodes:
            for child in raw["children"]:
                parent[child] = raw["id"]
        nodes = [
            ClusterNode(
                id=int(raw["id"]),
                members=frozenset(int(v) for v in raw["members"]),
                children=tuple(int(v) for v in raw["children"]),
                parent=parent.get(int(raw["id"])),
                merge_height=float(raw["merge_height"]),
            )
            for raw in raw_nodes
        ]
        return cls(nodes)


def flat_forest(p: int) -> ClusterTree:
    """Forest of p singleton hypotheses and no internal nodes.

    This is the degenerate family on which the step-up engine reproduces the
    classical unstructured procedures.
    """
    if p < 1:
        raise StructuralError("need at least one predictor")
    return ClusterTree(
        [ClusterNode(id=i, members=frozenset([i]), children=()) for i in range(p)]
    )


def random_bifurcating_tree(n_leaves: int, rng: np.random.Generator) -> ClusterTree:
    """Random full bifurcating tree built by uniformly merging active roots."""
    if n_leaves < 1:
        raise StructuralError("need at least one leaf")
    nodes = [ClusterNode(id=i, members=frozenset([i]), children=()) for i in range(n_leaves)]
    active = list(range(n_leaves))
    heights = [0.0] * n_leaves
    parent: dict[int, int] = {}
    while len(active) > 1:
        i, j = sorted(rng.choice(len(active), size=2, replace=False))
        a, b = active[i], active[j]
        new_id = len(nodes)
        height = max(heights[a], heights[b]) + float(rng.uniform(0.05, 1.0))
        nodes.append(
            ClusterNode(
                id=new_id,
                members=nodes[a].members | nodes[b].members,
                children=(a, b),
                merge_height=height,
            )
        )
        heights.append(height)
        parent[a] = parent[b] = new_id
        del active[j]
        active[i] = new_id
    rewired = [
        ClusterNode(
            id=node.id,
            members=node.members,
            children=node.children,
            parent=parent.get(node.id),
            merge_height=node.merge_height,
        )
        for node in nodes
    ]
    return ClusterTree(rewired)


class SizingWeights:
    """Per-node weights phi defining the sizing function.

    Weights must be nonnegative and monotone under inclusion (a cluster never
    carries more weight than any cluster it contains), which makes the sizing
    function increasing.  Validated once at construction; instances are frozen.
    """

    def __init__(self, tree: ClusterTree, phi: Sequence[float]):
        values = np.asarray(phi, dtype=float)
        if values.shape != (len(tree),):
            raise ConfigurationError(
                f"expected {len(tree)} weights, got shape {values.shape}"
            )
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ConfigurationError("weights must be finite and nonnegative")
        for node in tree.nodes:
            for child in node.children:
                if values[child] < values[node.id]:
                    raise ConfigurationError(
                        "weights are not monotone under inclusion: "
                        f"phi[{child}]={values[child]} < phi[{node.id}]={values[node.id]} "
                        f"but node {child} is contained in node {node.id}"
                    )
        self.phi = values
        self.phi.setflags(write=False)
        self.tree = tree

    @classmethod
    def default(cls, tree: ClusterTree) -> "SizingWeights":
        """The reciprocal-size weighting: a selected set of k variables counts 1/k."""
        return cls(tree, [1.0 / len(node.members) for node in tree.nodes])

    @classmethod
    def uniform(cls, tree: ClusterTree, value: float = 1.0) -> "SizingWeights":
        return cls(tree, [value] * len(tree))

    def total(self) -> float:
        return float(self.phi.sum())


def _as_id_set(J: Iterable[int], tree: ClusterTree) -> set[int]:
    ids = {tree.validate_id(i) for i in J}
    return ids


def closure(J: Iterable[int], tree: ClusterTree) -> HypothesisSet:
    """Smallest upward-closed hypothesis set containing J.

    Rejecting a cluster forces rejection of every enclosing cluster, so the
    closure adds all ancestors of the members of J.  Idempotent, extensive,
    and monotone.
    """
    result = _as_id_set(J, tree)
    for node_id in list(result):
        for anc in tree.ancestors(node_id):
            if anc in result:
                break
            result.add(anc)
    return frozenset(result)


def is_upset(J: Iterable[int], tree: ClusterTree) -> bool:
    """True iff J is already upward-closed (equals its own closure)."""
    ids = _as_id_set(J, tree)
    for node_id in ids:
        par = tree.parent[node_id]
        if par != -1 and par not in ids:
            return False
    return True


def minimal_elements(J: Iterable[int], tree: ClusterTree) -> HypothesisSet:
    """Clusters of J that contain no other cluster of J.

    In a laminar family the minimal member sets are pairwise disjoint; they
    are the finest selections the set J supports.
    """
    ids = _as_id_set(J, tree)
    if not ids:
        return EMPTY_SET
    # bottom-up: a node is minimal iff nothing in its strict subtree is in J
    subtree_hit = np.zeros(len(tree), dtype=bool)
    minimal: set[int] = set()
    for node_id in tree.topo_order:
        hit_below = any(subtree_hit[c] for c in tree.nodes[node_id].children)
        if node_id in ids and not hit_below:
            minimal.add(node_id)
        subtree_hit[node_id] = hit_below or node_id in ids
    return frozenset(minimal)


def sigma(J: Iterable[int], tree: ClusterTree, weights: SizingWeights) -> float:
    """Sizing function: total weight of the minimal clusters of J.

    Counts the effective number of discoveries represented by rejecting J;
    increasing under set inclusion for monotone weights, and equal to |J| on a
    flat family with unit weights.  Uses an exactly rounded sum so the value
    does not depend on iteration order.
    """
    return math.fsum(weights.phi[i] for i in minimal_elements(J, tree))
