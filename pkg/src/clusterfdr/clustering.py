"""Correlation-based hierarchical clustering of predictors.

Builds the bifurcating cluster hierarchy the selection procedures test.  The
dissimilarity is ``1 - |corr|``: a strongly negatively correlated surrogate is
just as hard to tell apart from a true signal as a positively correlated one.
Merging is agglomerative with a configurable linkage and deterministic
tie-breaking (smallest cluster-id pair), so results are reproducible across
platforms.  Only the predictors are used, never the response, which keeps the
choice of tested subsets free of selection bias.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError
from .tree import ClusterNode, ClusterTree

LINKAGES = ("complete", "average", "single")


def correlation_matrix(X: np.ndarray) -> np.ndarray:
    """Pairwise Pearson correlations of the columns of X.

    Raises :class:`InputError` naming the first constant (zero-variance)
    column, since its correlations are undefined.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise InputError("need a 2-d data matrix with at least two rows")
    stds = X.std(axis=0)
    constant = np.flatnonzero(stds == 0)
    if constant.size:
        raise InputError(
            f"column {int(constant[0])} is constant; correlations are undefined"
        )
    corr = np.corrcoef(X, rowvar=False)
    corr = np.clip(corr, -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return corr


def _validate_corr(corr: np.ndarray) -> np.ndarray:
    corr = np.asarray(corr, dtype=float)
    if corr.ndim != 2 or corr.shape[0] != corr.shape[1]:
        raise InputError("correlation matrix must be square")
    if not np.allclose(corr, corr.T, atol=1e-12):
        raise InputError("correlation matrix must be symmetric")
    if np.any(np.abs(corr) > 1 + 1e-12):
        raise InputError("correlation entries must lie in [-1, 1]")
    if not np.allclose(np.diag(corr), 1.0, atol=1e-12):
        raise InputError("correlation matrix must have unit diagonal")
    return corr


def hierarchical_cluster(corr: np.ndarray, linkage: str = "complete") -> ClusterTree:
    """Agglomerative clustering on dissimilarity 1 - |corr|.

    Every merge joins exactly two clusters, giving a bifurcating tree with
    2p - 1 nodes; internal nodes record the dissimilarity at which they
    formed.  Ties are broken by the smallest (i, j) pair of cluster ids, ids
    being assigned in creation order (leaves first, then merges).
    """
    corr = _validate_corr(corr)
    if linkage not in LINKAGES:
        raise InputError(f"unknown linkage {linkage!r}; choose from {LINKAGES}")
    p = corr.shape[0]
    if p == 1:
        return ClusterTree([ClusterNode(0, frozenset([0]), ())])

    total = 2 * p - 1
    # distance matrix over all (eventual) cluster ids; inactive rows at +inf
    dist = np.full((total, total), np.inf)
    dist[:p, :p] = 1.0 - np.abs(corr)
    np.fill_diagonal(dist, np.inf)

    sizes = np.zeros(total, dtype=np.int64)
    sizes[:p] = 1
    active = np.zeros(total, dtype=bool)
    active[:p] = True

    nodes: list[ClusterNode] = [
        ClusterNode(i, frozenset([i]), ()) for i in range(p)
    ]
    members: list[frozenset[int]] = [node.members for node in nodes]
    parent: dict[int, int] = {}

    for new_id in range(p, total):
        # np.argmin scans row-major, so equal minima resolve to the smallest
        # (i, j); the matrix is kept symmetric with inf on inactive entries
        flat = int(np.argmin(dist[:new_id, :new_id]))
        i, j = divmod(flat, new_id)
        if i > j:
            i, j = j, i
        height = float(dist[i, j])

        merged = members[i] | members[j]
        members.append(merged)
        nodes.append(
            ClusterNode(new_id, merged, (i, j), merge_height=height)
        )
        parent[i] = parent[j] = new_id

        other = np.flatnonzero(active)
        other = other[(other != i) & (other != j)]
        if other.size:
            di, dj = dist[i, other], dist[j, other]
            if linkage == "complete":
                updated = np.maximum(di, dj)
            elif linkage == "single":
                updated = np.minimum(di, dj)
            else:  # average
                updated = (sizes[i] * di + sizes[j] * dj) / (sizes[i] + sizes[j])
            dist[new_id, other] = updated
            dist[other, new_id] = updated

        sizes[new_id] = sizes[i] + sizes[j]
        active[i] = active[j] = False
        active[new_id] = True
        dist[i, :] = np.inf
        dist[:, i] = np.inf
        dist[j, :] = np.inf
        dist[:, j] = np.inf

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


def cut_tree(tree: ClusterTree, corr_threshold: float) -> ClusterTree:
    """Drop internal nodes whose merge correlation falls below the threshold.

    The merge correlation of an internal node is ``1 - merge_height``.  Since
    merge heights never decrease toward the root, the survivors form a forest
    of singletons plus high-correlation clusters; weights must be recomputed
    on the result.  Threshold 0 keeps the tree unchanged, threshold 1 keeps
    (generically) only the singletons, degenerating toward the flat family.
    """
    if not 0.0 <= corr_threshold <= 1.0:
        raise InputError(f"correlation threshold must lie in [0, 1], got {corr_threshold}")

    keep = [
        node.id
        for node in tree.nodes
        if not node.children or 1.0 - node.merge_height >= corr_threshold
    ]
    keep_set = set(keep)
    # heights are monotone, so a kept node's children are kept: survivors
    # keep their subtree and the result stays a forest
    new_id = {old: new for new, old in enumerate(sorted(keep_set))}
    rewired = []
    for old in sorted(keep_set):
        node = tree.nodes[old]
        par = tree.parent[old]
        rewired.append(
            ClusterNode(
                id=new_id[old],
                members=node.members,
                children=tuple(new_id[c] for c in node.children),
                parent=new_id[int(par)] if par != -1 and int(par) in keep_set else None,
                merge_height=node.merge_height,
            )
        )
    return ClusterTree(rewired)
