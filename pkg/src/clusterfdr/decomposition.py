"""Weight decomposition of the sizing function on small upset lattices.

A diagnostic module: it enumerates every upward-closed hypothesis set of a
small tree, inverts the sizing function through the lattice's Moebius function
to recover per-upset weights, and extracts the pairwise weights that exist on
bifurcating families.  Two facts are checked empirically here (the production
engine relies on them only through the closed-form threshold slopes):

  * an increasing sizing function on a bifurcating family decomposes into
    nonnegative per-upset weights, zero on every upset with three or more
    minimal elements;
  * those weights collapse to a matrix of pairwise weights whose total equals
    the sizing function of the full hypothesis set.

Weights are computed in exact rational arithmetic whenever the supplied
weights are rationals (the default reciprocal-size weighting is); float inputs
fall back to a 1e-9 tolerance.  Moebius sums cancel catastrophically in
floats, hence the rational default.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np

from .errors import InputError, MonotonicityError, StructuralError
from .tree import ClusterTree, HypothesisSet, closure, is_upset, minimal_elements

MAX_LATTICE_NODES = 15  # supports full bifurcating trees with up to 8 leaves

FLOAT_TOLERANCE = 1e-9

Weight = Fraction | float


def exact_default_phi(tree: ClusterTree) -> list[Fraction]:
    """Reciprocal-size weights as exact rationals."""
    return [Fraction(1, len(node.members)) for node in tree.nodes]


@dataclass(frozen=True)
class UpsetLattice:
    """All upward-closed hypothesis sets of a small tree, ordered by size.

    Closed under unions and intersections; contains the empty set and the full
    node set.  ``masks[k]`` is the bitmask form of ``upsets[k]``.
    """

    tree: ClusterTree
    upsets: tuple[HypothesisSet, ...]
    masks: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.upsets)

    def index_of(self, upset: HypothesisSet) -> int:
        mask = 0
        for i in upset:
            mask |= 1 << i
        try:
            return self.masks.index(mask)
        except ValueError:
            raise InputError(f"{set(upset)} is not an upset of this tree") from None


def enumerate_upsets(tree: ClusterTree, max_nodes: int = MAX_LATTICE_NODES) -> UpsetLattice:
    """Enumerate every upward-closed set of the tree poset.

    Refuses trees above ``max_nodes`` nodes: the lattice grows exponentially
    (already 677 upsets for a balanced 8-leaf tree).
    """
    if len(tree) > max_nodes:
        raise InputError(
            f"tree has {len(tree)} nodes; upset enumeration is limited to "
            f"{max_nodes} nodes to avoid exponential blowup"
        )

    def upsets_below(node_id: int) -> list[int]:
        """Bitmasks of upsets of the subtree rooted at node_id."""
        node = tree.nodes[node_id]
        own = 1 << node_id
        if not node.children:
            return [0, own]
        parts = [upsets_below(c) for c in node.children]
        if len(parts) == 1:
            combos = parts[0]
        else:
            combos = [a | b for a in parts[0] for b in parts[1]]
        return [0] + [own | combo for combo in combos]

    masks = [0]
    for root in tree.root_ids:
        masks = [m | extra for m in masks for extra in upsets_below(root)]
    masks = sorted(set(masks), key=lambda m: (bin(m).count("1"), m))

    upsets = tuple(
        frozenset(i for i in range(len(tree)) if mask >> i & 1) for mask in masks
    )
    for upset in upsets:
        assert is_upset(upset, tree)
    return UpsetLattice(tree=tree, upsets=upsets, masks=tuple(masks))


@dataclass
class SubsetWeights:
    """Per-upset weights plus the pairwise matrix they collapse to.

    ``pairwise[i][j]`` holds the symmetrized weight (half of the weight of the
    upset generated by {i, j} when i != j); entries for comparable pairs are
    zero.  ``pairwise_total`` equals the sizing function of the full set.
    """

    upset_weights: dict[HypothesisSet, Weight]
    pairwise: list[list[Weight]] | None = None

    @property
    def pairwise_total(self) -> Weight:
        if self.pairwise is None:
            raise InputError("pairwise weights were not computed")
        return sum(v for row in self.pairwise for v in row)


def _minimal_ids_per_upset(lattice: UpsetLattice) -> list[tuple[int, ...]]:
    tree = lattice.tree
    return [tuple(minimal_elements(upset, tree)) for upset in lattice.upsets]


def _scaled_sigma(lattice: UpsetLattice, values: Sequence[Weight], exact: bool):
    """Sizing function per upset: integers scaled by the lcm denominator when exact."""
    minimal = _minimal_ids_per_upset(lattice)
    if exact:
        fractions = [Fraction(v) for v in values]
        denom = math.lcm(*(f.denominator for f in fractions)) if fractions else 1
        scaled = [int(f * denom) for f in fractions]
        sig = [sum(scaled[i] for i in ids) for ids in minimal]
        return sig, denom
    sig = [math.fsum(values[i] for i in ids) for ids in minimal]
    return sig, 1


def _normalize_phi(tree: ClusterTree, phi) -> tuple[list[Weight], bool]:
    """Return per-node weights and whether they are exact rationals."""
    if isinstance(phi, Mapping):
        values = [phi[i] for i in range(len(tree))]
    elif hasattr(phi, "phi"):  # SizingWeights
        values = [float(v) for v in phi.phi]
    else:
        values = list(phi)
    if len(values) != len(tree):
        raise InputError(f"expected {len(tree)} weights, got {len(values)}")
    exact = all(isinstance(v, (Fraction, int)) for v in values)
    if exact:
        return [Fraction(v) for v in values], True
    return [float(v) for v in values], False


def mobius_weights(lattice: UpsetLattice, phi) -> SubsetWeights:
    """Invert the sizing function through the lattice's Moebius function.

    Returns the unique weights with ``sigma(A) = sum of weights over upsets
    contained in A`` for every lattice element; for an increasing sizing
    function on a bifurcating family all weights are nonnegative.  Raises
    :class:`MonotonicityError` naming the offending pair if the sizing
    function decreases along an inclusion.
    """
    values, exact = _normalize_phi(lattice.tree, phi)
    sig, denom = _scaled_sigma(lattice, values, exact)

    masks = lattice.masks
    n = len(masks)
    tol = 0 if exact else FLOAT_TOLERANCE
    weights: list = [0] * n
    for j in range(n):
        mask_j = masks[j]
        acc = sig[j]
        for i in range(j):
            if masks[i] & ~mask_j:
                continue
            # masks[i] is a proper subset of mask_j (sizes are nondecreasing)
            if sig[i] > sig[j] + tol:
                raise MonotonicityError(
                    lattice.upsets[i],
                    lattice.upsets[j],
                    sig[i] / denom if exact else sig[i],
                    sig[j] / denom if exact else sig[j],
                )
            acc -= weights[i]
        weights[j] = acc

    if exact:
        table = {
            lattice.upsets[j]: Fraction(weights[j], denom) for j in range(n)
        }
    else:
        table = {lattice.upsets[j]: weights[j] for j in range(n)}
    return SubsetWeights(upset_weights=table)


def pairwise_weights(
    tree: ClusterTree,
    phi,
    lattice: UpsetLattice | None = None,
    decomposition: SubsetWeights | None = None,
) -> SubsetWeights:
    """Collapse the per-upset weights of a bifurcating tree to a pairwise matrix.

    ``w[i][i]`` is the weight of the upset generated by node i; for
    incomparable i, j the weight of the upset generated by {i, j} is split
    evenly between ``w[i][j]`` and ``w[j][i]``; comparable pairs get zero.
    Verifies, for every upset A, that the matrix entries over A x A sum back
    to sigma(A), and that every entry is nonnegative.  The reconstruction runs
    in a scaled-integer domain when the weights are exact rationals.
    """
    for node in tree.nodes:
        if len(node.children) > 2:
            raise StructuralError(
                f"node {node.id} covers more than two children; pairwise weights undefined"
            )
    if lattice is None:
        lattice = enumerate_upsets(tree)
    if decomposition is None:
        decomposition = mobius_weights(lattice, phi)
    values, exact = _normalize_phi(tree, phi)
    sig, denom = _scaled_sigma(lattice, values, exact)
    tol = 0 if exact else FLOAT_TOLERANCE

    # entries scaled by 2 * denom: diagonal weights count double, split pair
    # weights once per side, so everything stays integral in the exact path
    def scale(w: Weight):
        return int(w * denom) if exact else float(w)

    by_mask = {
        lattice.masks[k]: scale(decomposition.upset_weights[lattice.upsets[k]])
        for k in range(len(lattice))
    }

    def up_mask(ids: tuple[int, ...]) -> int:
        mask = 0
        for i in closure(ids, tree):
            mask |= 1 << i
        return mask

    m = len(tree)
    zero = 0 if exact else 0.0
    scaled: list[list] = [[zero] * m for _ in range(m)]
    for i in range(m):
        scaled[i][i] = 2 * by_mask[up_mask((i,))]
    for i, j in combinations(range(m), 2):
        if tree.comparable(i, j):
            continue
        w = by_mask[up_mask((i, j))]
        scaled[i][j] = scaled[j][i] = w

    for row in scaled:
        for entry in row:
            if entry < -tol:
                raise AssertionError(f"negative pairwise weight {entry}")

    for k, upset in enumerate(lattice.upsets):
        ids = sorted(upset)
        total = sum(scaled[a][b] for a in ids for b in ids)
        expected = 2 * sig[k]
        mismatch = total != expected if exact else abs(total - expected) > FLOAT_TOLERANCE
        if mismatch:
            raise AssertionError(
                f"pairwise reconstruction failed on upset {set(upset)}: "
                f"{total} != {expected}"
            )

    if exact:
        matrix: list[list[Weight]] = [
            [Fraction(entry, 2 * denom) for entry in row] for row in scaled
        ]
    else:
        matrix = [[entry / 2.0 for entry in row] for row in scaled]
    decomposition.pairwise = matrix
    return decomposition


@dataclass
class DecompositionReport:
    """Outcome of the inclusion-exclusion / monotonicity verifier."""

    monotone_pairs_checked: int = 0
    decompositions_checked: int = 0
    violations: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_json_dict(self) -> dict:
        return {
            "monotone_pairs_checked": self.monotone_pairs_checked,
            "decompositions_checked": self.decompositions_checked,
            "violations": self.violations,
        }


def verify_inclusion_exclusion(
    lattice: UpsetLattice,
    phi,
    sample_budget: int = 20_000,
    rng: np.random.Generator | None = None,
) -> DecompositionReport:
    """Check the premises behind the weight decomposition on one lattice.

    Two families of checks, both reported rather than raised:

      * monotonicity of the sizing function along every inclusion of upsets
        (on bifurcating families this is the binding premise; upsets with a
        single minimal element rely on it rather than on inclusion-exclusion);
      * the inclusion-exclusion inequality
        ``sigma(union A_n) >= sum over nonempty K of (-1)^(|K|+1)
        sigma(intersection over K)`` for sampled pair and triple
        decompositions, exhaustively when they fit in ``sample_budget``.
    """
    values, exact = _normalize_phi(lattice.tree, phi)
    tol = 0 if exact else FLOAT_TOLERANCE

    sig, denom = _scaled_sigma(lattice, values, exact)
    masks = lattice.masks
    mask_index = {mask: k for k, mask in enumerate(masks)}
    n = len(masks)
    report = DecompositionReport()

    for j in range(n):
        for i in range(j):
            if masks[i] & ~masks[j]:
                continue
            report.monotone_pairs_checked += 1
            if sig[i] > sig[j] + tol:
                report.violations.append(
                    {
                        "kind": "monotonicity",
                        "smaller": sorted(lattice.upsets[i]),
                        "larger": sorted(lattice.upsets[j]),
                        "sigma_smaller": sig[i] / denom,
                        "sigma_larger": sig[j] / denom,
                    }
                )

    def check(indices: tuple[int, ...]) -> None:
        union_mask = 0
        for k in indices:
            union_mask |= masks[k]
        lhs = sig[mask_index[union_mask]]
        rhs = 0 if exact else 0.0
        for r in range(1, len(indices) + 1):
            for combo in combinations(indices, r):
                inter = masks[combo[0]]
                for k in combo[1:]:
                    inter &= masks[k]
                term = sig[mask_index[inter]]
                rhs = rhs + term if r % 2 == 1 else rhs - term
        report.decompositions_checked += 1
        if lhs + tol < rhs:
            report.violations.append(
                {
                    "kind": "inclusion_exclusion",
                    "parts": [sorted(lattice.upsets[k]) for k in indices],
                    "sigma_union": lhs / denom,
                    "alternating_sum": rhs / denom,
                }
            )

    nonempty = [k for k in range(n) if masks[k]]
    pairs = list(combinations(nonempty, 2))
    triples_count = len(nonempty) * (len(nonempty) - 1) * (len(nonempty) - 2) // 6
    if len(pairs) + triples_count <= sample_budget:
        for combo in pairs:
            check(combo)
        for combo in combinations(nonempty, 3):
            check(combo)
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        budget = sample_budget
        for combo in pairs[: budget // 2]:
            check(combo)
        remaining = budget - report.decompositions_checked
        for _ in range(max(remaining, 0)):
            size = int(rng.integers(2, 4))
            picks = tuple(int(v) for v in rng.choice(len(nonempty), size=size, replace=False))
            check(tuple(nonempty[k] for k in picks))

    return report
