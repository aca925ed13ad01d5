"""Generalized linear step-up selection over cluster hypotheses.

The engine rejects the closure of ``{i : P_i <= c_max}`` where ``c_max`` is the
largest cutoff at which the sizing function of the (closed) sub-threshold set
still dominates the linear threshold ``alpha * c``.  With a flat family and
counting sizes this reduces exactly to the classical Benjamini-Hochberg and
Benjamini-Yekutieli step-ups; with hierarchical families and reciprocal-size
weights it selects sets of predictors.  The monotonized variant first replaces
each p-value by the maximum over all enclosing clusters, which makes every
sub-threshold set upward-closed and licenses the tighter pairwise-dependency
threshold slope.

All functions are pure; evaluating many (p-vector, rule) pairs concurrently is
safe.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, StructuralError
from .tree import (
    ClusterTree,
    HypothesisSet,
    SizingWeights,
    closure,
    is_upset,
    minimal_elements,
    sigma,
)

RULE_KINDS = ("bh", "by", "arbitrary", "prds", "pprds", "heuristic", "explicit")

# Rules whose slope carries a proven gFDR guarantee under its stated
# dependency assumption.  The heuristic slope is observed to control the gFDR
# empirically but has no theorem behind it; explicit slopes are user-supplied.
_GUARANTEED = frozenset({"bh", "by", "arbitrary", "prds", "pprds"})


@dataclass(frozen=True)
class SlopeRule:
    """Threshold-slope rule: how alpha is derived from the hypothesis family.

    kinds:
      bh         m/q (classical step-up; exact BH on a flat family)
      by         m*H_m/q (harmonic-sum inflation, arbitrary dependence, flat)
      arbitrary  log-inflated weighted slope, valid under arbitrary dependence
      prds       total weight / q, valid under positive regression dependency
      pprds      weight of the finest partition / q, valid for monotonized
                 p-values on bifurcating families under pairwise dependency
      heuristic  predictor count / q; no guarantee, works well in practice
      explicit   user-supplied alpha
    """

    kind: str
    alpha: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in RULE_KINDS:
            raise ConfigurationError(f"unknown slope rule {self.kind!r}")
        if self.kind == "explicit":
            if self.alpha is None or not self.alpha > 0:
                raise ConfigurationError("explicit rule requires alpha > 0")
        elif self.alpha is not None:
            raise ConfigurationError(f"rule {self.kind!r} does not take an alpha")

    @property
    def guaranteed_control(self) -> bool:
        return self.kind in _GUARANTEED

    def resolve_alpha(self, tree: ClusterTree, weights: SizingWeights, q: float) -> float:
        if self.kind == "bh":
            return alpha_bh(len(tree), q)
        if self.kind == "by":
            return alpha_by(len(tree), q)
        if self.kind == "arbitrary":
            return alpha_arbitrary(weights, tree, q)
        if self.kind == "prds":
            return alpha_prds(weights, q)
        if self.kind == "pprds":
            return alpha_pairwise(weights, tree, q)
        if self.kind == "heuristic":
            return alpha_heuristic(tree.leaf_count, q)
        return float(self.alpha)  # explicit

    def label(self) -> str:
        if self.kind == "explicit":
            return f"explicit({self.alpha:g})"
        return self.kind

    @classmethod
    def parse(cls, text: str) -> "SlopeRule":
        text = text.strip().lower()
        if text.startswith("explicit"):
            inner = text[len("explicit"):].strip("()= ")
            try:
                return cls("explicit", float(inner))
            except ValueError as exc:
                raise ConfigurationError(f"cannot parse explicit alpha from {text!r}") from exc
        return cls(text)


def _check_q(q: float) -> float:
    if not 0 < q < 1:
        raise ConfigurationError(f"q must lie in (0, 1), got {q}")
    return float(q)


def alpha_bh(m: int, q: float) -> float:
    """Classical step-up slope m/q."""
    if m < 1:
        raise ConfigurationError("need at least one hypothesis")
    return m / _check_q(q)


def alpha_by(m: int, q: float) -> float:
    """Harmonic-sum slope m * (1 + 1/2 + ... + 1/m) / q."""
    if m < 1:
        raise ConfigurationError("need at least one hypothesis")
    harmonic = math.fsum(1.0 / j for j in range(1, m + 1))
    return m * harmonic / _check_q(q)


def alpha_arbitrary(weights: SizingWeights, tree: ClusterTree, q: float) -> float:
    """Slope valid under arbitrary dependence between the p-values.

    Uses the total weight as an upper bound for the unknown weight of the true
    nulls: ``[sum(phi) * (1 + ln(sigma_full)) - sum(phi * ln(phi))] / q`` where
    sigma_full is the sizing function of the full hypothesis set.  Requires
    strictly positive weights so the logs are defined.
    """
    _check_q(q)
    phi = weights.phi
    if np.any(phi <= 0):
        raise ConfigurationError(
            "the arbitrary-dependence slope needs strictly positive weights"
        )
    sigma_full = sigma(range(len(tree)), tree, weights)
    total = math.fsum(phi)
    entropy_term = math.fsum(p * math.log(p) for p in phi)
    return (total * (1.0 + math.log(sigma_full)) - entropy_term) / q


def alpha_prds(weights: SizingWeights, q: float) -> float:
    """Total-weight slope, valid under positive regression dependency."""
    return math.fsum(weights.phi) / _check_q(q)


def alpha_pairwise(weights: SizingWeights, tree: ClusterTree, q: float) -> float:
    """Finest-partition slope sigma(all)/q.

    Valid for monotonized p-values on a bifurcating family under the pairwise
    positive-dependency condition, because the sizing function then decomposes
    into nonnegative pairwise weights summing to sigma(all) (see the
    decomposition module for the verifier).
    """
    for node in tree.nodes:
        if len(node.children) > 2:
            raise StructuralError(
                f"node {node.id} covers more than two children; pairwise slope undefined"
            )
    return sigma(range(len(tree)), tree, weights) / _check_q(q)


def alpha_heuristic(p: int, q: float) -> float:
    """Predictor-count slope p/q; empirically tight but not guaranteed."""
    if p < 1:
        raise ConfigurationError("need at least one predictor")
    return p / _check_q(q)


@dataclass(frozen=True)
class SelectionResult:
    """Outcome of one step-up run.

    ``rejected`` is upward-closed; ``selected_sets`` are the member sets of its
    minimal clusters, i.e. the finest selections supported by the rejection.
    """

    rejected: HypothesisSet
    selected_sets: tuple[tuple[int, ...], ...]
    c_max: float
    alpha: float
    q: float
    rule: SlopeRule
    used_modified_pvalues: bool
    guaranteed_control: bool = field(default=True)

    def selected_node_ids(self, tree: ClusterTree) -> HypothesisSet:
        return minimal_elements(self.rejected, tree)

    def to_json_dict(self) -> dict:
        return {
            "rule": self.rule.label(),
            "q": self.q,
            "alpha": self.alpha,
            "c_max": self.c_max,
            "selected_sets": [list(s) for s in self.selected_sets],
            "rejected_node_ids": sorted(self.rejected),
            "used_modified_pvalues": self.used_modified_pvalues,
            "guaranteed_control": self.guaranteed_control,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)


def validate_pvalues(pvalues: Sequence[float], tree: ClusterTree) -> np.ndarray:
    values = np.asarray(pvalues, dtype=float)
    if values.shape != (len(tree),):
        raise ConfigurationError(
            f"expected one p-value per node ({len(tree)}), got shape {values.shape}"
        )
    if np.any(~np.isfinite(values)) or np.any(values < 0) or np.any(values > 1):
        raise ConfigurationError("p-values must lie in [0, 1]")
    return values


def compute_c_max(
    pvalues: Sequence[float],
    tree: ClusterTree,
    weights: SizingWeights,
    alpha: float,
) -> tuple[float, HypothesisSet]:
    """Largest cutoff at which the sized closed rejection dominates alpha*c.

    The map ``c -> sigma(closure(I_c))`` is a nondecreasing right-continuous
    step function with jumps only at observed p-values, so the supremum over
    [0, 1] is attained on the finite grid of distinct p-values and interval
    caps ``s_k / alpha``; no epsilon search is involved and all comparisons
    are exact.
    """
    if not alpha > 0:
        raise ConfigurationError(f"alpha must be positive, got {alpha}")
    values = validate_pvalues(pvalues, tree)

    order = np.argsort(values, kind="stable")
    phi = weights.phi
    parent = tree.parent

    in_set = np.zeros(len(tree), dtype=bool)
    member_below = np.zeros(len(tree), dtype=bool)
    minimal_ids: set[int] = set()

    def add(node_id: int) -> None:
        """Insert a node and its closure, maintaining the minimal set."""
        if in_set[node_id]:
            return
        in_set[node_id] = True
        minimal_ids.add(node_id)  # no descendant can be present yet
        current = parent[node_id]
        while current != -1:
            if member_below[current]:
                break
            member_below[current] = True
            if in_set[current]:
                minimal_ids.discard(current)  # ancestor stops being minimal
                break
            in_set[current] = True
            current = parent[current]

    c_max = 0.0
    pos = 0
    m = len(tree)
    while pos < m:
        value = float(values[order[pos]])
        while pos < m and values[order[pos]] == value:
            add(int(order[pos]))
            pos += 1
        next_value = float(values[order[pos]]) if pos < m else 1.0
        step_sigma = math.fsum(phi[i] for i in minimal_ids)
        if step_sigma >= alpha * value:
            candidate = min(step_sigma / alpha, next_value, 1.0)
            # candidate must itself satisfy the condition in float arithmetic
            while candidate > value and step_sigma < alpha * candidate:
                candidate = math.nextafter(candidate, 0.0)
            if candidate > c_max:
                c_max = candidate

    rejected = closure(np.flatnonzero(values <= c_max), tree)
    return c_max, rejected


def glsup(
    pvalues: Sequence[float],
    tree: ClusterTree,
    weights: SizingWeights,
    rule: SlopeRule,
    q: float,
) -> SelectionResult:
    """Step-up selection on the raw p-values.

    Resolves alpha from the rule, finds c_max, and returns the closed rejected
    set together with the minimal selected clusters.
    """
    alpha = rule.resolve_alpha(tree, weights, q)
    c_max, rejected = compute_c_max(pvalues, tree, weights, alpha)
    selected = tuple(
        tuple(sorted(tree.nodes[i].members)) for i in sorted(minimal_elements(rejected, tree))
    )
    return SelectionResult(
        rejected=rejected,
        selected_sets=selected,
        c_max=c_max,
        alpha=alpha,
        q=q,
        rule=rule,
        used_modified_pvalues=False,
        guaranteed_control=rule.guaranteed_control,
    )


def monotonize_pvalues(pvalues: Sequence[float], tree: ClusterTree) -> np.ndarray:
    """Replace each p-value by the maximum over the node and its ancestors.

    A cluster's hypothesis is implied by every enclosing cluster's hypothesis,
    so this is the supremum over implying hypotheses.  The result is pointwise
    >= the input, idempotent, and makes every sub-threshold set upward-closed.
    """
    values = validate_pvalues(pvalues, tree)
    modified = values.copy()
    for node_id in reversed(tree.topo_order):  # parents before children
        par = tree.parent[node_id]
        if par != -1 and modified[par] > modified[node_id]:
            modified[node_id] = modified[par]
    return modified


def mglsup(
    pvalues: Sequence[float],
    tree: ClusterTree,
    weights: SizingWeights,
    rule: SlopeRule,
    q: float,
) -> SelectionResult:
    """Step-up selection on monotonized p-values.

    Every sub-threshold set is already upward-closed, so closure is a no-op on
    the rejection; this is the procedure the pairwise-dependency slope is
    proved for.
    """
    modified = monotonize_pvalues(pvalues, tree)
    alpha = rule.resolve_alpha(tree, weights, q)
    c_max, rejected = compute_c_max(modified, tree, weights, alpha)
    raw_below = frozenset(int(i) for i in np.flatnonzero(modified <= c_max))
    if not is_upset(raw_below, tree) or rejected != raw_below:
        raise AssertionError(
            "monotonized sub-threshold set is not upward-closed; this is a bug"
        )
    selected = tuple(
        tuple(sorted(tree.nodes[i].members)) for i in sorted(minimal_elements(rejected, tree))
    )
    return SelectionResult(
        rejected=rejected,
        selected_sets=selected,
        c_max=c_max,
        alpha=alpha,
        q=q,
        rule=rule,
        used_modified_pvalues=True,
        guaranteed_control=rule.guaranteed_control,
    )
