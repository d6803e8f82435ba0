"""Leaf-budget-constrained binary decision trees over categorical features.

Splits are binary subset splits: a set of category levels routes left, the
remaining observed levels route right, and levels never seen at the node
follow the child that received more training rows (ties go left).  Growth is
best-first: the frontier leaf whose best split removes the most mass-weighted
impurity is expanded until the leaf budget is reached or no split strictly
reduces impurity.
"""

from __future__ import annotations

import heapq
import math
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .dataset import TableView
from .errors import EncodingError, ModelCorruptError, RegionNotFoundError
from .rules import Conjunction, Literal, parse_region, region_token

# Impurity decreases below this are treated as zero so float noise on
# homogeneous candidates cannot trigger a split.
MIN_DECREASE = 1e-12

DEFAULT_MIN_LEAF = 5


def gini(pos_count: int, neg_count: int) -> float:
    """Binary Gini impurity 1 - p^2 - q^2, in [0, 0.5]."""
    total = pos_count + neg_count
    if total <= 0:
        raise ValueError("gini is undefined for an empty node")
    p = pos_count / total
    q = neg_count / total
    return 1.0 - p * p - q * q


class SplitResult(NamedTuple):
    feature: int
    left_levels: frozenset[int]
    decrease: float


def best_split(
    cells: np.ndarray,
    y: np.ndarray,
    rows: np.ndarray,
    candidate_features: Sequence[int],
    min_leaf: int = 1,
) -> Optional[SplitResult]:
    """Best binary subset split over the candidate features, or None.

    For each categorical feature, observed levels are sorted by positive rate
    and the |V|-1 prefix cuts are scanned; for a binary outcome under Gini
    this finds the optimal subset.  Both children must keep at least
    ``min_leaf`` rows and the impurity decrease must be strictly positive.
    Ties break toward the lower feature index, then the lexicographically
    smaller left level set.
    """
    y_rows = y[rows].astype(np.float64)
    n = rows.size
    pos = float(y_rows.sum())
    neg = n - pos
    if pos == 0 or neg == 0:
        return None
    parent = gini(pos, neg)

    best: Optional[SplitResult] = None
    for f in sorted(candidate_features):
        codes = cells[rows, f]
        n_levels = int(codes.max()) + 1
        cnt = np.bincount(codes, minlength=n_levels).astype(np.float64)
        pos_l = np.bincount(codes, weights=y_rows, minlength=n_levels)
        observed = np.flatnonzero(cnt > 0)
        if observed.size < 2:
            continue
        rates = pos_l[observed] / cnt[observed]
        # lexsort: primary key positive rate, ties by level index
        order = observed[np.lexsort((observed, rates))]
        cum_n = np.cumsum(cnt[order])[:-1]
        cum_pos = np.cumsum(pos_l[order])[:-1]
        n_left = cum_n
        n_right = n - cum_n
        feasible = (n_left >= min_leaf) & (n_right >= min_leaf)
        if not feasible.any():
            continue
        pos_left = cum_pos
        neg_left = n_left - pos_left
        pos_right = pos - pos_left
        neg_right = n_right - pos_right
        with np.errstate(divide="ignore", invalid="ignore"):
            g_left = 1.0 - (pos_left**2 + neg_left**2) / n_left**2
            g_right = 1.0 - (pos_right**2 + neg_right**2) / n_right**2
        decrease = parent - (n_left * g_left + n_right * g_right) / n
        decrease[~feasible] = -np.inf
        top = float(decrease.max())
        if top <= MIN_DECREASE:
            continue
        cuts = np.flatnonzero(decrease == top)
        left_sets = [frozenset(int(v) for v in order[: c + 1]) for c in cuts]
        left = min(left_sets, key=lambda s: tuple(sorted(s)))
        if best is None or top > best.decrease:
            best = SplitResult(f, left, top)
    return best


class Node:
    """Tree node; leaves have ``feature is None`` and a region index."""

    __slots__ = (
        "feature",
        "left_levels",
        "right_levels",
        "default_left",
        "n_neg",
        "n_pos",
        "left",
        "right",
        "parent",
        "region",
        "order",
        "_lut",
    )

    def __init__(self, n_neg: int, n_pos: int, order: int = 0, parent=None):
        self.feature = None
        self.left_levels = None
        self.right_levels = None
        self.default_left = True
        self.n_neg = n_neg
        self.n_pos = n_pos
        self.left = None
        self.right = None
        self.parent = parent
        self.region = None
        self.order = order
        self._lut = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    @property
    def n_rows(self) -> int:
        return self.n_neg + self.n_pos

    def route_lut(self, n_levels: int) -> np.ndarray:
        """Per-level child codes (0 left, 1 right); unobserved levels get the
        heavier child."""
        if self._lut is None or self._lut.size < n_levels:
            lut = np.full(n_levels, 0 if self.default_left else 1, dtype=np.int8)
            lut[list(self.left_levels)] = 0
            lut[list(self.right_levels)] = 1
            self._lut = lut
        return self._lut


class DecisionTree:
    """Immutable after growth; safe for concurrent encoding."""

    def __init__(self, root: Node, leaves: list[Node], leaf_budget: int,
                 feature_names: Sequence[str], feature_levels: Sequence[Sequence[str]]):
        self.root = root
        self.leaves = list(leaves)
        self.leaf_budget = leaf_budget
        self.feature_names = tuple(feature_names)
        self.feature_levels = tuple(tuple(lv) for lv in feature_levels)

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)

    @property
    def regions(self) -> tuple[str, ...]:
        return tuple(region_token(i) for i in range(self.n_leaves))

    def leaf_rates(self) -> np.ndarray:
        """Training positive rate per region, used as a probability score."""
        return np.array(
            [leaf.n_pos / max(leaf.n_rows, 1) for leaf in self.leaves], dtype=np.float64
        )

    def encode(self, cells: np.ndarray) -> np.ndarray:
        """Region index per row; codes of -1 mean "token unseen in training"
        and follow the heavier-child rule at every node."""
        n = cells.shape[0]
        out = np.empty(n, dtype=np.int32)
        stack = [(self.root, np.arange(n))]
        while stack:
            node, idx = stack.pop()
            if node.is_leaf:
                out[idx] = node.region
                continue
            codes = cells[idx, node.feature]
            lut = node.route_lut(len(self.feature_levels[node.feature]))
            side = lut[np.maximum(codes, 0)]
            if codes.min() < 0:
                side = np.where(codes >= 0, side, 0 if node.default_left else 1)
            stack.append((node.left, idx[side == 0]))
            stack.append((node.right, idx[side == 1]))
        return out

    def encode_row(self, codes: Sequence[int]) -> int:
        row = np.asarray(codes, dtype=np.int32)
        if row.shape != (len(self.feature_names),):
            raise EncodingError(
                f"row has {row.size} values, tree expects {len(self.feature_names)}"
            )
        return int(self.encode(row.reshape(1, -1))[0])

    def path_rule(self, region) -> Conjunction:
        """Conjunction of membership literals for the root-to-leaf path.

        Literal token sets reflect actual routing: when the heavier-child
        default points at a branch, that branch's set also carries every
        level unobserved at the node, so path satisfaction is logically
        equivalent to :meth:`encode` for any token in the level universe.
        Literals on the same feature are merged by intersection.
        """
        region = parse_region(region)
        if not 0 <= region < self.n_leaves:
            raise RegionNotFoundError(f"tree has no region {region_token(region)}")
        node = self.leaves[region]
        constraints: dict[int, set[int]] = {}
        while node.parent is not None:
            parent = node.parent
            full = set(range(len(self.feature_levels[parent.feature])))
            if node is parent.left:
                allowed = full - parent.right_levels if parent.default_left else set(parent.left_levels)
            else:
                allowed = set(parent.right_levels) if parent.default_left else full - parent.left_levels
            cur = constraints.get(parent.feature)
            constraints[parent.feature] = allowed if cur is None else cur & allowed
            node = parent
        literals = []
        for f in sorted(constraints):
            tokens = frozenset(self.feature_levels[f][i] for i in constraints[f])
            literals.append(Literal(self.feature_names[f], tokens))
        return Conjunction(tuple(literals))

    def to_dict(self) -> dict:
        def node_dict(node: Node) -> dict:
            if node.is_leaf:
                return {
                    "region": region_token(node.region),
                    "n_neg": node.n_neg,
                    "n_pos": node.n_pos,
                }
            levels = self.feature_levels[node.feature]
            return {
                "feature": self.feature_names[node.feature],
                "left_levels": [levels[i] for i in sorted(node.left_levels)],
                "right_levels": [levels[i] for i in sorted(node.right_levels)],
                "default": "left" if node.default_left else "right",
                "n_neg": node.n_neg,
                "n_pos": node.n_pos,
                "left": node_dict(node.left),
                "right": node_dict(node.right),
            }

        return {"leaf_budget": self.leaf_budget, "root": node_dict(self.root)}

    @classmethod
    def from_dict(cls, data: dict, feature_names: Sequence[str],
                  feature_levels: Sequence[Sequence[str]]) -> "DecisionTree":
        name_to_idx = {n: i for i, n in enumerate(feature_names)}
        level_idx = [{t: i for i, t in enumerate(lv)} for lv in feature_levels]
        leaves: dict[int, Node] = {}

        def build(d: dict, parent) -> Node:
            try:
                node = Node(int(d["n_neg"]), int(d["n_pos"]), parent=parent)
                if "region" in d:
                    node.region = parse_region(d["region"])
                    leaves[node.region] = node
                    return node
                f = name_to_idx[d["feature"]]
                node.feature = f
                node.left_levels = frozenset(level_idx[f][t] for t in d["left_levels"])
                node.right_levels = frozenset(level_idx[f][t] for t in d["right_levels"])
                node.default_left = d["default"] == "left"
                node.left = build(d["left"], node)
                node.right = build(d["right"], node)
                return node
            except (KeyError, ValueError, TypeError) as exc:
                raise ModelCorruptError(f"malformed tree node: {exc}") from exc

        root = build(data["root"], None)
        if sorted(leaves) != list(range(len(leaves))):
            raise ModelCorruptError("tree regions are not contiguous")
        ordered = [leaves[i] for i in range(len(leaves))]
        return cls(root, ordered, int(data["leaf_budget"]), feature_names, feature_levels)


def grow_tree(
    view: TableView,
    leaf_budget: int,
    feature_sample: int,
    rng: np.random.Generator,
    min_leaf: int = DEFAULT_MIN_LEAF,
    rows: np.ndarray | None = None,
) -> DecisionTree:
    """Grow a tree best-first until the leaf budget or no useful split.

    ``feature_sample`` candidate features are drawn per leaf from ``rng``
    (0 means ceil(sqrt(p)); values larger than p are clamped).  ``rows``
    optionally restricts training to a row multiset (bootstrap sample).
    Region ids follow leaf creation order.
    """
    if leaf_budget < 1:
        raise ValueError("leaf_budget must be at least 1")
    cells, levels, names, y = view
    n, p = cells.shape
    if rows is None:
        rows = np.arange(n)
    if feature_sample == 0:
        feature_sample = math.isqrt(p) + (0 if math.isqrt(p) ** 2 == p else 1)
    feature_sample = min(max(int(feature_sample), 1), p)

    counter = 0

    def new_node(node_rows: np.ndarray, parent) -> Node:
        nonlocal counter
        n_pos = int(y[node_rows].sum())
        node = Node(node_rows.size - n_pos, n_pos, order=counter, parent=parent)
        counter += 1
        return node

    def evaluate(node: Node, node_rows: np.ndarray):
        cand = np.sort(rng.choice(p, size=feature_sample, replace=False))
        split = best_split(cells, y, node_rows, cand.tolist(), min_leaf=min_leaf)
        if split is not None:
            # mass-weighted priority so the budget goes where it matters
            heapq.heappush(frontier, (-node_rows.size * split.decrease, node.order, node, node_rows, split))

    root = new_node(rows, None)
    frontier: list = []
    n_leaves = 1
    if leaf_budget > 1:
        evaluate(root, rows)
    while n_leaves < leaf_budget and frontier:
        _, _, node, node_rows, split = heapq.heappop(frontier)
        f = split.feature
        codes = cells[node_rows, f]
        n_levels = len(levels[f])
        lut = np.zeros(n_levels, dtype=bool)
        lut[list(split.left_levels)] = True
        mask = lut[codes]
        left_rows = node_rows[mask]
        right_rows = node_rows[~mask]
        observed = frozenset(int(v) for v in np.unique(codes))
        node.feature = f
        node.left_levels = split.left_levels
        node.right_levels = observed - split.left_levels
        node.default_left = left_rows.size >= right_rows.size
        node.left = new_node(left_rows, node)
        node.right = new_node(right_rows, node)
        n_leaves += 1
        if n_leaves < leaf_budget:
            evaluate(node.left, left_rows)
            evaluate(node.right, right_rows)

    leaves = []
    stack = [root]
    while stack:
        nd = stack.pop()
        if nd.is_leaf:
            leaves.append(nd)
        else:
            stack.extend((nd.right, nd.left))
    leaves.sort(key=lambda nd: nd.order)
    for i, leaf in enumerate(leaves):
        leaf.region = i
    return DecisionTree(root, leaves, leaf_budget, names, levels)
