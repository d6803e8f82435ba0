"""One layer of the stack: a forest of leaf-budget-diverse trees and the
region table its trees produce."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .dataset import Dataset, TableView, remap_codes
from .errors import EncodingError
from .rules import region_column
from .tree import DecisionTree, grow_tree


@dataclass(frozen=True)
class LayerConfig:
    """Per-layer training knobs.

    ``feature_sample`` of 0 means ceil(sqrt(p)) candidate features per node.
    Tree ``t`` (0-based) receives leaf budget
    ``leaf_budget_min + (t mod (leaf_budget_max - leaf_budget_min + 1))``.
    """

    n_trees: int = 100
    leaf_budget_min: int = 2
    leaf_budget_max: int = 11
    feature_sample: int = 0
    bootstrap: bool = True
    min_leaf: int = 5

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be at least 1")
        if not 1 <= self.leaf_budget_min <= self.leaf_budget_max:
            raise ValueError("need 1 <= leaf_budget_min <= leaf_budget_max")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be at least 1")

    def budget_for(self, t: int) -> int:
        span = self.leaf_budget_max - self.leaf_budget_min + 1
        return self.leaf_budget_min + (t % span)


@dataclass(frozen=True)
class RegionTable:
    """Re-encoded table: one categorical column of region ids per tree."""

    layer_index: int
    column_names: tuple[str, ...]
    column_levels: tuple[tuple[str, ...], ...]
    cells: np.ndarray  # (n_rows, n_trees) int32 region indices
    target: np.ndarray  # (n_rows,) int8

    @property
    def n_rows(self) -> int:
        return self.cells.shape[0]

    @property
    def n_columns(self) -> int:
        return self.cells.shape[1]

    def view(self) -> TableView:
        return TableView(self.cells, self.column_levels, self.column_names, self.target)


Table = Union[Dataset, RegionTable]


@dataclass(frozen=True)
class Forest:
    """Trees of one layer plus the input columns they were trained on."""

    layer_index: int
    trees: tuple[DecisionTree, ...]
    input_names: tuple[str, ...]
    input_levels: tuple[tuple[str, ...], ...]

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(region_column(self.layer_index, t + 1) for t in range(self.n_trees))

    @property
    def column_levels(self) -> tuple[tuple[str, ...], ...]:
        return tuple(tree.regions for tree in self.trees)


def fit_layer(
    table: Table,
    cfg: LayerConfig,
    layer_index: int,
    master_seed: int,
    threads: int = 1,
) -> Forest:
    """Train one forest.  Tree ``t`` draws its own rng stream from
    ``(master_seed, layer_index, t)``, so results do not depend on thread
    count or training order."""
    view = table.view()
    n = view.cells.shape[0]
    if n == 0:
        raise EncodingError("cannot fit a layer on an empty table")

    def train_one(t: int) -> DecisionTree:
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=master_seed, spawn_key=(layer_index, t))
        )
        rows = np.sort(rng.integers(0, n, size=n)) if cfg.bootstrap else None
        return grow_tree(
            view,
            leaf_budget=cfg.budget_for(t),
            feature_sample=cfg.feature_sample,
            rng=rng,
            min_leaf=cfg.min_leaf,
            rows=rows,
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trees = tuple(pool.map(train_one, range(cfg.n_trees)))
    else:
        trees = tuple(train_one(t) for t in range(cfg.n_trees))
    return Forest(layer_index, trees, view.names, view.levels)


def encode_table(forest: Forest, table: Table) -> RegionTable:
    """Map every row to its containing region under each tree.

    Column names must match the forest's training columns.  Level lists may
    differ (a fresh CSV can carry new tokens); tokens are re-matched and
    unseen ones route by the heavier-child rule.
    """
    view = table.view()
    if view.names != forest.input_names:
        raise EncodingError(
            f"table columns {view.names[:4]}... do not match the forest's training columns"
        )
    cells = view.cells
    if view.levels != forest.input_levels:
        cells = remap_codes(cells, view.levels, forest.input_levels)
    out = np.empty((cells.shape[0], forest.n_trees), dtype=np.int32)
    for t, tree in enumerate(forest.trees):
        out[:, t] = tree.encode(cells)
    out.setflags(write=False)
    return RegionTable(
        layer_index=forest.layer_index,
        column_names=forest.column_names,
        column_levels=forest.column_levels,
        cells=out,
        target=view.y,
    )
