"""Rank-based AUC, the planted-rule synthetic generator, and the
representation-vs-learner benchmark grid."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .dataset import KIND_BINARY, Dataset, remap_codes
from .errors import DrfError, MetricError
from .forest import LayerConfig, RegionTable
from .model import DeepRuleForest
from .rules import Conjunction, Dnf, Literal, covers
from .tree import grow_tree


def auc(scores, labels) -> float:
    """Area under the ROC curve via midranks (Mann-Whitney form).

    Tied score pairs count half, exactly matching O(n^2) pair counting.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both classes present")
    _, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    midranks = starts[inverse] + (counts[inverse] + 1) / 2.0
    rank_sum = float(midranks[labels == 1].sum())
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def roc_points(scores, labels) -> np.ndarray:
    """(fpr, tpr) pairs at every distinct threshold, descending."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("ROC needs both classes present")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    tp = np.cumsum(y == 1)
    fp = np.cumsum(y == 0)
    last = np.flatnonzero(np.diff(np.append(s, np.nan)) != 0)
    pts = [(0.0, 0.0)]
    pts.extend((fp[i] / n_neg, tp[i] / n_pos) for i in last)
    return np.array(pts)


@dataclass(frozen=True)
class SynthSpec:
    """Planted-rule generator spec.

    Features are independent Bernoulli(0.5) binary columns; the label is 1
    with ``lifted_rate`` where the planted DNF holds and ``base_rate``
    elsewhere.  Noise features are named ``Z1..Zk``.
    """

    n_rows: int
    n_noise_features: int
    planted: Dnf
    base_rate: float
    lifted_rate: float
    seed: int = 0
    target_name: str = "y"

    def __post_init__(self):
        if self.n_rows < 1:
            raise DrfError("n_rows must be positive")
        if self.n_noise_features < 0:
            raise DrfError("n_noise_features must be non-negative")
        if not 0.0 <= self.base_rate <= self.lifted_rate <= 1.0:
            raise DrfError("need 0 <= base_rate <= lifted_rate <= 1")

    @property
    def feature_names(self) -> list[str]:
        named: list[str] = []
        for term in self.planted.terms:
            for lit in term.literals:
                if lit.feature not in named:
                    named.append(lit.feature)
        named.extend(f"Z{i}" for i in range(1, self.n_noise_features + 1))
        return named

    @classmethod
    def from_json(cls, doc: dict) -> "SynthSpec":
        try:
            terms = []
            for term in doc["planted"]:
                lits = []
                for lit in term:
                    if isinstance(lit, str):
                        lits.append(Literal(lit, frozenset({"1"})))
                    else:
                        name, allowed = lit
                        lits.append(Literal(str(name), frozenset(str(a) for a in allowed)))
                terms.append(Conjunction(tuple(lits)))
            return cls(
                n_rows=int(doc["n_rows"]),
                n_noise_features=int(doc.get("n_noise_features", 0)),
                planted=Dnf(tuple(terms)),
                base_rate=float(doc["base_rate"]),
                lifted_rate=float(doc["lifted_rate"]),
                seed=int(doc.get("seed", 0)),
                target_name=str(doc.get("target_name", "y")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DrfError(f"malformed synthetic spec: {exc}") from exc

    @classmethod
    def from_file(cls, path) -> "SynthSpec":
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DrfError(f"{path}: not valid JSON: {exc}") from exc
        return cls.from_json(doc)


def synth(spec: SynthSpec) -> Dataset:
    """Draw a dataset from the spec; deterministic in ``spec.seed``."""
    names = spec.feature_names
    planted_features = {lit.feature for t in spec.planted.terms for lit in t.literals}
    if not planted_features.issubset(names):
        raise DrfError("planted rule references undeclared features")
    rng = np.random.default_rng(spec.seed)
    values = rng.integers(0, 2, size=(spec.n_rows, len(names)))
    tokens = values.astype(str)
    data = Dataset.from_arrays(
        tokens,
        np.zeros(spec.n_rows, dtype=np.int8),
        names=names,
        kinds=[KIND_BINARY] * len(names),
        target_name=spec.target_name,
    )
    hit = covers(spec.planted, data)
    rates = np.where(hit, spec.lifted_rate, spec.base_rate)
    y = (rng.random(spec.n_rows) < rates).astype(np.int8)
    return Dataset.from_arrays(
        tokens, y, names=names, kinds=[KIND_BINARY] * len(names),
        target_name=spec.target_name,
    )


# ---------------------------------------------------------------------------
# Benchmark grid
# ---------------------------------------------------------------------------

TREE_LEARNER = "tree"
ENET_LEARNER = "elastic_net"
RAW_REPR = "raw"

BENCH_TREE_BUDGET = 16


@dataclass(frozen=True)
class BenchReport:
    """Held-out AUC per (representation, learner) cell."""

    cells: dict[tuple[str, str], float]
    meta: dict = field(default_factory=dict)

    @property
    def representations(self) -> list[str]:
        seen = []
        for rep, _ in self.cells:
            if rep not in seen:
                seen.append(rep)
        return seen

    def to_tsv(self) -> str:
        lines = [f"# {k}={v}" for k, v in sorted(self.meta.items())]
        lines.append("\t".join(["representation", TREE_LEARNER, ENET_LEARNER]))
        for rep in self.representations:
            row = [rep]
            for learner in (TREE_LEARNER, ENET_LEARNER):
                row.append(f"{self.cells[(rep, learner)]:.4f}")
            lines.append("\t".join(row))
        return "\n".join(lines) + "\n"


def _dataset_indicators(data: Dataset, reference: Dataset | None = None) -> np.ndarray:
    """Per-level 0/1 columns over raw features, aligned to a reference schema."""
    ref = reference if reference is not None else data
    cells = data.cells
    if reference is not None:
        cells = remap_codes(
            cells,
            [f.levels for f in data.schema.predictors],
            [f.levels for f in ref.schema.predictors],
        )
    blocks = []
    for j, spec in enumerate(ref.schema.predictors):
        block = np.zeros((data.n_rows, len(spec.levels)), dtype=np.float64)
        valid = cells[:, j] >= 0
        block[np.flatnonzero(valid), cells[valid, j]] = 1.0
        blocks.append(block)
    return np.concatenate(blocks, axis=1)


def _tree_scores(train_view, test_view, budget, min_leaf, rng) -> np.ndarray:
    tree = grow_tree(train_view, leaf_budget=budget, feature_sample=train_view.cells.shape[1],
                     rng=rng, min_leaf=min_leaf)
    cells = test_view.cells
    if test_view.levels != train_view.levels:
        cells = remap_codes(cells, test_view.levels, train_view.levels)
    return tree.leaf_rates()[tree.encode(cells)]


def benchmark(
    train: Dataset,
    test: Dataset,
    layers: list[LayerConfig] | str | None = None,
    seed: int = 0,
    alpha: float = 0.5,
    tree_budget: int = BENCH_TREE_BUDGET,
    min_leaf: int = 5,
    threads: int = 1,
) -> BenchReport:
    """Held-out AUC for {single tree, elastic net} x {raw, each DRF layer}."""
    from .elasticnet import fit_enet, indicator_matrix

    if layers is None:
        layers = [LayerConfig()] * 3
    model = DeepRuleForest(layers=layers, random_state=seed, threads=threads).fit(train)

    cells: dict[tuple[str, str], float] = {}
    y_test = test.target

    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0, 10_000)))
    scores = _tree_scores(train.view(), test.view(), tree_budget, min_leaf, rng)
    cells[(RAW_REPR, TREE_LEARNER)] = auc(scores, y_test)

    x_tr = _dataset_indicators(train)
    x_te = _dataset_indicators(test, reference=train)
    enet = fit_enet(x_tr, train.target, alpha=alpha, seed=seed)
    cells[(RAW_REPR, ENET_LEARNER)] = auc(enet.decision_function(x_te), y_test)

    table_tr: Dataset | RegionTable = train
    table_te: Dataset | RegionTable = test
    for layer_index in range(1, model.n_layers_ + 1):
        from .forest import encode_table

        forest = model.forests_[layer_index - 1]
        table_tr = encode_table(forest, table_tr)
        table_te = encode_table(forest, table_te)
        rep = f"layer {layer_index}"

        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(layer_index, 10_000))
        )
        scores = _tree_scores(table_tr.view(), table_te.view(), tree_budget, min_leaf, rng)
        cells[(rep, TREE_LEARNER)] = auc(scores, y_test)

        x_tr, _ = indicator_matrix(table_tr)
        x_te, _ = indicator_matrix(table_te)
        enet = fit_enet(x_tr, train.target, alpha=alpha, seed=seed)
        cells[(rep, ENET_LEARNER)] = auc(enet.decision_function(x_te), y_test)

    meta = {
        "seed": seed,
        "n_train": train.n_rows,
        "n_test": test.n_rows,
        "alpha": alpha,
        "tree_budget": tree_budget,
    }
    return BenchReport(cells=cells, meta=meta)
