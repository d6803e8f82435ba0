"""Layer-wise stacking of rule forests behind a fit/transform estimator."""

from __future__ import annotations

import json
import os
import re
import tempfile

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .dataset import Dataset, FeatureSpec, Schema
from .errors import (
    EncodingError,
    ModelCorruptError,
    ModelTruncatedError,
    ModelVersionError,
)
from .forest import Forest, LayerConfig, RegionTable, encode_table, fit_layer
from .tree import DecisionTree

FORMAT_NAME = "drf-model"
FORMAT_VERSION = 1

PAPER_LAYERS = "100x2..11,100x2..11,100x3..3"

_LAYER_RE = re.compile(r"^(\d+)x(\d+)(?:\.\.(\d+))?$")


def parse_layers(
    spec: str,
    feature_sample: int = 0,
    bootstrap: bool = True,
    min_leaf: int = 5,
) -> list[LayerConfig]:
    """Parse a layer spec like ``"100x2..11,100x2..11,100x3..3"``."""
    configs = []
    for part in spec.split(","):
        m = _LAYER_RE.match(part.strip())
        if not m:
            raise ValueError(f"bad layer spec {part!r}; expected: <trees>x<min>..<max>")
        n_trees, lo = int(m.group(1)), int(m.group(2))
        hi = int(m.group(3)) if m.group(3) else lo
        configs.append(
            LayerConfig(
                n_trees=n_trees,
                leaf_budget_min=lo,
                leaf_budget_max=hi,
                feature_sample=feature_sample,
                bootstrap=bootstrap,
                min_leaf=min_leaf,
            )
        )
    if not configs:
        raise ValueError("layer spec declares no layers")
    return configs


class DeepRuleForest(BaseEstimator, TransformerMixin):
    """Stacked forests that re-encode categorical rows as region ids.

    Layer 1 trains on the raw columns; each later layer trains on the region
    table of the one before, so its splits select sets of earlier regions.
    The fitted model is an sklearn-style transformer: ``transform`` returns
    the :class:`RegionTable` after the requested layer.

    Parameters
    ----------
    layers : str or list of LayerConfig
        Layer spec string (``"<trees>x<min>..<max>"`` per layer,
        comma-separated) or explicit configs.  The default is three layers
        of 100 trees with leaf budgets 2-11, 2-11 and 3.
    min_leaf, bootstrap, feature_sample :
        Applied to every layer when ``layers`` is given as a string.
    random_state : int
        Master seed; every tree derives its own stream from it.
    threads : int
        Worker cap for within-layer training; never changes results.
    """

    def __init__(
        self,
        layers: str | list[LayerConfig] = PAPER_LAYERS,
        min_leaf: int = 5,
        bootstrap: bool = True,
        feature_sample: int = 0,
        random_state: int = 0,
        threads: int = 1,
    ):
        self.layers = layers
        self.min_leaf = min_leaf
        self.bootstrap = bootstrap
        self.feature_sample = feature_sample
        self.random_state = random_state
        self.threads = threads

    def _resolve_layers(self) -> list[LayerConfig]:
        if isinstance(self.layers, str):
            return parse_layers(
                self.layers,
                feature_sample=self.feature_sample,
                bootstrap=self.bootstrap,
                min_leaf=self.min_leaf,
            )
        configs = list(self.layers)
        if not configs:
            raise ValueError("layers must declare at least one layer")
        return configs

    def _as_dataset(self, X, y=None) -> Dataset:
        if isinstance(X, Dataset):
            return X
        return Dataset.from_arrays(X, y)

    def fit(self, X, y=None):
        """Fit on a :class:`Dataset` (labels included) or a 2-D token array
        with a 0/1 label vector."""
        data = self._as_dataset(X, y)
        self.layer_configs_ = self._resolve_layers()
        self.schema_ = data.schema
        self.n_features_in_ = data.n_features
        forests = []
        table = data
        for i, cfg in enumerate(self.layer_configs_, start=1):
            forest = fit_layer(table, cfg, i, self.random_state, threads=self.threads)
            table = encode_table(forest, table)
            forests.append(forest)
        self.forests_ = tuple(forests)
        return self

    @property
    def n_layers_(self) -> int:
        check_is_fitted(self, "forests_")
        return len(self.forests_)

    def _check_input(self, X, y=None) -> Dataset:
        check_is_fitted(self, "forests_")
        data = self._as_dataset(X, y)
        if not data.schema.compatible_with(self.schema_):
            raise EncodingError("data schema does not match the model's training schema")
        return data

    def transform(self, X, upto_layer: int | None = None, y=None) -> RegionTable:
        """Region table after ``upto_layer`` (default: the last layer)."""
        data = self._check_input(X, y)
        upto = self.n_layers_ if upto_layer is None else int(upto_layer)
        if not 1 <= upto <= self.n_layers_:
            raise ValueError(f"layer must be in 1..{self.n_layers_}, got {upto}")
        table = data
        for forest in self.forests_[:upto]:
            table = encode_table(forest, table)
        return table

    def predict_scores(self, X, layer: int | None = None) -> np.ndarray:
        """Mean training positive rate of each row's regions at a layer.

        This is the forest-style probability estimate used by ``drf eval``.
        """
        table = self.transform(X, upto_layer=layer)
        forest = self.forests_[table.layer_index - 1]
        scores = np.zeros(table.n_rows, dtype=np.float64)
        for t, tree in enumerate(forest.trees):
            scores += tree.leaf_rates()[table.cells[:, t]]
        return scores / forest.n_trees


def _schema_to_json(schema: Schema) -> list[dict]:
    return [
        {"name": f.name, "kind": f.kind, "levels": list(f.levels)}
        for f in schema.features
    ]


def _schema_from_json(items) -> Schema:
    try:
        return Schema(
            tuple(FeatureSpec(d["name"], d["kind"], tuple(d["levels"])) for d in items)
        )
    except (KeyError, TypeError) as exc:
        raise ModelCorruptError(f"malformed schema section: {exc}") from exc


def model_to_json(model: DeepRuleForest) -> str:
    check_is_fitted(model, "forests_")
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "random_state": model.random_state,
        "layer_configs": [
            {
                "n_trees": c.n_trees,
                "leaf_budget_min": c.leaf_budget_min,
                "leaf_budget_max": c.leaf_budget_max,
                "feature_sample": c.feature_sample,
                "bootstrap": c.bootstrap,
                "min_leaf": c.min_leaf,
            }
            for c in model.layer_configs_
        ],
        "schema": _schema_to_json(model.schema_),
        "forests": [
            {"layer": f.layer_index, "trees": [t.to_dict() for t in f.trees]}
            for f in model.forests_
        ],
    }
    return json.dumps(doc, ensure_ascii=False, indent=1) + "\n"


def model_from_json(text: str) -> DeepRuleForest:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        # A parse failure at the end of the document means the file was cut
        # short; anywhere else means garbled content.
        if exc.pos >= len(text.rstrip()):
            raise ModelTruncatedError(f"model file ends mid-document: {exc}") from exc
        raise ModelCorruptError(f"model file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise ModelCorruptError("not a model file (missing format marker)")
    if doc.get("version") != FORMAT_VERSION:
        raise ModelVersionError(
            f"unsupported model version {doc.get('version')!r}; expected {FORMAT_VERSION}"
        )
    try:
        schema = _schema_from_json(doc["schema"])
        configs = [LayerConfig(**c) for c in doc["layer_configs"]]
        model = DeepRuleForest(layers=configs, random_state=int(doc["random_state"]))
        model.layer_configs_ = configs
        model.schema_ = schema
        model.n_features_in_ = len(schema.predictors)
        names = schema.predictor_names
        levels = tuple(f.levels for f in schema.predictors)
        forests = []
        for entry in doc["forests"]:
            layer_index = int(entry["layer"])
            trees = tuple(
                DecisionTree.from_dict(t, names, levels) for t in entry["trees"]
            )
            forest = Forest(layer_index, trees, names, levels)
            names = forest.column_names
            levels = forest.column_levels
            forests.append(forest)
        model.forests_ = tuple(forests)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelCorruptError(f"malformed model document: {exc}") from exc
    return model


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the same directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(model: DeepRuleForest, path) -> None:
    atomic_write_text(path, model_to_json(model))


def load_model(path) -> DeepRuleForest:
    with open(path, encoding="utf-8") as fh:
        return model_from_json(fh.read())
