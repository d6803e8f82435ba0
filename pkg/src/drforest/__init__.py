"""Layer-wise rule forests for categorical data.

Trees re-encode rows as region ids layer by layer; regions expand into
human-readable DNF rules over the raw features, and an elastic-net logistic
model ranks them, with odds ratios for the top rules.
"""

from .dataset import (
    Dataset,
    FeatureSpec,
    Schema,
    TableView,
    load_csv,
    load_schema,
    stratified_split,
    write_csv,
    write_schema,
)
from .elasticnet import (
    ElasticNetLogistic,
    OddsRatio,
    RuleEntry,
    RuleReport,
    fit_enet,
    indicator_matrix,
    logistic_refit,
    odds_ratios,
    rank_rules,
)
from .evaluation import BenchReport, SynthSpec, auc, benchmark, roc_points, synth
from .forest import Forest, LayerConfig, RegionTable, encode_table, fit_layer
from .model import DeepRuleForest, load_model, parse_layers, save_model
from .rules import (
    Conjunction,
    Dnf,
    Literal,
    conjunction,
    coverage,
    covers,
    evaluate,
    expand_region,
    format_dnf,
    simplify,
)
from .tree import DecisionTree, Node, best_split, gini, grow_tree
from . import errors

__version__ = "0.1.0"

__all__ = [
    "BenchReport",
    "Conjunction",
    "Dataset",
    "DecisionTree",
    "DeepRuleForest",
    "Dnf",
    "ElasticNetLogistic",
    "FeatureSpec",
    "Forest",
    "LayerConfig",
    "Literal",
    "Node",
    "OddsRatio",
    "RegionTable",
    "RuleEntry",
    "RuleReport",
    "Schema",
    "SynthSpec",
    "TableView",
    "auc",
    "benchmark",
    "best_split",
    "conjunction",
    "coverage",
    "covers",
    "encode_table",
    "errors",
    "evaluate",
    "expand_region",
    "fit_enet",
    "fit_layer",
    "format_dnf",
    "gini",
    "grow_tree",
    "indicator_matrix",
    "load_csv",
    "load_model",
    "load_schema",
    "logistic_refit",
    "odds_ratios",
    "parse_layers",
    "rank_rules",
    "roc_points",
    "save_model",
    "simplify",
    "stratified_split",
    "synth",
    "write_csv",
    "write_schema",
]
