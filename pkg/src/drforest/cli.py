"""Command-line front end: train, transform, rules, explain, eval, synth."""

from __future__ import annotations

import argparse
import dataclasses
import sys

import numpy as np

from .dataset import load_csv, stratified_split, to_csv_text, to_schema_text
from .elasticnet import fit_enet, indicator_matrix, odds_ratios, rank_rules
from .errors import DrfError, UsageError
from .evaluation import SynthSpec, auc, benchmark, synth
from .model import (
    PAPER_LAYERS,
    DeepRuleForest,
    atomic_write_text,
    load_model,
    model_to_json,
    parse_layers,
)
from .rules import expand_region, format_dnf

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage().rstrip()}\n{self.prog}: error: {message}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="drf", description="Layer-wise rule forests over categorical data.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("train", parser_class=_Parser, help="fit a model and save it")
    p.add_argument("--data", required=True, help="training CSV")
    p.add_argument("--schema", required=True, help="schema file (name,kind per line)")
    p.add_argument("--layers", default=PAPER_LAYERS,
                   help="per-layer spec '<trees>x<min>..<max>,...' (default: %(default)s)")
    p.add_argument("--seed", required=True, type=int, help="master seed")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--min-leaf", type=int, default=5)
    p.add_argument("--no-bootstrap", action="store_true")
    p.add_argument("--threads", type=int, default=1,
                   help="worker cap for tree training; never changes results")

    p = sub.add_parser("transform", parser_class=_Parser, help="write a region table CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--layer", required=True, type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("rules", parser_class=_Parser, help="print one region's DNF rule")
    p.add_argument("--model", required=True)
    p.add_argument("--layer", required=True, type=int)
    p.add_argument("--tree", required=True, type=int)
    p.add_argument("--region", required=True, help="region id such as r1")
    p.add_argument("--max-terms", type=int, default=512)

    p = sub.add_parser("explain", parser_class=_Parser,
                       help="rank region rules with an elastic net and report odds ratios")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--layer", required=True, type=int)
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0, help="cross-validation fold seed")
    p.add_argument("--max-terms", type=int, default=512)
    p.add_argument("--out", required=True, help="report file (TSV)")

    p = sub.add_parser("eval", parser_class=_Parser, help="score a model or run the benchmark grid")
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--metric", default="auc", choices=["auc"])
    p.add_argument("--layer", type=int, help="score at this layer (default: last)")
    p.add_argument("--bench", action="store_true")
    p.add_argument("--train", help="benchmark training CSV")
    p.add_argument("--test", help="benchmark held-out CSV")
    p.add_argument("--schema", help="schema file for benchmark CSVs")
    p.add_argument("--layers", default=PAPER_LAYERS)
    p.add_argument("--test-fraction", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", help="benchmark report file (TSV)")

    p = sub.add_parser("synth", parser_class=_Parser, help="generate planted-rule data")
    p.add_argument("--spec", required=True, help="JSON spec file")
    p.add_argument("--out", required=True, help="CSV to write")
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--schema-out", help="also write a matching schema file")
    return parser


def _cmd_train(args) -> int:
    data = load_csv(args.data, schema_path=args.schema)
    layers = parse_layers(args.layers, bootstrap=not args.no_bootstrap, min_leaf=args.min_leaf)
    model = DeepRuleForest(layers=layers, random_state=args.seed, threads=args.threads).fit(data)
    atomic_write_text(args.out, model_to_json(model))
    n_regions = sum(t.n_leaves for f in model.forests_ for t in f.trees)
    print(f"trained {model.n_layers_} layers on {data.n_rows} rows "
          f"({n_regions} regions); wrote {args.out}")
    return EXIT_OK


def _cmd_transform(args) -> int:
    model = load_model(args.model)
    data = load_csv(args.data, schema=model.schema_)
    table = model.transform(data, upto_layer=args.layer)
    lines = [",".join(list(table.column_names) + [model.schema_.target.name])]
    for i in range(table.n_rows):
        row = [table.column_levels[t][table.cells[i, t]] for t in range(table.n_columns)]
        row.append(str(int(table.target[i])))
        lines.append(",".join(row))
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    print(f"wrote {table.n_rows} rows x {table.n_columns} region columns to {args.out}")
    return EXIT_OK


def _cmd_rules(args) -> int:
    model = load_model(args.model)
    dnf = expand_region(model, args.layer, args.tree, args.region, max_terms=args.max_terms)
    print(format_dnf(dnf, model.schema_))
    if dnf.truncated:
        print(f"note: expansion truncated at {args.max_terms} terms", file=sys.stderr)
    return EXIT_OK


def _cmd_explain(args) -> int:
    model = load_model(args.model)
    data = load_csv(args.data, schema=model.schema_)
    table = model.transform(data, upto_layer=args.layer)
    x, _ = indicator_matrix(table)
    fit = fit_enet(x, data.target, alpha=args.alpha, seed=args.seed)
    report = rank_rules(fit, model, args.layer, args.top_k, data, max_terms=args.max_terms)
    if report.entries:
        x_top = x[:, [e.column for e in report.entries]]
        report = report.with_odds_ratios(odds_ratios(x_top, data.target))
    atomic_write_text(args.out, report.to_tsv())
    print(report.to_text(), end="")
    return EXIT_OK


def _cmd_eval(args) -> int:
    if args.bench:
        if args.schema is None:
            raise UsageError("drf eval --bench requires --schema")
        if args.train and args.test:
            train = load_csv(args.train, schema_path=args.schema)
            test = load_csv(args.test, schema_path=args.schema)
            split_note = "explicit"
        elif args.data:
            full = load_csv(args.data, schema_path=args.schema)
            train, test = stratified_split(full, args.test_fraction, args.seed)
            split_note = f"stratified {1 - args.test_fraction:.0%}/{args.test_fraction:.0%}"
        else:
            raise UsageError("drf eval --bench needs either --train/--test or --data")
        layers = parse_layers(args.layers)
        report = benchmark(train, test, layers=layers, seed=args.seed,
                           alpha=args.alpha, threads=args.threads)
        report.meta["split"] = split_note
        text = report.to_tsv()
        if args.out:
            atomic_write_text(args.out, text)
        print(text, end="")
        return EXIT_OK
    if not args.model or not args.data:
        raise UsageError("drf eval needs --model and --data (or --bench)")
    model = load_model(args.model)
    data = load_csv(args.data, schema=model.schema_)
    scores = model.predict_scores(data, layer=args.layer)
    print(f"auc\t{auc(scores, data.target):.6f}")
    return EXIT_OK


def _cmd_synth(args) -> int:
    spec = dataclasses.replace(SynthSpec.from_file(args.spec), seed=args.seed)
    data = synth(spec)
    atomic_write_text(args.out, to_csv_text(data))
    if args.schema_out:
        atomic_write_text(args.schema_out, to_schema_text(data.schema))
    print(f"wrote {data.n_rows} rows ({data.n_positive} positive) to {args.out}")
    return EXIT_OK


_COMMANDS = {
    "train": _cmd_train,
    "transform": _cmd_transform,
    "rules": _cmd_rules,
    "explain": _cmd_explain,
    "eval": _cmd_eval,
    "synth": _cmd_synth,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().rstrip())
        return _COMMANDS[args.command](args)
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except (DrfError, ValueError, OSError, np.linalg.LinAlgError) as exc:
        print(f"drf: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
