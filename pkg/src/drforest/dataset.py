"""Immutable categorical datasets with a binary target.

Data files are RFC-4180-style CSV (UTF-8, header row required).  A companion
schema file declares one column per line as ``name,kind`` with kind one of
``categorical``, ``binary`` or ``target``; lines starting with ``#`` are
comments.  Category levels are registered in first-seen order from the data
file, except that binary columns always start with levels ``("0", "1")``.
Empty cells map to the reserved level ``"NA"``; the target column must be
``0`` or ``1`` with ``1`` the positive class.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import (
    EmptyDatasetError,
    EncodingError,
    ParseError,
    SchemaError,
    StratificationError,
)

NA_LEVEL = "NA"
KIND_CATEGORICAL = "categorical"
KIND_BINARY = "binary"
KIND_TARGET = "target"
KINDS = (KIND_CATEGORICAL, KIND_BINARY, KIND_TARGET)


@dataclass(frozen=True)
class FeatureSpec:
    """One named column: its kind and the ordered list of category tokens."""

    name: str
    kind: str
    levels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown kind {self.kind!r} for column {self.name!r}")
        if len(set(self.levels)) != len(self.levels):
            raise SchemaError(f"duplicate levels in column {self.name!r}")

    def level_index(self, token: str) -> int:
        try:
            return self.levels.index(token)
        except ValueError:
            raise EncodingError(f"unknown level {token!r} for column {self.name!r}") from None


@dataclass(frozen=True)
class Schema:
    """All declared columns, in file order, with exactly one target."""

    features: tuple[FeatureSpec, ...]

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names in schema")
        targets = [f for f in self.features if f.kind == KIND_TARGET]
        if len(targets) != 1:
            raise SchemaError(f"schema must declare exactly one target column, got {len(targets)}")

    @property
    def predictors(self) -> tuple[FeatureSpec, ...]:
        return tuple(f for f in self.features if f.kind != KIND_TARGET)

    @property
    def target(self) -> FeatureSpec:
        return next(f for f in self.features if f.kind == KIND_TARGET)

    @property
    def predictor_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.predictors)

    def compatible_with(self, other: "Schema") -> bool:
        """Same column names and kinds, in the same order; levels may differ."""
        return [(f.name, f.kind) for f in self.features] == [
            (f.name, f.kind) for f in other.features
        ]


class TableView(NamedTuple):
    """Uniform integer-coded view consumed by the tree grower.

    ``cells`` is an (n_rows, n_features) int32 matrix of level indices,
    ``levels`` the per-feature token lists, ``names`` the column names and
    ``y`` the 0/1 labels.
    """

    cells: np.ndarray
    levels: tuple[tuple[str, ...], ...]
    names: tuple[str, ...]
    y: np.ndarray


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Rows of categorical features plus a binary target, immutable after load."""

    schema: Schema
    cells: np.ndarray  # (n_rows, n_predictors) int32 level indices
    target: np.ndarray  # (n_rows,) int8 in {0, 1}

    def __post_init__(self):
        if self.cells.ndim != 2 or self.cells.shape[1] != len(self.schema.predictors):
            raise SchemaError("cell matrix does not match the schema")
        if self.cells.shape[0] != self.target.shape[0]:
            raise SchemaError("target length does not match the cell matrix")
        if self.cells.shape[0] == 0:
            raise EmptyDatasetError("dataset has no rows")
        for j, spec in enumerate(self.schema.predictors):
            col = self.cells[:, j]
            if col.min() < 0 or col.max() >= len(spec.levels):
                raise SchemaError(f"cell index out of range for column {spec.name!r}")

    @property
    def n_rows(self) -> int:
        return self.cells.shape[0]

    @property
    def n_features(self) -> int:
        return self.cells.shape[1]

    @property
    def n_positive(self) -> int:
        return int(self.target.sum())

    @property
    def n_negative(self) -> int:
        return self.n_rows - self.n_positive

    def token(self, row: int, col: int) -> str:
        return self.schema.predictors[col].levels[self.cells[row, col]]

    def view(self) -> TableView:
        return TableView(
            cells=self.cells,
            levels=tuple(f.levels for f in self.schema.predictors),
            names=self.schema.predictor_names,
            y=self.target,
        )

    def subset(self, rows: np.ndarray) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(
            schema=self.schema,
            cells=_freeze(self.cells[rows].astype(np.int32)),
            target=_freeze(self.target[rows].astype(np.int8)),
        )

    @classmethod
    def from_arrays(
        cls,
        values,
        y,
        names: Sequence[str] | None = None,
        kinds: Sequence[str] | None = None,
        target_name: str = "y",
    ) -> "Dataset":
        """Build a dataset from a 2-D array of tokens and a 0/1 label vector.

        Values are stringified; levels are registered in first-seen order per
        column (binary columns are pre-seeded with ``0`` and ``1``).
        """
        values = np.asarray(values, dtype=object)
        if values.ndim != 2:
            raise SchemaError("values must be two-dimensional")
        n, p = values.shape
        y = np.asarray(y)
        if y.shape != (n,):
            raise SchemaError("label vector does not match the value matrix")
        if not np.isin(y, (0, 1)).all():
            raise ParseError("labels must be 0 or 1")
        if names is None:
            names = [f"x{j}" for j in range(p)]
        if kinds is None:
            kinds = [KIND_CATEGORICAL] * p
        if len(names) != p or len(kinds) != p:
            raise SchemaError("names/kinds do not match the value matrix")

        cells = np.empty((n, p), dtype=np.int32)
        specs = []
        for j in range(p):
            levels: list[str] = ["0", "1"] if kinds[j] == KIND_BINARY else []
            index = {tok: i for i, tok in enumerate(levels)}
            for i in range(n):
                tok = str(values[i, j])
                tok = NA_LEVEL if tok == "" else tok
                if kinds[j] == KIND_BINARY and tok not in ("0", "1", NA_LEVEL):
                    raise ParseError(f"row {i + 1}: binary column {names[j]!r} has value {tok!r}")
                code = index.get(tok)
                if code is None:
                    code = len(levels)
                    levels.append(tok)
                    index[tok] = code
                cells[i, j] = code
            specs.append(FeatureSpec(names[j], kinds[j], tuple(levels)))
        specs.append(FeatureSpec(target_name, KIND_TARGET, ("0", "1")))
        return cls(
            schema=Schema(tuple(specs)),
            cells=_freeze(cells),
            target=_freeze(y.astype(np.int8)),
        )


def load_schema(path) -> Schema:
    """Parse a ``name,kind`` schema file (no levels yet)."""
    specs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 2 or not parts[0]:
                raise SchemaError(f"{path}:{lineno}: expected 'name,kind', got {raw.rstrip()!r}")
            name, kind = parts
            if kind not in KINDS:
                raise SchemaError(f"{path}:{lineno}: unknown kind {kind!r}")
            specs.append(FeatureSpec(name, kind))
    if not specs:
        raise SchemaError(f"{path}: schema file declares no columns")
    return Schema(tuple(specs))


def load_csv(path, schema_path=None, schema: Schema | None = None) -> Dataset:
    """Load a CSV against a schema (from ``schema_path`` or a Schema object).

    Levels are re-registered in first-seen order from this file; any levels
    already present on the given schema (e.g. a trained model's) are not
    required to match.
    """
    if schema is None:
        if schema_path is None:
            raise SchemaError("either schema_path or schema must be given")
        schema = load_schema(schema_path)

    predictors = schema.predictors
    target_spec = schema.target
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyDatasetError(f"{path}: file is empty") from None
        col_of = {name: i for i, name in enumerate(header)}
        for spec in schema.features:
            if spec.name not in col_of:
                raise SchemaError(f"{path}: column {spec.name!r} missing from CSV header")
        pred_cols = [col_of[f.name] for f in predictors]
        target_col = col_of[target_spec.name]

        levels: list[list[str]] = [
            ["0", "1"] if f.kind == KIND_BINARY else [] for f in predictors
        ]
        index: list[dict[str, int]] = [{t: i for i, t in enumerate(lv)} for lv in levels]
        codes: list[list[int]] = [[] for _ in predictors]
        labels: list[int] = []

        for rowno, row in enumerate(reader, start=1):
            if len(row) < len(header):
                raise ParseError(f"{path}: row {rowno}: expected {len(header)} fields, got {len(row)}")
            tok = row[target_col].strip()
            if tok not in ("0", "1"):
                raise ParseError(f"{path}: row {rowno}: target must be 0 or 1, got {tok!r}")
            labels.append(int(tok))
            for j, ci in enumerate(pred_cols):
                tok = row[ci]
                tok = NA_LEVEL if tok == "" else tok
                if predictors[j].kind == KIND_BINARY and tok not in ("0", "1", NA_LEVEL):
                    raise ParseError(
                        f"{path}: row {rowno}: binary column {predictors[j].name!r} has value {tok!r}"
                    )
                code = index[j].get(tok)
                if code is None:
                    code = len(levels[j])
                    levels[j].append(tok)
                    index[j][tok] = code
                codes[j].append(code)

    if not labels:
        raise EmptyDatasetError(f"{path}: no data rows")

    specs = [
        FeatureSpec(f.name, f.kind, tuple(levels[j])) for j, f in enumerate(predictors)
    ]
    specs.append(FeatureSpec(target_spec.name, KIND_TARGET, ("0", "1")))
    cells = np.column_stack([np.asarray(c, dtype=np.int32) for c in codes])
    return Dataset(
        schema=Schema(tuple(specs)),
        cells=_freeze(cells),
        target=_freeze(np.asarray(labels, dtype=np.int8)),
    )


def to_csv_text(dataset: Dataset) -> str:
    """Render the dataset as CSV text (tokens, target last)."""
    import io

    predictors = dataset.schema.predictors
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(dataset.schema.predictor_names) + [dataset.schema.target.name])
    for i in range(dataset.n_rows):
        row = [predictors[j].levels[dataset.cells[i, j]] for j in range(dataset.n_features)]
        row.append(str(int(dataset.target[i])))
        writer.writerow(row)
    return buf.getvalue()


def write_csv(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(to_csv_text(dataset))


def to_schema_text(schema: Schema) -> str:
    return "".join(f"{spec.name},{spec.kind}\n" for spec in schema.features)


def write_schema(schema: Schema, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(to_schema_text(schema))


def stratified_split(dataset: Dataset, test_fraction: float, seed: int):
    """Split each class independently; deterministic in ``seed``.

    Returns ``(train, test)``; the test side of class c holds
    ``round(test_fraction * n_c)`` rows.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    y = dataset.target
    rng = np.random.default_rng(seed)
    test_rows = []
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        if idx.size < 2:
            raise StratificationError(f"class {cls} has {idx.size} rows; need at least 2")
        k = int(round(test_fraction * idx.size))
        test_rows.append(rng.permutation(idx)[:k])
    test_mask = np.zeros(dataset.n_rows, dtype=bool)
    for rows in test_rows:
        test_mask[rows] = True
    train_idx = np.flatnonzero(~test_mask)
    test_idx = np.flatnonzero(test_mask)
    if train_idx.size == 0 or test_idx.size == 0:
        raise StratificationError("split leaves one side empty; adjust test_fraction")
    return dataset.subset(train_idx), dataset.subset(test_idx)


def remap_codes(
    cells: np.ndarray,
    src_levels: Iterable[tuple[str, ...]],
    dst_levels: Iterable[tuple[str, ...]],
) -> np.ndarray:
    """Re-express level indices of one level universe in another.

    Tokens absent from the destination become ``-1`` (the "unseen" code that
    tree routing resolves with its heavier-child rule).
    """
    src_levels = list(src_levels)
    dst_levels = list(dst_levels)
    out = np.empty_like(cells, dtype=np.int32)
    for j, (src, dst) in enumerate(zip(src_levels, dst_levels)):
        if src == dst:
            out[:, j] = cells[:, j]
            continue
        lookup = {tok: i for i, tok in enumerate(dst)}
        table = np.array([lookup.get(tok, -1) for tok in src], dtype=np.int32)
        out[:, j] = table[cells[:, j]]
    return out
