"""Rule algebra: set-membership literals, conjunctions, DNF.

A literal constrains one feature to a set of allowed tokens.  Region
features are literals like ``L1.T3 ∈ {r0, r2}``; expanding them recursively
and distributing the resulting and-of-ors yields a DNF over raw features.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .dataset import KIND_BINARY, Dataset, Schema
from .errors import EncodingError, RegionNotFoundError

DEFAULT_MAX_TERMS = 512

_REGION_RE = re.compile(r"^r(\d+)$")
_INDICATOR_RE = re.compile(r"^L(\d+)\.T(\d+)=r(\d+)$")


def region_token(index: int) -> str:
    return f"r{index}"


def parse_region(token) -> int:
    if isinstance(token, int):
        return token
    m = _REGION_RE.match(str(token))
    if not m:
        raise ValueError(f"not a region id: {token!r}")
    return int(m.group(1))


def region_column(layer: int, tree: int) -> str:
    """1-based column name for a tree inside a layer, e.g. ``L2.T3``."""
    return f"L{layer}.T{tree}"


def indicator_name(layer: int, tree: int, region: int) -> str:
    return f"{region_column(layer, tree)}={region_token(region)}"


def parse_indicator(name: str) -> tuple[int, int, int]:
    m = _INDICATOR_RE.match(name)
    if not m:
        raise ValueError(f"not an indicator name: {name!r}")
    return int(m.group(1)), int(m.group(2)), int(m.group(3))


@dataclass(frozen=True)
class Literal:
    """``feature ∈ allowed``; the allowed token set is never empty."""

    feature: str
    allowed: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "allowed", frozenset(self.allowed))
        if not self.allowed:
            raise ValueError(f"literal on {self.feature!r} has an empty allowed set")


@dataclass(frozen=True)
class Conjunction:
    """AND of literals.  May hold several literals on one feature until
    :func:`simplify` merges them by intersection."""

    literals: tuple[Literal, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "literals", tuple(self.literals))

    def merged(self) -> dict[str, frozenset[str]] | None:
        """Feature -> intersected allowed set; None if contradictory."""
        out: dict[str, frozenset[str]] = {}
        for lit in self.literals:
            cur = out.get(lit.feature)
            nxt = lit.allowed if cur is None else cur & lit.allowed
            if not nxt:
                return None
            out[lit.feature] = nxt
        return out


@dataclass(frozen=True)
class Dnf:
    """OR of conjunctions.  ``truncated`` marks a best-effort expansion whose
    term list was capped."""

    terms: tuple[Conjunction, ...] = ()
    truncated: bool = False

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))


def conjunction(*pairs) -> Conjunction:
    """Convenience builder: ``conjunction(("MET", {"1"}), ("Age", {"60-79"}))``."""
    return Conjunction(tuple(Literal(f, frozenset(a)) for f, a in pairs))


def _term_from_mapping(mapping: dict[str, frozenset[str]]) -> Conjunction:
    return Conjunction(
        tuple(Literal(f, mapping[f]) for f in sorted(mapping))
    )


def _term_key(mapping: dict[str, frozenset[str]]) -> frozenset:
    return frozenset(mapping.items())


def _subsumes(weaker: dict, stronger: dict) -> bool:
    """True if ``stronger`` implies ``weaker`` (so ``stronger`` is redundant)."""
    for feat, allowed in weaker.items():
        s = stronger.get(feat)
        if s is None or not s.issubset(allowed):
            return False
    return True


def simplify(dnf: Dnf, levels: dict[str, tuple[str, ...]] | None = None) -> Dnf:
    """Merge same-feature literals, drop contradictions and full-universe
    literals, deduplicate, and apply absorption.

    ``levels`` maps feature names to their full token universe; without it
    the full-universe rule is skipped.  Logical equivalence is preserved and
    the function is idempotent.
    """
    mappings: list[dict[str, frozenset[str]]] = []
    seen = set()
    for term in dnf.terms:
        m = term.merged()
        if m is None:
            continue
        if levels is not None:
            m = {f: a for f, a in m.items() if set(levels.get(f, ())) != a}
        key = _term_key(m)
        if key in seen:
            continue
        seen.add(key)
        mappings.append(m)

    kept = []
    for i, a in enumerate(mappings):
        redundant = any(
            j != i and _subsumes(b, a) for j, b in enumerate(mappings)
        )
        if not redundant:
            kept.append(a)
    return Dnf(tuple(_term_from_mapping(m) for m in kept), truncated=dnf.truncated)


def term_covers(term: Conjunction, dataset: Dataset) -> np.ndarray:
    """Boolean row mask for one conjunction."""
    mapping = term.merged()
    n = dataset.n_rows
    if mapping is None:
        return np.zeros(n, dtype=bool)
    mask = np.ones(n, dtype=bool)
    name_to_col = {f.name: j for j, f in enumerate(dataset.schema.predictors)}
    for feat, allowed in mapping.items():
        j = name_to_col.get(feat)
        if j is None:
            raise EncodingError(f"rule references unknown column {feat!r}")
        spec = dataset.schema.predictors[j]
        lut = np.zeros(len(spec.levels), dtype=bool)
        for tok in allowed:
            if tok in spec.levels:
                lut[spec.levels.index(tok)] = True
        mask &= lut[dataset.cells[:, j]]
    return mask


def covers(dnf: Dnf, dataset: Dataset) -> np.ndarray:
    """Boolean row mask: rows satisfying at least one term."""
    mask = np.zeros(dataset.n_rows, dtype=bool)
    for term in dnf.terms:
        mask |= term_covers(term, dataset)
    return mask


def evaluate(dnf: Dnf, row: dict) -> bool:
    """Satisfaction of a single row given as a ``{feature: token}`` mapping."""
    for term in dnf.terms:
        mapping = term.merged()
        if mapping is None:
            continue
        ok = True
        for feat, allowed in mapping.items():
            if feat not in row:
                raise EncodingError(f"rule references unknown column {feat!r}")
            if str(row[feat]) not in allowed:
                ok = False
                break
        if ok:
            return True
    return False


def coverage(dnf: Dnf, dataset: Dataset) -> tuple[int, int]:
    """(covered rows, covered positives) on a dataset."""
    mask = covers(dnf, dataset)
    return int(mask.sum()), int(mask[dataset.target == 1].sum())


def expand_region(model, layer: int, tree: int, region, max_terms: int = DEFAULT_MAX_TERMS) -> Dnf:
    """Expand a region into a DNF over raw features.

    ``layer`` and ``tree`` are 1-based (matching ``L<layer>.T<tree>``
    column names); ``region`` is an index or an ``r<k>`` token.  Region
    literals from earlier layers are substituted by the disjunction of their
    own expansions and the and-of-ors is distributed, simplified and capped
    at ``max_terms`` terms (setting ``truncated`` when the cap bites).
    """
    forests = model.forests_
    region = parse_region(region)
    if not 1 <= layer <= len(forests):
        raise RegionNotFoundError(f"model has no layer {layer}")
    universe = {f.name: f.levels for f in model.schema_.predictors}

    memo: dict[tuple[int, int, int], tuple[tuple[dict, ...], bool]] = {}

    def expand(lv: int, tr: int, rg: int) -> tuple[tuple[dict, ...], bool]:
        key = (lv, tr, rg)
        if key in memo:
            return memo[key]
        forest = forests[lv - 1]
        if not 1 <= tr <= len(forest.trees):
            raise RegionNotFoundError(f"layer {lv} has no tree {tr}")
        tnode = forest.trees[tr - 1]
        if not 0 <= rg < tnode.n_leaves:
            raise RegionNotFoundError(
                f"tree {region_column(lv, tr)} has no region {region_token(rg)}"
            )
        path = tnode.path_rule(rg).merged()
        assert path is not None  # path literals never contradict
        truncated = False
        if lv == 1:
            terms: list[dict] = [path]
        else:
            # Each path literal over a region column becomes an OR of the
            # selected regions' expansions; distribute the product.
            factors: list[list[dict]] = []
            for feat in sorted(path):
                allowed = path[feat]
                _, sub_tree = _split_column_name(feat)
                sub_terms: list[dict] = []
                sub_seen = set()
                for sub_region in sorted(parse_region(tok) for tok in allowed):
                    ts, tr_flag = expand(lv - 1, sub_tree, sub_region)
                    truncated = truncated or tr_flag
                    for t in ts:
                        k = _term_key(t)
                        if k not in sub_seen:
                            sub_seen.add(k)
                            sub_terms.append(t)
                factors.append(sub_terms)
            terms = [{}]
            for factor in factors:
                nxt: list[dict] = []
                nxt_seen = set()
                for a in terms:
                    for b in factor:
                        merged = _merge_mappings(a, b)
                        if merged is None:
                            continue
                        k = _term_key(merged)
                        if k not in nxt_seen:
                            nxt_seen.add(k)
                            nxt.append(merged)
                    if len(nxt) > max_terms:
                        truncated = True
                        nxt = nxt[:max_terms]
                terms = nxt
        simplified = simplify(
            Dnf(tuple(_term_from_mapping(t) for t in terms)), levels=universe
        )
        out = tuple(t.merged() for t in simplified.terms)
        if len(out) > max_terms:
            truncated = True
            out = out[:max_terms]
        memo[key] = (out, truncated)
        return memo[key]

    terms, truncated = expand(layer, tree, region)
    return Dnf(tuple(_term_from_mapping(t) for t in terms), truncated=truncated)


def _merge_mappings(a: dict, b: dict) -> dict | None:
    out = dict(a)
    for feat, allowed in b.items():
        cur = out.get(feat)
        nxt = allowed if cur is None else cur & allowed
        if not nxt:
            return None
        out[feat] = nxt
    return out


def _split_column_name(name: str) -> tuple[int, int]:
    m = re.match(r"^L(\d+)\.T(\d+)$", name)
    if not m:
        raise EncodingError(f"not a region column name: {name!r}")
    return int(m.group(1)), int(m.group(2))


def format_literal(lit: Literal, schema: Schema | None = None) -> str:
    spec = None
    if schema is not None:
        spec = next((f for f in schema.predictors if f.name == lit.feature), None)
    if spec is not None and spec.kind == KIND_BINARY and lit.allowed == frozenset({"1"}):
        return lit.feature
    if spec is not None:
        tokens = [t for t in spec.levels if t in lit.allowed]
        tokens += sorted(lit.allowed - set(spec.levels))
    else:
        tokens = sorted(lit.allowed)
    return f"{lit.feature} ∈ {{{', '.join(tokens)}}}"


def format_conjunction(term: Conjunction, schema: Schema | None = None, bare: bool = False) -> str:
    if not term.literals:
        return "TRUE"
    body = " & ".join(format_literal(l, schema) for l in term.literals)
    if bare or len(term.literals) == 1:
        return body
    return f"({body})"


def format_dnf(dnf: Dnf, schema: Schema | None = None) -> str:
    if not dnf.terms:
        return "FALSE"
    text = " ∨ ".join(format_conjunction(t, schema) for t in dnf.terms)
    if dnf.truncated:
        text += " ∨ …"
    return text
