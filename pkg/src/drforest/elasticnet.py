"""Elastic-net logistic regression over region indicators.

The solver is coordinate descent with soft-thresholding inside an IRLS
(quadratic approximation) outer loop, run down a log-spaced penalty path
with warm starts and an active-set strategy.  Stationarity of the true
penalized log-likelihood is verified before a solution is accepted, so
returned coefficients satisfy the KKT conditions to high precision.
Columns are standardized internally; the intercept is unpenalized.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .dataset import Dataset
from .errors import ConvergenceError, FitError
from .forest import RegionTable
from .rules import (
    Dnf,
    coverage,
    expand_region,
    format_dnf,
    indicator_name,
    parse_indicator,
)

DEFAULT_ALPHA = 0.5
DEFAULT_N_LAMBDA = 100
DEFAULT_CV_FOLDS = 5
LAMBDA_DECADES = 4.0

COEF_TOL = 1e-7
KKT_TOL = 1e-8
MAX_SWEEPS = 10_000
MIN_WEIGHT = 1e-5


def _sigmoid(x):
    # |x| > 40 saturates beyond float64 resolution; clipping avoids overflow
    return 1.0 / (1.0 + np.exp(-np.clip(x, -40.0, 40.0)))


def _logit(p: float) -> float:
    p = min(max(p, 1e-12), 1.0 - 1e-12)
    return float(np.log(p / (1.0 - p)))


def _soft(z: float, t: float) -> float:
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


def _standardize(X):
    m = X.mean(axis=0)
    s = X.std(axis=0)
    s = np.where(s > 0, s, 1.0)
    return np.asfortranarray((X - m) / s), m, s


def lambda_grid(Xs, y, alpha: float, n_lambda: int) -> np.ndarray:
    """Log-spaced path from the smallest all-zero penalty down 4 decades.

    At the null model the intercept MLE makes every prediction the
    prevalence, so the gradient is closed-form and lambda_max is the
    smallest penalty whose KKT condition keeps every coefficient at zero.
    """
    n = Xs.shape[0]
    g = Xs.T @ (np.full(n, y.mean()) - y) / n
    lam_max = float(np.abs(g).max()) / max(alpha, 1e-3)
    lam_max = max(lam_max, 1e-10)
    if n_lambda == 1:
        return np.array([lam_max])
    return np.logspace(np.log10(lam_max), np.log10(lam_max) - LAMBDA_DECADES, n_lambda)


def _kkt_residual(g, beta_j, l1, l2):
    if beta_j != 0.0:
        return abs(g + l2 * beta_j + l1 * (1.0 if beta_j > 0 else -1.0))
    return max(abs(g) - l1, 0.0)


# Per-sweep decrease of the working quadratic objective below which extra
# sweeps only shuffle coefficient mass along exactly collinear directions
# (complementary region indicators); such sweeps cannot change predictions.
Q_TOL = 1e-11


def _cd_path(Xs, y, alpha, lambdas, on_solution, tol=COEF_TOL, kkt_tol=KKT_TOL,
             max_sweeps=MAX_SWEEPS):
    """Solve the penalized problem at each lambda (warm-started, in order).

    Each solve runs IRLS rounds over an active set, growing the set through
    full-gradient screens, until the true-objective KKT residual falls under
    ``kkt_tol``.  Sweeps stop early on either the coefficient-change
    criterion or a negligible objective decrease; if the KKT residual then
    stops improving between rounds (which only happens along the flat
    directions of exactly collinear column groups, where predictions are
    already converged), the solution is accepted as stationary.

    ``on_solution(index, intercept, coef)`` receives the standardized-scale
    solution for every lambda.  Raises ConvergenceError when a solve's sweep
    budget runs out.
    """
    n, p = Xs.shape
    y = y.astype(np.float64)
    beta = np.zeros(p)
    beta0 = _logit(float(y.mean()))
    eta = np.full(n, beta0)
    active: list[int] = []
    buf = np.empty(n)
    total_sweeps = 0

    def quad_objective(w, r, l1, l2):
        np.multiply(w, r, out=buf)
        value = 0.5 * float(r @ buf) / n
        if active:
            b = beta[active]
            value += l1 * float(np.abs(b).sum()) + 0.5 * l2 * float(b @ b)
        return value

    for li, lam in enumerate(lambdas):
        l1 = lam * alpha
        l2 = lam * (1.0 - alpha)
        sweeps = 0
        best_resid = np.inf
        stalled_rounds = 0
        while True:
            # IRLS rounds on the current active set
            while True:
                prob = _sigmoid(eta)
                w = np.maximum(prob * (1.0 - prob), MIN_WEIGHT)
                z = eta + (y - prob) / w
                r = z - eta
                sw = float(w.sum())
                wxx = [float(np.einsum("i,i,i->", w, Xs[:, j], Xs[:, j])) for j in active]
                q_prev = quad_objective(w, r, l1, l2)
                while True:
                    delta = 0.0
                    np.multiply(w, r, out=buf)
                    d0 = float(buf.sum()) / sw
                    if d0 != 0.0:
                        beta0 += d0
                        r -= d0
                        delta = abs(d0)
                    for pos, j in enumerate(active):
                        xj = Xs[:, j]
                        np.multiply(w, r, out=buf)
                        rho = float(xj @ buf) / n + wxx[pos] * beta[j] / n
                        bj = _soft(rho, l1) / (wxx[pos] / n + l2)
                        d = bj - beta[j]
                        if d != 0.0:
                            beta[j] = bj
                            np.multiply(xj, d, out=buf)
                            r -= buf
                            delta = max(delta, abs(d))
                    sweeps += 1
                    if delta < tol:
                        break
                    q_now = quad_objective(w, r, l1, l2)
                    if q_prev - q_now < Q_TOL:
                        break
                    q_prev = q_now
                    if sweeps > max_sweeps:
                        raise ConvergenceError(
                            f"coordinate descent used more than {max_sweeps} sweeps",
                            coef=beta.copy(),
                            diagnostics={"lambda": lam, "lambda_index": li,
                                         "intercept": beta0, "max_change": delta},
                        )
                eta = z - r
                # stationarity of the true objective over the active set
                prob = _sigmoid(eta)
                diff = (prob - y) / n
                resid = abs(float(diff.sum()))
                for j in active:
                    g = float(Xs[:, j] @ diff)
                    resid = max(resid, _kkt_residual(g, beta[j], l1, l2))
                if resid <= kkt_tol:
                    break
                if resid > 0.7 * best_resid:
                    stalled_rounds += 1
                    if stalled_rounds >= 2:
                        break
                else:
                    stalled_rounds = 0
                best_resid = min(best_resid, resid)
                if sweeps > max_sweeps:
                    raise ConvergenceError(
                        f"IRLS used more than {max_sweeps} sweeps",
                        coef=beta.copy(),
                        diagnostics={"lambda": lam, "lambda_index": li,
                                     "intercept": beta0, "kkt_residual": resid},
                    )
            # full screen: pull in any zero coefficient violating its bound
            grad = Xs.T @ ((_sigmoid(eta) - y) / n)
            outside = np.setdiff1d(
                np.flatnonzero(np.abs(grad) > l1 + kkt_tol), active, assume_unique=False
            )
            if outside.size:
                active = sorted(set(active) | set(int(j) for j in outside))
                best_resid = np.inf
                stalled_rounds = 0
                continue
            break
        total_sweeps += sweeps
        on_solution(li, beta0, beta)
    return total_sweeps


def _stratified_folds(y, k: int, seed: int):
    rng = np.random.default_rng(seed)
    fold_of = np.empty(y.shape[0], dtype=np.int64)
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        fold_of[rng.permutation(idx)] = np.arange(idx.size) % k
    return [
        (np.flatnonzero(fold_of != f), np.flatnonzero(fold_of == f)) for f in range(k)
    ]


class ElasticNetLogistic(BaseEstimator, ClassifierMixin):
    """Cross-validated elastic-net logistic regression.

    The penalty path runs from the all-zero lambda down four decades; the
    reported solution maximizes mean cross-validated AUC (ties prefer the
    sparser, larger lambda).  Pass ``lambdas`` to pin the path explicitly
    (a single value skips cross-validation).

    Attributes after fit: ``coef_`` / ``intercept_`` (original scale),
    ``coef_standardized_``, ``lambda_``, ``lambda_path_``, ``cv_auc_``.
    """

    def __init__(self, alpha: float = DEFAULT_ALPHA, n_lambda: int = DEFAULT_N_LAMBDA,
                 cv_folds: int = DEFAULT_CV_FOLDS, seed: int = 0, lambdas=None):
        self.alpha = alpha
        self.n_lambda = n_lambda
        self.cv_folds = cv_folds
        self.seed = seed
        self.lambdas = lambdas

    def fit(self, X, y):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        X = np.ascontiguousarray(X, dtype=np.float64)
        y = np.asarray(y).astype(np.int64).ravel()
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise ValueError("X and y have incompatible shapes")
        n_pos = int((y == 1).sum())
        n_neg = int((y == 0).sum())
        if n_pos < 2 or n_neg < 2:
            raise FitError(f"need at least 2 rows per class, got {n_pos} pos / {n_neg} neg")

        Xs, m, s = _standardize(X)
        if self.lambdas is not None:
            grid = np.asarray(self.lambdas, dtype=np.float64)
        else:
            grid = lambda_grid(Xs, y, self.alpha, self.n_lambda)

        cv_auc = None
        if grid.size > 1 and self.cv_folds >= 2:
            if min(n_pos, n_neg) < self.cv_folds:
                raise FitError("cv_folds exceeds the minority class count")
            from .evaluation import auc  # local import to avoid a cycle

            aucs = np.empty((self.cv_folds, grid.size))
            for f, (tr, va) in enumerate(_stratified_folds(y, self.cv_folds, self.seed)):
                Xf, mf, sf = _standardize(X[tr])
                X_val, y_val = X[va], y[va]

                def score(li, b0, b):
                    coef = b / sf
                    eta = X_val @ coef + (b0 - float(mf @ coef))
                    aucs[f, li] = auc(eta, y_val)

                _cd_path(Xf, y[tr], self.alpha, grid, score)
            cv_auc = aucs.mean(axis=0)
            best = int(np.argmax(cv_auc))
        else:
            best = grid.size - 1

        solution = {}

        def keep(li, b0, b):
            if li == best:
                solution["intercept"] = b0
                solution["coef"] = b.copy()

        self.n_iter_ = _cd_path(Xs, y, self.alpha, grid[: best + 1], keep)
        coef_std = solution["coef"]
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        self.lambda_path_ = grid
        self.cv_auc_ = cv_auc
        self.lambda_ = float(grid[best])
        self.coef_standardized_ = coef_std
        self.coef_ = coef_std / s
        self.intercept_ = float(solution["intercept"] - m @ self.coef_)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = np.ascontiguousarray(X, dtype=np.float64)
        return X @ self.coef_ + self.intercept_

    def predict_proba(self, X):
        p = _sigmoid(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.decision_function(X) >= 0.0).astype(np.int64)


def fit_enet(x, y, alpha: float = DEFAULT_ALPHA, n_lambda: int = DEFAULT_N_LAMBDA,
             cv_folds: int = DEFAULT_CV_FOLDS, seed: int = 0, lambdas=None) -> ElasticNetLogistic:
    """Functional form of :class:`ElasticNetLogistic`."""
    return ElasticNetLogistic(
        alpha=alpha, n_lambda=n_lambda, cv_folds=cv_folds, seed=seed, lambdas=lambdas
    ).fit(x, y)


# ---------------------------------------------------------------------------
# Unpenalized refit, odds ratios
# ---------------------------------------------------------------------------

Z_95 = 1.96
SEPARATION_CAP = 20.0


@dataclass(frozen=True)
class OddsRatio:
    value: float
    ci_low: float
    ci_high: float
    separated: bool = False


def logistic_refit(X, y, max_iter: int = 100, grad_tol: float = 1e-12,
                   cap: float = SEPARATION_CAP):
    """Newton/IRLS maximum likelihood logistic fit with Wald standard errors.

    Returns ``(beta, se, separated)`` where ``beta[0]`` is the intercept.
    Coefficients whose magnitude reaches ``cap`` are flagged as separated and
    reported at the cap instead of diverging.  Collinear designs fall back to
    a least-squares Newton step (minimum-norm direction).
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    n, k = X.shape
    Xd = np.column_stack([np.ones(n), X])
    beta = np.zeros(k + 1)
    beta[0] = _logit(float(y.mean()))

    def nll(b):
        eta = Xd @ b
        return float(np.logaddexp(0.0, eta).sum() - y @ eta)

    current = nll(beta)
    for _ in range(max_iter):
        prob = _sigmoid(Xd @ beta)
        grad = Xd.T @ (prob - y)
        if float(np.abs(grad).max()) <= grad_tol:
            break
        w = np.maximum(prob * (1.0 - prob), 1e-10)
        hess = Xd.T @ (w[:, None] * Xd)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        # Backtrack if the full Newton step overshoots.
        scale = 1.0
        for _ in range(30):
            candidate = beta - scale * step
            candidate[0] = float(np.clip(candidate[0], -cap - 10.0, cap + 10.0))
            candidate[1:] = np.clip(candidate[1:], -cap, cap)
            value = nll(candidate)
            if value <= current + 1e-12:
                break
            scale *= 0.5
        if float(np.abs(candidate - beta).max()) == 0.0:
            break
        beta, current = candidate, value

    prob = _sigmoid(Xd @ beta)
    w = np.maximum(prob * (1.0 - prob), 1e-10)
    hess = Xd.T @ (w[:, None] * Xd)
    cov = np.linalg.pinv(hess)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    separated = np.abs(beta) >= cap - 1e-9
    separated[0] = False
    return beta, se, separated


def odds_ratios(x, y, cap: float = SEPARATION_CAP) -> list[OddsRatio]:
    """Joint unpenalized logit refit on the given indicator columns.

    Returns one entry per column: ``exp(beta)`` with a 95% Wald interval
    ``exp(beta ± 1.96·se)`` from the inverse observed information.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("x must be two-dimensional")
    if x.shape[1] > 50:
        raise ValueError(f"refusing to refit {x.shape[1]} columns (max 50)")
    y = np.asarray(y).ravel()
    if (y == 1).sum() == 0 or (y == 0).sum() == 0:
        raise FitError("both classes must be present")
    beta, se, separated = logistic_refit(x, y, cap=cap)
    out = []
    for j in range(x.shape[1]):
        b, e = float(beta[j + 1]), float(se[j + 1])
        out.append(
            OddsRatio(
                value=float(np.exp(b)),
                ci_low=float(np.exp(b - Z_95 * e)),
                ci_high=float(np.exp(b + Z_95 * e)),
                separated=bool(separated[j + 1]),
            )
        )
    return out


# ---------------------------------------------------------------------------
# Indicator matrices and ranked rule reports
# ---------------------------------------------------------------------------


def indicator_matrix(table: RegionTable) -> tuple[np.ndarray, list[str]]:
    """One 0/1 column per (tree, region) pair, named ``L<l>.T<t>=r<k>``.

    Within one tree's group of columns each row has exactly one 1.
    """
    blocks = []
    names = []
    for t, levels in enumerate(table.column_levels):
        col = table.cells[:, t]
        block = np.zeros((table.n_rows, len(levels)), dtype=np.float64)
        block[np.arange(table.n_rows), col] = 1.0
        blocks.append(block)
        names.extend(f"{table.column_names[t]}={tok}" for tok in levels)
    return np.concatenate(blocks, axis=1), names


def layer_indicator_names(model, layer: int) -> list[str]:
    forest = model.forests_[layer - 1]
    return [
        indicator_name(layer, t + 1, r)
        for t in range(forest.n_trees)
        for r in range(forest.trees[t].n_leaves)
    ]


@dataclass(frozen=True)
class RuleEntry:
    name: str
    column: int
    importance: float
    rule_text: str
    dnf: Dnf
    n_covered: int
    n_positive: int
    truncated: bool
    odds_ratio: float | None = None
    ci_low: float | None = None
    ci_high: float | None = None
    separated: bool = False


@dataclass(frozen=True)
class RuleReport:
    """Ranked region rules, most important first."""

    layer: int
    entries: tuple[RuleEntry, ...]

    def with_odds_ratios(self, ors: list[OddsRatio]) -> "RuleReport":
        if len(ors) != len(self.entries):
            raise ValueError("odds ratio count does not match the report")
        entries = tuple(
            dataclasses.replace(
                e,
                odds_ratio=o.value,
                ci_low=o.ci_low,
                ci_high=o.ci_high,
                separated=o.separated,
            )
            for e, o in zip(self.entries, ors)
        )
        return RuleReport(self.layer, entries)

    def to_tsv(self) -> str:
        cols = [
            "rank", "indicator", "importance", "n_covered", "n_positive",
            "odds_ratio", "ci_low", "ci_high", "separated", "truncated", "rule",
        ]
        lines = ["\t".join(cols)]
        for rank, e in enumerate(self.entries, start=1):
            fmt = lambda v: "" if v is None else f"{v:.6g}"
            lines.append(
                "\t".join(
                    [
                        str(rank), e.name, f"{e.importance:.6g}",
                        str(e.n_covered), str(e.n_positive),
                        fmt(e.odds_ratio), fmt(e.ci_low), fmt(e.ci_high),
                        str(int(e.separated)), str(int(e.truncated)), e.rule_text,
                    ]
                )
            )
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        if not self.entries:
            return f"layer {self.layer}: no rules (all coefficients are zero)\n"
        lines = [f"Top {len(self.entries)} rules at layer {self.layer}"]
        for rank, e in enumerate(self.entries, start=1):
            head = (
                f"{rank}. {e.name}  importance={e.importance:.4g}  "
                f"covers {e.n_covered} ({e.n_positive} positive)"
            )
            if e.odds_ratio is not None:
                head += f"  OR={e.odds_ratio:.3g} [{e.ci_low:.3g}, {e.ci_high:.3g}]"
                if e.separated:
                    head += " (separated)"
            lines.append(head)
            rule = e.rule_text + ("  [truncated]" if e.truncated else "")
            lines.append(f"   rule: {rule}")
        return "\n".join(lines) + "\n"


def rank_rules(fit: ElasticNetLogistic, model, layer: int, k: int,
               train: Dataset, max_terms: int = 512) -> RuleReport:
    """Top-k region rules by |standardized coefficient|.

    Rules are expanded to raw-feature DNF and their coverage counted on the
    training data.  Zero-coefficient indicators never appear, so the report
    may be shorter than ``k``.
    """
    names = layer_indicator_names(model, layer)
    coef = fit.coef_standardized_
    if coef.shape[0] != len(names):
        raise ValueError(
            f"fit has {coef.shape[0]} coefficients but layer {layer} has {len(names)} indicators"
        )
    importance = np.abs(coef)
    order = np.lexsort((np.arange(importance.size), -importance))
    entries = []
    for idx in order:
        if len(entries) >= k or importance[idx] == 0.0:
            break
        name = names[idx]
        lv, tr, rg = parse_indicator(name)
        dnf = expand_region(model, lv, tr, rg, max_terms=max_terms)
        n_cov, n_pos = coverage(dnf, train)
        entries.append(
            RuleEntry(
                name=name,
                column=int(idx),
                importance=float(importance[idx]),
                rule_text=format_dnf(dnf, model.schema_),
                dnf=dnf,
                n_covered=n_cov,
                n_positive=n_pos,
                truncated=dnf.truncated,
            )
        )
    return RuleReport(layer=layer, entries=tuple(entries))
