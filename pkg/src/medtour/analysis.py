"""Screening regressions, effect tables, normality checks, surfaces and level choice."""

from __future__ import annotations

import csv
import io
import itertools
import math
import os
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import special

from medtour.config import FACTORS
from medtour.metrics import RESPONSES

RESPONSE_LABELS = {
    1: "early dropout",
    2: "system wait",
    3: "tourist hospital-queue wait",
    4: "emergency before appointment",
    5: "recovered patients",
    6: "specialist utilisation",
}
MINIMISE, MAXIMISE = "min", "max"
RESPONSE_GOALS = {1: MINIMISE, 2: MINIMISE, 3: MINIMISE, 4: MINIMISE, 5: MAXIMISE, 6: MAXIMISE}
# tourist queue wait first, then system wait, dropout, emergencies,
# recovered patients and utilisation
PRIORITY = (3, 2, 1, 4, 5, 6)
RETENTION_T = 2.0

# interaction columns offered to each response's screening model
DEFAULT_INTERACTIONS: dict[int, tuple[str, ...]] = {
    1: ("AE", "BF", "BP", "CH", "CL", "CP", "EJ", "EL", "EP", "FH", "GH", "GJ", "GM", "HL", "HP", "JM",
        "JP", "KN", "LO", "LP", "MP", "OP"),
    2: ("AO", "AP", "BP", "CO", "DK", "DP", "EL", "FL", "FP", "HN", "HP", "IN", "LO"),
    3: ("AF", "CO", "CP", "EK", "EN", "EO", "IN", "KO", "LO", "MO"),
    4: ("AF", "EN", "FP", "GP", "JP"),
    5: ("BG", "EJ", "KN", "LM"),
    6: ("AF", "FO", "KP"),
}
ALL_INTERACTIONS = tuple(a + b for a, b in itertools.combinations(FACTORS, 2))

# surfaces written by analyze(): (response, factor pair)
KEY_SURFACES = ((3, "MO"), (3, "KO"), (3, "LO"), (4, "FP"), (4, "GP"), (4, "JP"), (6, "AF"), (6, "KP"))


class RankDeficiencyError(ValueError):
    def __init__(self, columns: Sequence[str]):
        super().__init__(f"model matrix is rank deficient; dependent columns: {', '.join(columns)}")
        self.columns = list(columns)


@dataclass
class ScreeningModel:
    response: str
    terms: list[str]
    coef: np.ndarray
    se: np.ndarray
    t: np.ndarray
    fitted: np.ndarray
    residuals: np.ndarray
    r2: float
    adj_r2: float
    df_resid: int

    def coefficient(self, term: str) -> float:
        return float(self.coef[self.terms.index(term)])

    def t_ratio(self, term: str) -> float:
        return float(self.t[self.terms.index(term)])

    def has(self, term: str) -> bool:
        return term in self.terms

    def retained(self, term: str, threshold: float = RETENTION_T) -> bool:
        if term not in self.terms:
            return False
        t = self.t_ratio(term)
        return not math.isnan(t) and abs(t) >= threshold


def interaction_label(a: str, b: str) -> str:
    return "".join(sorted((a, b), key=FACTORS.index))


def model_matrix(coded: np.ndarray, interactions: Sequence[str] = (),
                 factors: Sequence[str] = FACTORS) -> tuple[np.ndarray, list[str]]:
    """Intercept, main-effect and selected two-factor columns."""
    coded = np.asarray(coded, dtype=float)
    cols = [np.ones(coded.shape[0])]
    terms = ["Intercept"]
    for j, f in enumerate(factors):
        cols.append(coded[:, j])
        terms.append(f)
    for word in interactions:
        a, b = word
        cols.append(coded[:, factors.index(a)] * coded[:, factors.index(b)])
        terms.append(interaction_label(a, b))
    return np.column_stack(cols), terms


def _dependent_columns(X: np.ndarray, terms: Sequence[str], tol: float) -> list[str]:
    bad = []
    kept: list[int] = []
    for j in range(X.shape[1]):
        trial = kept + [j]
        if np.linalg.matrix_rank(X[:, trial], tol=tol) == len(trial):
            kept = trial
        else:
            bad.append(terms[j])
    return bad


def fit_screening_model(X: np.ndarray, y: np.ndarray, terms: Sequence[str] | None = None,
                        response: str = "y") -> ScreeningModel:
    """Least squares through a thin QR factorisation.

    Standard errors and t-ratios use the residual variance on n - p
    degrees of freedom; with no residual degrees of freedom they are NaN.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    terms = list(terms) if terms is not None else [f"x{j}" for j in range(p)]
    if n <= p:
        raise ValueError(f"need more rows than columns, got {n} rows for {p} columns")
    Q, R = np.linalg.qr(X)
    diag = np.abs(np.diag(R))
    tol = max(n, p) * np.finfo(float).eps * (diag.max() if diag.size else 0.0)
    if (diag <= tol).any() or np.linalg.matrix_rank(X) < p:
        raise RankDeficiencyError(_dependent_columns(X, terms, max(tol, 1e-10)))
    beta = _back_substitute(R, Q.T @ y)
    fitted = X @ beta
    resid = y - fitted
    rss = float(resid @ resid)
    df = n - p
    ybar = y.mean()
    tss = float(((y - ybar) ** 2).sum())
    r2 = 0.0 if tss <= 0 else max(0.0, min(1.0, 1.0 - rss / tss))
    adj = 1.0 - (1.0 - r2) * (n - 1) / df if df > 0 else float("nan")
    adj = min(adj, r2)
    Rinv = _back_substitute(R, np.eye(p))
    sigma2 = rss / df
    se = np.sqrt(sigma2 * np.sum(Rinv ** 2, axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, beta / np.where(se > 0, se, 1.0),
                     np.where(beta == 0, 0.0, np.sign(beta) * np.inf))
    return ScreeningModel(response, terms, beta, se, t, fitted, resid, r2, adj, df)


def _back_substitute(R: np.ndarray, B: np.ndarray) -> np.ndarray:
    from scipy.linalg import solve_triangular

    return solve_triangular(R, B, lower=False)


def normal_equations_solution(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Reference solution of X'X b = X'y, for cross-checking the QR fit."""
    X = np.asarray(X, dtype=float)
    return np.linalg.solve(X.T @ X, X.T @ np.asarray(y, dtype=float))


# ---------------------------------------------------------------------------
# effect tables


UP, DOWN, NS = "up", "down", "ns"


def effect_direction_table(models: Mapping[int, ScreeningModel], threshold: float = RETENTION_T,
                           factors: Sequence[str] = FACTORS) -> dict[str, dict[int, str]]:
    """Per factor and response: up, down or ns under the |t| cutoff."""
    table = {}
    for f in factors:
        row = {}
        for r, m in models.items():
            if m.retained(f, threshold):
                row[r] = UP if m.coefficient(f) > 0 else DOWN
            else:
                row[r] = NS
        table[f] = row
    return table


def retained_interactions(model: ScreeningModel, threshold: float = RETENTION_T) -> list[str]:
    return [t for t in model.terms if len(t) == 2 and t != "Intercept" and model.retained(t, threshold)]


# ---------------------------------------------------------------------------
# Shapiro-Wilk


def shapiro_wilk(x: Sequence[float]) -> tuple[float, float]:
    """W statistic and p-value via Royston's polynomial approximations."""
    x = np.sort(np.asarray(x, dtype=float))
    n = x.size
    if n < 3 or n > 5000:
        raise ValueError(f"sample size must be in [3, 5000], got {n}")
    ssq = float(((x - x.mean()) ** 2).sum())
    if not ssq > 0 or x[-1] - x[0] < 1e-19 * max(1.0, abs(x[0])):
        raise ValueError("zero variance: normality test undefined")
    a = _sw_coefficients(n)
    w = float((a @ x) ** 2 / ssq)
    w = min(w, 1.0)
    return w, _sw_pvalue(w, n)


def _sw_coefficients(n: int) -> np.ndarray:
    if n == 3:
        return np.array([-math.sqrt(0.5), 0.0, math.sqrt(0.5)])
    i = np.arange(1, n + 1)
    m = special.ndtri((i - 0.375) / (n + 0.25))
    mm = float(m @ m)
    u = 1.0 / math.sqrt(n)
    c = m / math.sqrt(mm)
    an = c[-1] + 0.221157 * u - 0.147981 * u**2 - 2.071190 * u**3 + 4.434685 * u**4 - 2.706056 * u**5
    a = np.empty(n)
    if n > 5:
        an1 = c[-2] + 0.042981 * u - 0.293762 * u**2 - 1.752461 * u**3 + 5.682633 * u**4 - 3.582633 * u**5
        phi = (mm - 2 * m[-1] ** 2 - 2 * m[-2] ** 2) / (1 - 2 * an**2 - 2 * an1**2)
        a[:] = m / math.sqrt(phi)
        a[-1], a[-2], a[0], a[1] = an, an1, -an, -an1
    else:
        phi = (mm - 2 * m[-1] ** 2) / (1 - 2 * an**2)
        a[:] = m / math.sqrt(phi)
        a[-1], a[0] = an, -an
    return a


def _sw_pvalue(w: float, n: int) -> float:
    if n == 3:
        p = 6.0 / math.pi * (math.asin(math.sqrt(w)) - math.asin(math.sqrt(0.75)))
        return max(0.0, min(1.0, p))
    if w >= 1.0:
        return 1.0
    if n <= 11:
        gamma = 0.459 * n - 2.273
        mu = 0.5440 - 0.39978 * n + 0.025054 * n**2 - 0.0006714 * n**3
        sigma = math.exp(1.3822 - 0.77857 * n + 0.062767 * n**2 - 0.0020322 * n**3)
        inner = gamma - math.log1p(-w)
        if inner <= 0:
            return 0.0
        z = (-math.log(inner) - mu) / sigma
    else:
        ln = math.log(n)
        mu = 0.0038915 * ln**3 - 0.083751 * ln**2 - 0.31082 * ln - 1.5861
        sigma = math.exp(0.0030302 * ln**2 - 0.082676 * ln - 0.4803)
        z = (math.log1p(-w) - mu) / sigma
    return float(special.ndtr(-z))


def normal_quantile_pairs(residuals: Sequence[float]) -> list[tuple[float, float]]:
    """(theoretical quantile, sorted residual) pairs for a Q-Q plot."""
    r = np.sort(np.asarray(residuals, dtype=float))
    n = r.size
    q = special.ndtri((np.arange(1, n + 1) - 0.375) / (n + 0.25))
    return list(zip(q.tolist(), r.tolist()))


# ---------------------------------------------------------------------------
# response surfaces


@dataclass
class Surface:
    fi: str
    fj: str
    xs: np.ndarray
    ys: np.ndarray
    values: np.ndarray  # values[a, b] at (xs[a], ys[b])
    minimizing_corners: list[tuple[int, int]]
    maximizing_corners: list[tuple[int, int]]

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([self.fi, self.fj, "value"])
        for a, x in enumerate(self.xs):
            for b, y in enumerate(self.ys):
                w.writerow([f"{x:.2f}", f"{y:.2f}", repr(float(self.values[a, b]))])
        return buf.getvalue()


def response_surface_grid(model: ScreeningModel, fi: str, fj: str, points: int = 21) -> Surface:
    """Fitted surface over [-1, 1]^2 in (fi, fj) with other factors at 0."""
    inter = interaction_label(fi, fj)
    missing = [t for t in (fi, fj, inter) if not model.has(t)]
    if missing:
        raise KeyError(f"model lacks terms {missing}")
    b0 = model.coefficient("Intercept") if model.has("Intercept") else 0.0
    bi, bj, bij = model.coefficient(fi), model.coefficient(fj), model.coefficient(inter)
    xs = np.linspace(-1.0, 1.0, points)
    ys = np.linspace(-1.0, 1.0, points)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    Z = b0 + bi * X + bj * Y + bij * X * Y
    corners = {(x, y): b0 + bi * x + bj * y + bij * x * y for x in (-1, 1) for y in (-1, 1)}
    lo, hi = min(corners.values()), max(corners.values())
    scale = max(1.0, abs(lo), abs(hi)) * 1e-12
    return Surface(
        fi, fj, xs, ys, Z,
        sorted(c for c, v in corners.items() if v - lo <= scale),
        sorted(c for c, v in corners.items() if hi - v <= scale),
    )


# ---------------------------------------------------------------------------
# level recommendation


@dataclass
class Recommendation:
    factor: str
    level: int
    rationale: str


def recommend_levels(models: Mapping[int, ScreeningModel], priority: Sequence[int] = PRIORITY,
                     goals: Mapping[int, str] = RESPONSE_GOALS, threshold: float = RETENTION_T,
                     factors: Sequence[str] = FACTORS) -> dict[str, Recommendation]:
    """Choose a coded level per factor by strict response priority.

    The highest-priority response with a retained main effect decides.  If
    it only carries the factor through a retained interaction, the best
    corner of that interaction surface decides, provided the corner is
    unambiguous in this factor.  Factors with no retained effect anywhere
    default to the low level.
    """
    out = {}
    for f in factors:
        decision = None
        overridden = []
        for r in priority:
            m = models.get(r)
            if m is None:
                continue
            goal = goals[r]
            pref = None
            how = ""
            if m.retained(f, threshold):
                beta = m.coefficient(f)
                pref = -int(np.sign(beta)) if goal == MINIMISE else int(np.sign(beta))
                how = f"main effect {beta:+.4g} (t={m.t_ratio(f):+.2f})"
            else:
                pref, how = _interaction_preference(m, f, goal, threshold)
            if pref is None or pref == 0:
                continue
            if decision is None:
                decision = (pref, r, how)
            elif pref != decision[0]:
                overridden.append(r)
        if decision is None:
            out[f] = Recommendation(f, -1, "parsimony default: no retained effect on any response")
            continue
        level, r, how = decision
        word = "high" if level > 0 else "low"
        text = f"{word} to {goals[r]}imise {RESPONSE_LABELS[r]}: {how}"
        if overridden:
            text += "; outranks " + ", ".join(RESPONSE_LABELS[o] for o in overridden)
        out[f] = Recommendation(f, level, text)
    return out


def _interaction_preference(m: ScreeningModel, f: str, goal: str, threshold: float):
    prefs = set()
    used = []
    for term in retained_interactions(m, threshold):
        if f not in term:
            continue
        other = term.replace(f, "", 1)
        surf = response_surface_grid(m, f, other) if m.has(other) else None
        if surf is None:
            continue
        corners = surf.minimizing_corners if goal == MINIMISE else surf.maximizing_corners
        levels = {c[0] if surf.fi == f else c[1] for c in corners}
        if len(levels) == 1:
            prefs.add(levels.pop())
            used.append(term)
    if len(prefs) == 1:
        return prefs.pop(), "best corner of the " + "/".join(used) + " surface"
    return None, ""


def format_recommendation(recs: Mapping[str, Recommendation]) -> str:
    lines = [f"{f} = {r.level:+d}  # {r.rationale}" for f, r in recs.items()]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# results files


@dataclass
class ResultsTable:
    coded: np.ndarray  # one row per design run, replications averaged
    responses: dict[int, np.ndarray]
    run_ids: list[int]


def read_results(path: str) -> ResultsTable:
    """Load results.csv and average replications within each design run."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no result rows")
    by_run: dict[int, list[dict]] = {}
    for r in rows:
        by_run.setdefault(int(r["run_id"]), []).append(r)
    run_ids = sorted(by_run)
    coded = np.array([[float(by_run[i][0][f]) for f in FACTORS] for i in run_ids])
    responses = {}
    for num, name in RESPONSES.items():
        vals = []
        for i in run_ids:
            cells = [float(r[name]) for r in by_run[i] if r[name] != ""]
            vals.append(math.fsum(cells) / len(cells) if cells else float("nan"))
        responses[num] = np.array(vals)
    return ResultsTable(coded, responses, run_ids)


def fit_all(table: ResultsTable, interactions: str | Mapping[int, Sequence[str]] = "table") -> dict[int, ScreeningModel]:
    models = {}
    for num, y in table.responses.items():
        if interactions == "all":
            inter = ALL_INTERACTIONS
        elif interactions == "none":
            inter = ()
        elif interactions == "table":
            inter = DEFAULT_INTERACTIONS[num]
        else:
            inter = interactions[num]
        X, terms = model_matrix(table.coded, inter)
        keep = np.isfinite(y)
        models[num] = fit_screening_model(X[keep], y[keep], terms, RESPONSES[num])
    return models


def boxplot_summary(table: ResultsTable) -> list[list[str]]:
    rows = []
    for num, y in table.responses.items():
        for j, f in enumerate(FACTORS):
            for level in (-1, 1):
                v = y[(table.coded[:, j] == level) & np.isfinite(y)]
                if v.size == 0:
                    continue
                q = np.percentile(v, [0, 25, 50, 75, 100])
                rows.append([RESPONSES[num], f, str(level), str(v.size)] + [repr(float(x)) for x in q])
    return rows


def _write_csv(path: str, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def analyze(results_path: str, out_dir: str, interactions: str = "table",
            threshold: float = RETENTION_T) -> dict[int, ScreeningModel]:
    """Fit all six screening models and write every analysis output."""
    table = read_results(results_path)
    models = fit_all(table, interactions)
    os.makedirs(out_dir, exist_ok=True)
    directions = effect_direction_table(models, threshold)
    _write_csv(os.path.join(out_dir, "directions.csv"), ["factor"] + [RESPONSES[r] for r in models],
               [[f] + [directions[f][r] for r in models] for f in FACTORS])
    inter_rows = []
    coef_rows = []
    summary = []
    diag_dir = os.path.join(out_dir, "diagnostics")
    os.makedirs(diag_dir, exist_ok=True)
    for r, m in models.items():
        for term in retained_interactions(m, threshold):
            inter_rows.append([m.response, term, repr(m.coefficient(term)), repr(m.t_ratio(term))])
        for term, b, se, t in zip(m.terms, m.coef, m.se, m.t):
            coef_rows.append([m.response, term, repr(float(b)), repr(float(se)), repr(float(t))])
        try:
            w, p = shapiro_wilk(m.residuals)
        except ValueError:
            w, p = float("nan"), float("nan")
        summary.append([m.response, str(len(m.residuals)), str(len(m.terms)), repr(m.r2), repr(m.adj_r2),
                        repr(w), repr(p)])
        _write_csv(os.path.join(diag_dir, f"{m.response}_qq.csv"), ["normal_quantile", "residual"],
                   [[repr(a), repr(b)] for a, b in normal_quantile_pairs(m.residuals)])
        _write_csv(os.path.join(diag_dir, f"{m.response}_resid_fitted.csv"), ["fitted", "residual"],
                   [[repr(float(a)), repr(float(b))] for a, b in zip(m.fitted, m.residuals)])
    _write_csv(os.path.join(out_dir, "interactions.csv"), ["response", "interaction", "coefficient", "t"],
               inter_rows)
    _write_csv(os.path.join(out_dir, "coefficients.csv"), ["response", "term", "coefficient", "se", "t"],
               coef_rows)
    _write_csv(os.path.join(out_dir, "model_summary.csv"),
               ["response", "n", "terms", "r2", "adj_r2", "shapiro_w", "shapiro_p"], summary)
    _write_csv(os.path.join(out_dir, "boxplots.csv"),
               ["response", "factor", "level", "n", "min", "q1", "median", "q3", "max"], boxplot_summary(table))
    surf_dir = os.path.join(out_dir, "surfaces")
    os.makedirs(surf_dir, exist_ok=True)
    for r, pair in KEY_SURFACES:
        m = models[r]
        try:
            s = response_surface_grid(m, pair[0], pair[1])
        except KeyError:
            continue
        with open(os.path.join(surf_dir, f"{pair}_{m.response}.csv"), "w", newline="") as fh:
            fh.write(s.csv_text())
    with open(os.path.join(out_dir, "recommendation.txt"), "w") as fh:
        fh.write(format_recommendation(recommend_levels(models, threshold=threshold)))
    return models
