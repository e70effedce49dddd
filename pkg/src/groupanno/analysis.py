"""Empirical study of annotator group bias.

Three pieces: positive annotation rates per demographic group, per-annotator
sensitivity/specificity against a reference labelling, and an additive
least-squares ANOVA that asks whether a demographic category explains
variation in those per-annotator rates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .types import AnnotationDataset, AnnotatorTable

RESPONSES = ("sensitivity", "specificity")

# relative size below which a sum of squares is treated as exact zero
_SS_RTOL = 1e-12


@dataclass(frozen=True)
class GroupRates:
    """Positive-annotation rate of each group on instances both groups labelled.

    ``rates[g]`` is None when the common instance set is empty.
    """

    category: str
    rates: Tuple[Optional[float], Optional[float]]
    n_instances: int
    n_annotations: Tuple[int, int]

    @property
    def defined(self) -> bool:
        return self.n_instances > 0


def group_positive_rates(dataset: AnnotationDataset, table: AnnotatorTable) -> List[GroupRates]:
    out = []
    for p, name in enumerate(table.category_names):
        pos = [0, 0]
        tot = [0, 0]
        n_common = 0
        for inst in dataset.instances:
            groups = [table.annotators[a.annotator_id][p] for a in inst.annotations]
            if 0 not in groups or 1 not in groups:
                continue
            n_common += 1
            for a, g in zip(inst.annotations, groups):
                tot[g] += 1
                pos[g] += a.label
        rates = tuple(pos[g] / tot[g] if tot[g] else None for g in (0, 1))
        out.append(GroupRates(name, rates, n_common, (tot[0], tot[1])))
    return out


@dataclass(frozen=True)
class AnnotatorBiasEstimate:
    annotator_id: str
    sensitivity: Optional[float]
    specificity: Optional[float]
    n_pos: int
    n_neg: int

    def response(self, which: str) -> Optional[float]:
        if which not in RESPONSES:
            raise ValueError(f"response must be one of {RESPONSES}, got {which!r}")
        return getattr(self, which)


def estimate_annotator_bias(dataset: AnnotationDataset, reference_labels: Mapping[str, int]) -> List[AnnotatorBiasEstimate]:
    """Count-based sensitivity and specificity of every annotator.

    Annotators are listed in order of first appearance. A rate is None when
    the annotator saw no reference instance of that class.
    """
    missing = [iid for iid in dataset.instance_ids if iid not in reference_labels]
    if missing:
        raise ValueError(f"reference labels missing for {len(missing)} instance(s), e.g. {missing[0]!r}")
    counts: Dict[str, List[int]] = {}
    for inst in dataset.instances:
        ref = int(reference_labels[inst.instance_id])
        for a in inst.annotations:
            c = counts.setdefault(a.annotator_id, [0, 0, 0, 0])  # tp, n_pos, tn, n_neg
            if ref == 1:
                c[1] += 1
                c[0] += a.label == 1
            else:
                c[3] += 1
                c[2] += a.label == 0
    return [
        AnnotatorBiasEstimate(
            aid,
            c[0] / c[1] if c[1] else None,
            c[2] / c[3] if c[3] else None,
            c[1],
            c[3],
        )
        for aid, c in counts.items()
    ]


# -- F distribution --------------------------------------------------------------

def _betacf(a: float, b: float, x: float) -> float:
    # modified Lentz evaluation of the incomplete beta continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 10000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("shape parameters must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = a * math.log(x) + b * math.log1p(-x) - (math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b))
    # the fraction converges fast only below the mean; use symmetry above it
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, 1.0 - x) / b


def f_sf(f: float, d1: float, d2: float) -> float:
    """Upper tail P(F > f) of the F(d1, d2) distribution."""
    if math.isnan(f):
        return float("nan")
    if f <= 0:
        return 1.0
    if math.isinf(f):
        return 0.0
    return betainc(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f))


# -- ANOVA -------------------------------------------------------------------------

@dataclass(frozen=True)
class CategoryAnova:
    category: str
    inter_group_ss: Optional[float]
    f_statistic: Optional[float]
    p_value: Optional[float]
    group_means: Tuple[Optional[float], Optional[float]]
    group_sizes: Tuple[int, int]
    effects: Optional[Tuple[float, float]] = None
    error: Optional[str] = None


@dataclass(frozen=True)
class AnovaResult:
    response: str
    categories: Tuple[CategoryAnova, ...]
    grand_mean: float
    residual_ss: float
    df_resid: int
    n_used: int
    dropped: Tuple[str, ...] = ()

    def __getitem__(self, p: int) -> CategoryAnova:
        return self.categories[p]


def _rss(X, y):
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    r = y - X @ coef
    return float(r @ r), coef


def run_anova(bias_estimates: Sequence[AnnotatorBiasEstimate], table: AnnotatorTable, response: str = "sensitivity") -> AnovaResult:
    """Additive main-effects ANOVA of one bias rate on all categories.

    Each category enters as a single sum-to-zero contrast column, so the two
    group effects are ``+c`` and ``-c``. The SS of a category is the rise in
    residual SS when its column is removed from the full model (Type II).
    The contrast sign follows the group of the first retained annotator,
    which makes results bit-identical under swapping group labels.
    """
    ids, y, dropped = [], [], []
    for est in bias_estimates:
        v = est.response(response)
        if v is None:
            dropped.append(est.annotator_id)
        else:
            ids.append(est.annotator_id)
            y.append(float(v))
    n = len(y)
    if n == 0:
        raise ValueError("no annotator has a defined response")
    y = np.asarray(y)
    G = table.group_matrix(ids)
    shift = float(y.mean())
    yc = y - shift
    tss = float(yc @ yc)

    cols, active, errors = [], [], {}
    for p in range(table.num_categories):
        g = G[:, p]
        if g.min() == g.max():
            errors[p] = f"singular design: every retained annotator is in group {int(g[0])}"
            continue
        cols.append(np.where(g == g[0], 1.0, -1.0))
        active.append(p)
    X = np.column_stack([np.ones(n)] + cols)
    df_resid = n - X.shape[1]
    if df_resid <= 0:
        raise ValueError(f"{n} annotators leave no residual degrees of freedom for {X.shape[1]} parameters")
    rss, coef = _rss(X, yc)
    if rss <= _SS_RTOL * tss:
        rss = 0.0

    results = []
    for p, name in enumerate(table.category_names):
        g = G[:, p]
        sizes = (int(np.sum(g == 0)), int(np.sum(g == 1)))
        means = tuple(float(y[g == k].mean()) if sizes[k] else None for k in (0, 1))
        if p in errors:
            results.append(CategoryAnova(name, None, None, None, means, sizes, None, errors[p]))
            continue
        j = active.index(p) + 1
        rss_p, _ = _rss(np.delete(X, j, axis=1), yc)
        ss = max(rss_p - rss, 0.0)
        if ss <= _SS_RTOL * tss:
            ss = 0.0
        if ss == 0.0:
            f, pv = 0.0, 1.0
        elif rss == 0.0:
            f, pv = math.inf, 0.0
        else:
            f = ss / (rss / df_resid)
            pv = f_sf(f, 1.0, df_resid)
        c = float(coef[j])
        eff = (c, -c) if g[0] == 0 else (-c, c)
        results.append(CategoryAnova(name, ss, f, pv, means, sizes, eff))
    return AnovaResult(response, tuple(results), float(coef[0]) + shift, rss, df_resid, n, tuple(dropped))


# -- text layouts ------------------------------------------------------------------

def significance_stars(p_value: Optional[float]) -> str:
    if p_value is None:
        return ""
    if p_value < 0.005:
        return "**"
    if p_value < 0.05:
        return "*"
    return ""


def format_positive_rates(rates: Sequence[GroupRates]) -> str:
    """Category rows with the positive rate (in percent) of group 0 and group 1."""
    header = ("category", "group 0 (%)", "group 1 (%)", "instances")
    rows = [header]
    for r in rates:
        cells = ["n/a" if v is None else f"{100 * v:.2f}" for v in r.rates]
        rows.append((r.category, cells[0], cells[1], str(r.n_instances)))
    return _grid(rows)


def format_anova(results: Mapping[str, AnovaResult]) -> str:
    """Inter-group SS per category and response, starred at p<0.05 (*) and p<0.005 (**)."""
    responses = list(results)
    names = [c.category for c in next(iter(results.values())).categories] if results else []
    rows = [("category",) + tuple(responses)]
    for p, name in enumerate(names):
        cells = []
        for resp in responses:
            c = results[resp].categories[p]
            cells.append("error" if c.error else f"{c.inter_group_ss:.4f}{significance_stars(c.p_value)}")
        rows.append((name,) + tuple(cells))
    return _grid(rows) + "* p<0.05, ** p<0.005\n"


def _grid(rows) -> str:
    widths = [max(len(r[j]) for r in rows) for j in range(len(rows[0]))]
    return "".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() + "\n" for r in rows)


def analysis_to_dict(rates: Sequence[GroupRates], anova: Mapping[str, AnovaResult]) -> dict:
    out = {
        "positive_rates": {
            r.category: {"group_0": r.rates[0], "group_1": r.rates[1], "n_instances": r.n_instances}
            for r in rates
        },
        "anova": {},
    }
    for resp, res in anova.items():
        out["anova"][resp] = {
            "grand_mean": res.grand_mean,
            "residual_ss": res.residual_ss,
            "df_resid": res.df_resid,
            "n_used": res.n_used,
            "dropped": list(res.dropped),
            "categories": {
                c.category: {
                    "inter_group_ss": c.inter_group_ss,
                    "f_statistic": c.f_statistic if c.f_statistic is None or math.isfinite(c.f_statistic) else "inf",
                    "p_value": c.p_value,
                    "group_means": list(c.group_means),
                    "group_sizes": list(c.group_sizes),
                    "error": c.error,
                }
                for c in res.categories
            },
        }
    return out
