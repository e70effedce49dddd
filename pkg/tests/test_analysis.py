import numpy as np
import pandas as pd
import pytest
import scipy.special
import scipy.stats
import statsmodels.api as sm
import statsmodels.formula.api as smf
from hypothesis import given
from hypothesis import strategies as st

from groupanno import analysis
from groupanno.analysis import AnnotatorBiasEstimate, run_anova
from groupanno.types import AnnotatorTable

from conftest import dataset, table


# -- positive rates ------------------------------------------------------------------

def test_all_positive_annotations():
    ds = dataset([("i", [0.0], [("a", 1), ("b", 1)]), ("j", [0.0], [("a", 1), ("b", 1)])])
    rates = analysis.group_positive_rates(ds, table({"a": [0, 0], "b": [1, 1]}))
    assert [r.rates for r in rates] == [(1.0, 1.0), (1.0, 1.0)]


def test_toxicity_rates_from_matching_counts():
    # 10000 comments, one native and one non-native label each, with the
    # positive shares of 16.93% and 11.80%
    records = [(f"c{k}", [0.0], [("n", int(k < 1693)), ("m", int(k < 1180))]) for k in range(10000)]
    tab = table({"n": [0], "m": [1]}, ("native",))
    (r,) = analysis.group_positive_rates(dataset(records), tab)
    assert r.rates == (0.1693, 0.1180)
    assert r.n_instances == 10000


def test_identical_multisets_give_equal_rates():
    ds = dataset([("i", [0.0], [("a", 1), ("b", 0), ("c", 0), ("d", 1)]),
                  ("j", [0.0], [("a", 0), ("b", 0), ("c", 0), ("d", 0)])])
    (r,) = analysis.group_positive_rates(ds, table({"a": [0], "b": [0], "c": [1], "d": [1]}))
    assert r.rates[0] == r.rates[1]


def test_instances_without_both_groups_are_skipped_and_flagged():
    ds = dataset([("i", [0.0], [("a", 1), ("b", 0)]), ("j", [0.0], [("a", 1)])])
    rates = analysis.group_positive_rates(ds, table({"a": [0, 0], "b": [1, 0]}))
    assert rates[0].rates == (1.0, 0.0) and rates[0].n_instances == 1
    assert rates[1].rates == (None, None) and not rates[1].defined


# -- per-annotator bias --------------------------------------------------------------

def test_annotator_matching_reference_is_perfect():
    ds = dataset([("i", [0.0], [("a", 1)]), ("j", [0.0], [("a", 0)])])
    (e,) = analysis.estimate_annotator_bias(ds, {"i": 1, "j": 0})
    assert (e.sensitivity, e.specificity, e.n_pos, e.n_neg) == (1.0, 1.0, 1, 1)


def test_bias_counts_example():
    pairs = [(1, 1), (0, 1), (0, 0), (0, 0), (1, 0)]
    ds = dataset([(f"i{k}", [0.0], [("a", z)]) for k, (z, _) in enumerate(pairs)])
    ref = {f"i{k}": r for k, (_, r) in enumerate(pairs)}
    (e,) = analysis.estimate_annotator_bias(ds, ref)
    assert e.sensitivity == 0.5
    assert e.specificity == pytest.approx(2 / 3)


def test_only_positive_references_leave_specificity_undefined():
    ds = dataset([("i", [0.0], [("a", 1)])])
    (e,) = analysis.estimate_annotator_bias(ds, {"i": 1})
    assert e.specificity is None and e.n_neg == 0
    with pytest.raises(ValueError):
        e.response("accuracy")


def test_reference_must_cover_dataset():
    with pytest.raises(ValueError, match="missing"):
        analysis.estimate_annotator_bias(dataset([("i", [0.0], [("a", 1)])]), {})


# -- F distribution -------------------------------------------------------------------

@pytest.mark.parametrize("a", [0.5, 1.0, 2.5, 17.0, 150.0])
@pytest.mark.parametrize("b", [0.5, 1.0, 4.0, 60.0])
def test_incomplete_beta_matches_reference(a, b):
    for x in np.linspace(0.0, 1.0, 41):
        assert abs(analysis.betainc(a, b, x) - scipy.special.betainc(a, b, x)) <= 1e-10


@given(st.floats(0, 1e4), st.integers(1, 5), st.integers(1, 500))
def test_f_tail_matches_reference(f, d1, d2):
    assert abs(analysis.f_sf(f, d1, d2) - scipy.stats.f.sf(f, d1, d2)) <= 1e-10


@given(st.floats(0, 100), st.floats(0, 100), st.integers(1, 200))
def test_p_value_decreases_with_f(f1, f2, df):
    lo, hi = sorted((f1, f2))
    assert analysis.f_sf(hi, 1, df) <= analysis.f_sf(lo, 1, df) + 1e-15


def test_f_tail_edges():
    assert analysis.f_sf(0.0, 1, 5) == 1.0
    assert analysis.f_sf(float("inf"), 1, 5) == 0.0
    with pytest.raises(ValueError):
        analysis.betainc(0.0, 1.0, 0.5)


# -- ANOVA ----------------------------------------------------------------------------

def estimates(values):
    return [AnnotatorBiasEstimate(a, v, None, 1, 0) for a, v in values.items()]


def test_identical_responses_have_no_group_effect():
    tab = table({k: [k % 2, (k // 2) % 2] for k in range(8)})
    tab = AnnotatorTable({str(k): g for k, g in tab.annotators.items()}, 2)
    res = run_anova(estimates({str(k): 0.7 for k in range(8)}), tab)
    for c in res.categories:
        assert c.inter_group_ss == 0.0 and c.p_value == 1.0
    assert res.grand_mean == pytest.approx(0.7)


def test_hand_solved_four_point_design():
    tab = table({"a": [0], "b": [0], "c": [1], "d": [1]})
    res = run_anova(estimates({"a": 0.2, "b": 0.2, "c": 0.8, "d": 0.8}), tab)
    (c,) = res.categories
    assert c.inter_group_ss == pytest.approx(0.36, abs=1e-12)
    assert res.residual_ss == 0.0
    assert c.f_statistic == float("inf") and c.p_value == 0.0
    assert c.group_means == (pytest.approx(0.2), pytest.approx(0.8))
    assert c.effects == (pytest.approx(-0.3), pytest.approx(0.3))
    assert res.grand_mean == pytest.approx(0.5)


def test_one_factor_f_equals_classic_one_way_anova():
    rng = np.random.default_rng(0)
    g = rng.permutation([0] * 9 + [1] * 14)
    y = rng.normal(0.6, 0.1, size=23) + 0.05 * g
    tab = AnnotatorTable({f"a{k}": (int(g[k]),) for k in range(23)}, 1)
    (c,) = run_anova(estimates({f"a{k}": y[k] for k in range(23)}), tab).categories
    ref = scipy.stats.f_oneway(y[g == 0], y[g == 1])
    assert c.f_statistic == pytest.approx(ref.statistic, rel=1e-10)
    assert c.p_value == pytest.approx(ref.pvalue, rel=1e-8)
    # direct two-group formula
    n0, n1 = (g == 0).sum(), (g == 1).sum()
    ss_between = n0 * n1 / (n0 + n1) * (y[g == 0].mean() - y[g == 1].mean()) ** 2
    ss_within = ((y[g == 0] - y[g == 0].mean()) ** 2).sum() + ((y[g == 1] - y[g == 1].mean()) ** 2).sum()
    assert c.inter_group_ss == pytest.approx(ss_between, rel=1e-10)
    assert c.f_statistic == pytest.approx(ss_between / (ss_within / (23 - 2)), rel=1e-10)


@pytest.mark.parametrize("seed", range(3))
def test_type_two_sums_match_reference_on_unbalanced_design(seed):
    rng = np.random.default_rng(seed)
    n = 30
    G = rng.integers(0, 2, size=(n, 3))
    G[0], G[1] = 0, 1
    y = 0.5 + 0.1 * G[:, 0] - 0.05 * G[:, 1] + rng.normal(0, 0.05, size=n)
    tab = AnnotatorTable({f"a{k}": tuple(int(v) for v in G[k]) for k in range(n)}, 3)
    res = run_anova(estimates({f"a{k}": y[k] for k in range(n)}), tab)
    df = pd.DataFrame({"y": y, "g0": G[:, 0], "g1": G[:, 1], "g2": G[:, 2]})
    fit = smf.ols("y ~ C(g0, Sum) + C(g1, Sum) + C(g2, Sum)", df).fit()
    ref = sm.stats.anova_lm(fit, typ=2)
    for p in range(3):
        row = ref.loc[f"C(g{p}, Sum)"]
        c = res.categories[p]
        assert c.inter_group_ss == pytest.approx(row["sum_sq"], rel=1e-9)
        assert c.f_statistic == pytest.approx(row["F"], rel=1e-9)
        assert c.p_value == pytest.approx(row["PR(>F)"], rel=1e-7, abs=1e-14)
    assert res.residual_ss == pytest.approx(ref.loc["Residual", "sum_sq"], rel=1e-9)
    assert res.df_resid == n - 4


responses = st.lists(st.floats(0, 1), min_size=8, max_size=20)


@st.composite
def designs(draw):
    ys = draw(responses)
    n = len(ys)
    P = draw(st.integers(1, 2))
    G = [[draw(st.integers(0, 1)) for _ in range(P)] for _ in range(n)]
    for p in range(P):
        G[0][p], G[1][p] = 0, 1
    return ys, G, P


@given(designs(), st.integers(0, 1))
def test_group_relabeling_is_exactly_invariant(design, p_flip):
    ys, G, P = design
    p_flip = min(p_flip, P - 1)
    est = estimates({f"a{k}": y for k, y in enumerate(ys)})
    tab = AnnotatorTable({f"a{k}": tuple(g) for k, g in enumerate(G)}, P)
    flipped = AnnotatorTable(
        {f"a{k}": tuple(1 - v if q == p_flip else v for q, v in enumerate(g)) for k, g in enumerate(G)}, P
    )
    a, b = run_anova(est, tab), run_anova(est, flipped)
    for ca, cb in zip(a.categories, b.categories):
        assert (ca.inter_group_ss, ca.f_statistic, ca.p_value) == (cb.inter_group_ss, cb.f_statistic, cb.p_value)
    assert a.residual_ss == b.residual_ss


@given(designs(), st.floats(-5, 5))
def test_constant_shift_moves_only_the_grand_mean(design, shift):
    ys, G, P = design
    tab = AnnotatorTable({f"a{k}": tuple(g) for k, g in enumerate(G)}, P)
    a = run_anova(estimates({f"a{k}": y for k, y in enumerate(ys)}), tab)
    b = run_anova(estimates({f"a{k}": y + shift for k, y in enumerate(ys)}), tab)
    assert b.grand_mean == pytest.approx(a.grand_mean + shift, abs=1e-9)
    for ca, cb in zip(a.categories, b.categories):
        assert cb.inter_group_ss == pytest.approx(ca.inter_group_ss, abs=1e-9)
        if ca.p_value not in (0.0, 1.0) and cb.p_value not in (0.0, 1.0):
            assert cb.p_value == pytest.approx(ca.p_value, abs=1e-6)


def test_singular_category_reported_without_hiding_others():
    tab = table({"a": [0, 0], "b": [0, 1], "c": [0, 0], "d": [0, 1], "e": [0, 1]})
    res = run_anova(estimates({"a": 0.1, "b": 0.5, "c": 0.2, "d": 0.6, "e": 0.55}), tab)
    assert res.categories[0].error is not None
    assert res.categories[0].inter_group_ss is None
    assert res.categories[1].error is None
    assert res.categories[1].p_value < 0.05


def test_undefined_responses_are_dropped_and_listed():
    tab = table({"a": [0], "b": [0], "c": [1], "d": [1], "e": [1]})
    est = estimates({"a": 0.2, "b": 0.3, "c": 0.8, "d": 0.7}) + [AnnotatorBiasEstimate("e", None, 0.5, 0, 2)]
    res = run_anova(est, tab, "sensitivity")
    assert res.dropped == ("e",) and res.n_used == 4


def test_too_few_annotators():
    with pytest.raises(ValueError):
        run_anova(estimates({"a": 0.2, "b": 0.4}), table({"a": [0], "b": [1]}))
    with pytest.raises(ValueError):
        run_anova([], table({"a": [0]}))


def test_power_and_level_on_simulated_pool():
    rng = np.random.default_rng(7)
    n = 40
    G = np.zeros((n, 2), dtype=int)
    G[rng.permutation(n)[:20], 0] = 1
    G[rng.permutation(n)[:20], 1] = 1
    y = 0.6 + np.where(G[:, 0] == 0, 0.1, -0.1) + rng.normal(0, 0.02, size=n)
    tab = AnnotatorTable({f"a{k}": tuple(int(v) for v in G[k]) for k in range(n)}, 2)
    res = run_anova(estimates({f"a{k}": y[k] for k in range(n)}), tab)
    assert res.categories[0].p_value < 0.005
    assert res.categories[1].p_value > 0.05


# -- layouts --------------------------------------------------------------------------

def test_significance_stars():
    assert [analysis.significance_stars(p) for p in (0.001, 0.01, 0.2, None)] == ["**", "*", "", ""]


def test_layouts():
    ds = dataset([("i", [0.0], [("a", 1), ("b", 0)]), ("j", [0.0], [("a", 0), ("b", 0), ("c", 1)]),
                  ("k", [0.0], [("c", 1), ("d", 0)])])
    tab = table({"a": [0], "b": [1], "c": [0], "d": [1]}, ("language",))
    rates = analysis.group_positive_rates(ds, tab)
    text = analysis.format_positive_rates(rates)
    assert text.splitlines()[1].split() == ["language", "75.00", "0.00", "3"]
    est = analysis.estimate_annotator_bias(ds, {"i": 1, "j": 0, "k": 1})
    anova = {"sensitivity": run_anova(estimates({"a": 1.0, "b": 0.0, "c": 0.9, "d": 0.1}), tab)}
    t2 = analysis.format_anova(anova)
    assert t2.splitlines()[1].startswith("language")
    assert t2.splitlines()[1].split() == ["language", "0.8100*"]
    assert t2.splitlines()[-1] == "* p<0.05, ** p<0.005"
    d = analysis.analysis_to_dict(rates, anova)
    assert d["positive_rates"]["language"]["group_0"] == 0.75
    assert d["anova"]["sensitivity"]["categories"]["language"]["f_statistic"] == pytest.approx(162.0)
    assert len(est) == 4
