import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special, stats

from procattn.errors import DataError
from procattn.evalstats import (
    GroupSummary,
    anova_from_summary,
    anova_one_way,
    betainc_regularized,
    confusion,
    f_survival,
    metrics,
    true_label_rank,
)
from oracles import formula_metrics

SUMMARIES = json.loads((Path(__file__).parent / "data" / "anova_summaries.json").read_text())


class TestConfusion:
    def test_counts_and_order(self):
        cm = confusion(["a", "b", "b", "c"], ["a", "c", "b", "c"])
        assert cm.classes == ["a", "b", "c"]
        np.testing.assert_array_equal(cm.counts, [[1, 0, 0], [0, 1, 1], [0, 0, 1]])
        assert cm.one_vs_rest(1) == (1, 0, 1, 2)

    def test_explicit_classes_keep_empty_rows(self):
        cm = confusion([1], [1], classes=[0, 1, 2])
        assert cm.counts.shape == (3, 3) and cm.total == 1

    def test_errors(self):
        with pytest.raises(DataError):
            confusion([1, 2], [1])
        with pytest.raises(DataError):
            confusion([], [])
        with pytest.raises(DataError, match="not among classes"):
            confusion([5], [5], classes=[0])

    def test_csv(self):
        text = confusion(["x", "y"], ["y", "y"]).to_csv()
        assert text.splitlines() == ["actual\\predicted,x,y", "x,0,1", "y,0,1"]


class TestMetrics:
    def test_binary_example(self):
        actual = ["pos"] * 5 + ["neg"] * 5
        predicted = ["pos"] * 3 + ["neg"] * 2 + ["pos"] + ["neg"] * 4
        rep = metrics(confusion(actual, predicted, classes=["pos", "neg"]))
        pos = rep.per_class[0]
        assert pos.accuracy == pytest.approx(0.7)
        assert pos.precision == pytest.approx(0.75)
        assert pos.recall == pytest.approx(0.6)
        assert pos.f1 == pytest.approx(2 / 3)
        assert pos.support == 5 and not pos.zero_division

    def test_zero_division_flag(self):
        rep = metrics(confusion(["a", "a"], ["a", "a"], classes=["a", "b"]))
        b = rep.per_class[1]
        assert (b.precision, b.recall, b.f1) == (0.0, 0.0, 0.0)
        assert b.zero_division and not rep.per_class[0].zero_division
        assert rep.macro["precision"] == 0.5
        assert rep.weighted["precision"] == 1.0

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31), st.integers(2, 6), st.integers(1, 200))
    def test_against_formulas(self, seed, k, n):
        rng = np.random.default_rng(seed)
        actual = rng.integers(0, k, n).tolist()
        predicted = rng.integers(0, k, n).tolist()
        rep = metrics(confusion(actual, predicted, classes=list(range(k))))
        for i, c in enumerate(rep.per_class):
            tp = sum(a == i and p == i for a, p in zip(actual, predicted))
            fp = sum(a != i and p == i for a, p in zip(actual, predicted))
            fn = sum(a == i and p != i for a, p in zip(actual, predicted))
            tn = n - tp - fp - fn
            assert (c.accuracy, c.precision, c.recall, c.f1) == pytest.approx(
                formula_metrics(tp, fp, fn, tn), abs=1e-12)
        # support-weighted recall is overall accuracy
        assert rep.weighted["recall"] == pytest.approx(rep.accuracy, abs=1e-12)
        assert rep.accuracy == pytest.approx(np.mean(np.array(actual) == np.array(predicted)))

    def test_headline(self):
        rep = metrics(confusion([0, 1], [0, 1]))
        assert rep.headline() == {"accuracy": 1.0, "precision": 1.0, "recall": 1.0, "f1": 1.0}


class TestIncompleteBeta:
    @pytest.mark.parametrize("a,b", [(0.5, 0.5), (1, 1), (2.5, 7), (30, 0.7), (1e3, 2e3), (17276, 0.5)])
    def test_against_scipy(self, a, b):
        for x in np.linspace(0.0, 1.0, 23):
            assert betainc_regularized(a, b, x) == pytest.approx(special.betainc(a, b, x), abs=1e-10)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.05, 500), st.floats(0.05, 500), st.floats(0, 1))
    def test_random_against_scipy(self, a, b, x):
        assert betainc_regularized(a, b, x) == pytest.approx(special.betainc(a, b, x), abs=1e-9)

    def test_domain(self):
        with pytest.raises(ValueError):
            betainc_regularized(0, 1, 0.5)
        with pytest.raises(ValueError):
            betainc_regularized(1, 1, 1.5)

    @pytest.mark.parametrize("df1,df2", [(1, 5), (1, 34552), (3, 40), (10, 10)])
    def test_f_survival(self, df1, df2):
        for f in (0.0, 1e-4, 0.5, 1.0, 2.7, 10.0, 100.0):
            assert f_survival(f, df1, df2) == pytest.approx(stats.f.sf(f, df1, df2), abs=1e-10)
        assert f_survival(math.inf, df1, df2) == 0.0

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0, 50), st.floats(0, 50), st.integers(1, 5), st.integers(2, 500))
    def test_p_monotone_in_f(self, f1, f2, df1, df2):
        lo, hi = sorted((f1, f2))
        assert f_survival(hi, df1, df2) <= f_survival(lo, df1, df2) + 1e-12


groups_st = st.lists(
    st.lists(st.floats(-100, 100, allow_nan=False), min_size=2, max_size=30),
    min_size=2, max_size=5,
)


def _not_degenerate(groups):
    within = sum(np.var(g) for g in groups)
    return within > 1e-6


class TestAnova:
    def test_against_scipy(self):
        rng = np.random.default_rng(0)
        groups = [rng.normal(m, 1.0, n) for m, n in [(0, 20), (0.5, 35), (0.2, 12)]]
        res = anova_one_way(groups)
        ref = stats.f_oneway(*groups)
        assert res.f == pytest.approx(ref.statistic, rel=1e-10)
        assert res.p_value == pytest.approx(ref.pvalue, abs=1e-12)
        assert (res.df_between, res.df_within) == (2, 64)

    @settings(max_examples=60, deadline=None)
    @given(groups_st)
    def test_random_against_scipy(self, groups):
        if not _not_degenerate(groups):
            return
        res = anova_one_way(groups)
        ref = stats.f_oneway(*groups)
        assert res.f == pytest.approx(ref.statistic, rel=1e-8, abs=1e-10)
        if np.isnan(ref.pvalue):
            # scipy gives no p-value when the group means coincide (F = 0); P(F > 0) = 1
            assert res.p_value == 1.0
        else:
            assert res.p_value == pytest.approx(ref.pvalue, abs=1e-9)

    @settings(max_examples=60, deadline=None)
    @given(groups_st)
    def test_summary_matches_raw(self, groups):
        if not _not_degenerate(groups):
            return
        raw = anova_one_way(groups)
        summ = anova_from_summary([GroupSummary.of(g) for g in groups])
        assert summ.f == pytest.approx(raw.f, rel=1e-9, abs=1e-12)
        assert summ.p_value == pytest.approx(raw.p_value, rel=1e-9, abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(groups_st, st.floats(-50, 50), st.floats(0.1, 10))
    def test_shift_and_scale_invariant(self, groups, shift, scale):
        if not _not_degenerate(groups):
            return
        base = anova_one_way(groups)
        moved = anova_one_way([np.asarray(g) * scale + shift for g in groups])
        assert moved.f == pytest.approx(base.f, rel=1e-6, abs=1e-9)

    def test_constant_equal_groups(self):
        res = anova_one_way([[2.0, 2.0], [2.0, 2.0, 2.0]])
        assert res.f == 0.0 and res.p_value == 1.0 and res.notes

    def test_constant_distinct_groups(self):
        res = anova_one_way([[1.0, 1.0], [2.0, 2.0]])
        assert math.isinf(res.f) and res.p_value == 0.0

    def test_too_few(self):
        with pytest.raises(DataError):
            anova_one_way([[1.0, 2.0]])
        with pytest.raises(DataError):
            anova_one_way([[1.0], [2.0, 3.0]])

    @pytest.mark.parametrize("name", sorted(SUMMARIES))
    def test_reference_summaries(self, name):
        case = SUMMARIES[name]
        res = anova_from_summary(case["groups"])
        assert res.f == pytest.approx(case["f"], abs=1e-3)
        assert res.p_value == pytest.approx(case["p"], abs=1e-3)
        assert res.df_within == case["df_within"]

    def test_inconsistent_summary(self):
        bad = [{"count": 10, "sum": 50.0, "mean": 7.0, "variance": 1.0},
               {"count": 10, "sum": 50.0, "mean": 5.0, "variance": 1.0}]
        with pytest.raises(DataError, match="inconsistent"):
            anova_from_summary(bad)

    def test_negative_variance(self):
        bad = [{"count": 10, "sum": 50.0, "mean": 5.0, "variance": -1.0},
               {"count": 10, "sum": 50.0, "mean": 5.0, "variance": 1.0}]
        with pytest.raises(DataError, match="negative"):
            anova_from_summary(bad)


def test_true_label_rank():
    probs = [0.1, 0.5, 0.3, 0.1]
    assert true_label_rank(probs, 1) == 1
    assert true_label_rank(probs, 2) == 2
    # ties share the better rank
    assert true_label_rank(probs, 0) == 3 and true_label_rank(probs, 3) == 3
