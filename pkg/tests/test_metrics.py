import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ezavood.errors import ValidationError
from ezavood.metrics import (
    GzslReport,
    aupr,
    auroc,
    fpr_at_tpr,
    gzsl_report_rows,
    harmonic_mean,
    ood_report,
    ood_report_rows,
    per_class_accuracy,
    roc_points,
    roc_to_csv,
    rows_to_csv,
    to_jsonl,
    trapezoid_area,
)

from oracles import enum_aupr, enum_aupr_exact, enum_fpr_at_tpr, pairwise_auroc

score_lists = st.lists(st.integers(-5, 5).map(float), min_size=1, max_size=40)


def tied_scores(rng, n):
    # coarse grid -> plenty of ties
    return np.round(rng.standard_normal(n) * 3) / 2


def test_per_class_examples():
    assert per_class_accuracy([0, 1, 1], [0, 1, 1], [0, 1])[0] == 1.0
    labels = [0] * 10 + [1]
    mean, table = per_class_accuracy([0] * 11, labels, [0, 1])
    assert mean == 0.5 and table == {0: 1.0, 1: 0.0}
    assert per_class_accuracy([0, 0, 0, 0], [0, 0, 1, 1], [0, 1])[0] == 0.5


def test_per_class_empty_class_excluded(caplog):
    mean, table = per_class_accuracy([0, 0], [0, 0], [0, 1])
    assert mean == 1.0 and math.isnan(table[1])
    assert "no evaluation samples" in caplog.text


def test_per_class_errors():
    with pytest.raises(ValidationError):
        per_class_accuracy([], [], [])
    with pytest.raises(ValidationError):
        per_class_accuracy([0], [5], [0, 1])


def test_harmonic_mean_examples():
    assert harmonic_mean(0.8353, 0.4801) == pytest.approx(0.6097, abs=1e-4)
    assert harmonic_mean(0.37, 0.37) == pytest.approx(0.37, abs=1e-16)
    assert harmonic_mean(0.0, 0.9) == 0.0
    assert harmonic_mean(0.9, 0.0) == 0.0


def test_auroc_examples():
    assert auroc([2, 3], [0, 1]) == 1.0
    assert auroc([1, 2, 3], [1, 2, 3]) == 0.5
    assert auroc([3, 1], [2, 0]) == 0.75


def test_auroc_errors():
    with pytest.raises(ValidationError):
        auroc([], [1.0])
    with pytest.raises(ValidationError):
        auroc([1.0], [np.nan])


def test_fpr_examples():
    assert fpr_at_tpr([2, 3], [0, 1]) == 0.0
    assert fpr_at_tpr([5, 4, 3, 2], [3.5, 1], 0.95) == 0.5


def test_fpr_same_distribution_tracks_target(rng):
    s = rng.standard_normal(20000)
    u = rng.standard_normal(20000)
    assert fpr_at_tpr(s, u) == pytest.approx(0.95, abs=0.01)


def test_aupr_examples():
    assert aupr([2, 3], [0, 1]) == 1.0
    n = 7
    assert aupr([0.0], np.arange(1.0, n)) == pytest.approx(1 / n, abs=1e-16)
    assert aupr([1.0] * 3, [1.0] * 5) == pytest.approx(3 / 8, abs=1e-16)


def test_aupr_positive_unseen():
    s, u = [3.0, 1.0, 0.5], [2.0, 0.0]
    assert aupr(s, u, positive="unseen") == aupr([-x for x in u], [-x for x in s])
    with pytest.raises(ValidationError):
        aupr(s, u, positive="other")


def test_roc_examples():
    assert roc_points([2, 3], [0, 1]) == [(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]
    pts = roc_points([0.0, 1.0], [2.0, 3.0])
    assert pts == [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0)]
    assert trapezoid_area(pts) == 0.0 and auroc([0.0, 1.0], [2.0, 3.0]) == 0.0


def test_roc_reversed_scores_below_diagonal(rng):
    s, u = rng.standard_normal(200), rng.standard_normal(200) + 1.0
    pts = roc_points(s, u)
    assert auroc(s, u) < 0.5
    assert np.mean([t - f for f, t in pts]) < 0


@pytest.mark.parametrize("seed", range(5))
def test_roc_area_equals_auroc(seed):
    rng = np.random.default_rng(seed)
    s, u = tied_scores(rng, 300) + 0.4, tied_scores(rng, 250)
    pts = roc_points(s, u)
    assert pts[0] == (0.0, 0.0) and pts[-1] == (1.0, 1.0)
    arr = np.array(pts)
    assert np.all(np.diff(arr, axis=0) >= 0)
    assert abs(trapezoid_area(pts) - auroc(s, u)) < 1e-12


@pytest.mark.parametrize("seed", range(10))
def test_fast_metrics_equal_oracles(seed):
    rng = np.random.default_rng(seed)
    ns, nu = rng.integers(1, 400, size=2)
    s, u = tied_scores(rng, ns) + 0.5, tied_scores(rng, nu)
    assert auroc(s, u) == float(pairwise_auroc(s, u))
    assert fpr_at_tpr(s, u) == enum_fpr_at_tpr(s, u)
    assert aupr(s, u) == enum_aupr(s, u)
    assert abs(aupr(s, u) - float(enum_aupr_exact(s, u))) < 1e-15


@given(score_lists, score_lists)
def test_auroc_complement(s, u):
    assert auroc(s, u) + auroc(u, s) == pytest.approx(1.0, abs=1e-15)


@given(score_lists, score_lists)
def test_auroc_invariant_under_monotone_transform(s, u):
    f = lambda v: np.exp(np.asarray(v) / 2) * 3 - 1
    assert auroc(s, u) == auroc(f(s), f(u))


@settings(max_examples=50)
@given(score_lists, score_lists, st.floats(0.05, 1.0))
def test_metrics_property_vs_oracles(s, u, target):
    assert auroc(s, u) == float(pairwise_auroc(s, u))
    assert fpr_at_tpr(s, u, target) == enum_fpr_at_tpr(s, u, target)
    assert aupr(s, u) == enum_aupr(s, u)


def test_ood_report_bundle():
    r = ood_report([3, 1], [2, 0])
    assert r.auroc == 0.75 and r.roc_points[-1] == (1.0, 1.0)
    assert set(r.to_dict()) == {"auroc", "fpr95", "aupr", "roc_points"}


def test_report_rows_and_csv():
    rep = GzslReport(acc_S=0.8353, acc_U=0.4801, H=harmonic_mean(0.8353, 0.4801), per_class={0: 1.0, 1: float("nan")},
                     confusion={"seen_to_seen": 3})
    rows = gzsl_report_rows(rep, ["a", "b"])
    assert ("H", "60.97") in rows and ("class.b", "nan") in rows and ("routing.seen_to_seen", "3") in rows
    text = rows_to_csv(rows + ood_report_rows(ood_report([1.0], [0.0]), prefix="x."))
    assert text.startswith("metric,value\n") and "x.auroc,100.00" in text


def test_jsonl_nan_becomes_null():
    line = to_jsonl([{"a": float("nan"), "b": np.float64(1.5), "c": {1: 2.0}}])
    assert json.loads(line) == {"a": None, "b": 1.5, "c": {"1": 2.0}}


def test_roc_csv():
    assert roc_to_csv([(0.0, 0.0), (1.0, 1.0)]) == "fpr,tpr\n0.0,0.0\n1.0,1.0\n"
