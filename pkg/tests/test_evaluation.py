import random
from types import SimpleNamespace

import pytest
from hypothesis import given, strategies as st

from vulnloc.errors import DataError
from vulnloc.evaluation import (
    ConfusionCounts,
    SampleResult,
    aggregate_report,
    detection_metrics,
    f1_from,
    fmt_metric,
    format_summary,
    iou,
    match_results,
)

LINES = st.frozensets(st.sampled_from([f"a.c:{i}" for i in range(1, 9)]), max_size=6)


def test_worked_iou_example():
    U = {"f.c:3", "f.c:4", "f.c:5"}
    V = {"f.c:4", "f.c:5", "f.c:9"}
    assert len(U & V) == 2 and len(U | V) == 4
    V.add("f.c:10")
    assert iou(U, V) == 2 / 5 == 0.4


def test_iou_edge_cases():
    assert iou({"a"}, {"a"}) == 1.0
    assert iou({"a"}, {"b"}) == 0.0
    assert iou(set(), set()) == 1.0
    assert iou(set(), {"a"}) == 0.0


@given(LINES, LINES)
def test_iou_symmetric_and_bounded(U, V):
    assert iou(U, V) == iou(V, U)
    assert 0.0 <= iou(U, V) <= 1.0


def test_all_correct():
    m = detection_metrics(ConfusionCounts(TP=1, FP=0, TN=1, FN=0))
    assert m == {"FPR": 0.0, "FNR": 0.0, "A": 1.0, "P": 1.0, "F1": 1.0}


def test_table_row_f1():
    assert round(f1_from(0.981, 0.040) * 100, 1) == 97.0
    assert f1_from(0.981, 0.040) == pytest.approx(0.970, abs=0.001)


def test_undefined_metrics():
    m = detection_metrics(ConfusionCounts())
    assert all(v is None for v in m.values())
    m = detection_metrics(ConfusionCounts(TN=3))
    assert m["FPR"] == 0.0 and m["FNR"] is None and m["P"] is None and m["F1"] is None
    assert fmt_metric(None) == "undefined"
    assert f1_from(0.0, 1.0) is None


@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
def test_metrics_match_definitions(tp, fp, tn, fn):
    m = detection_metrics(ConfusionCounts(tp, fp, tn, fn))
    if fp + tn:
        assert m["FPR"] == fp / (fp + tn)
    if tp + fn:
        assert m["FNR"] == fn / (tp + fn)
    if tp + fp + tn + fn:
        assert m["A"] == (tp + tn) / (tp + fp + tn + fn)
    if tp + fp:
        assert m["P"] == tp / (tp + fp)
    if tp:
        p, r = tp / (tp + fp), tp / (tp + fn)
        assert m["F1"] == pytest.approx(2 * p * r / (p + r), rel=1e-12)
        assert m["F1"] == pytest.approx(2 * tp / (2 * tp + fp + fn), rel=1e-12)


def _result(i, actual, predicted, U, V, program="p"):
    return SampleResult(f"s{i}", actual, predicted, frozenset(U), frozenset(V), program)


def test_single_exact_match():
    s = aggregate_report([_result(0, True, True, {"a.c:3"}, {"a.c:3", "a.c:3"})])
    assert s["IoU"] == 1.0 and s["mean_V"] == 1.0 and s["TP"] == 1


def test_false_positives_count_in_iou():
    s = aggregate_report([
        _result(0, True, True, {"a.c:1"}, {"a.c:1"}),
        _result(1, False, True, set(), {"a.c:2", "a.c:3"}),
        _result(2, True, False, {"a.c:4"}, set()),
    ])
    assert s["IoU"] == 0.5
    assert s["mean_V"] == 1.5
    assert (s["TP"], s["FP"], s["TN"], s["FN"]) == (1, 1, 0, 1)


@given(st.lists(st.tuples(st.booleans(), st.booleans(), LINES, LINES), max_size=25), st.randoms())
def test_aggregate_matches_loop(rows, rnd):
    results = [_result(i, a, p, U, V) for i, (a, p, U, V) in enumerate(rows)]
    s = aggregate_report(results)
    tp = sum(a and p for a, p, _, _ in rows)
    fp = sum(p and not a for a, p, _, _ in rows)
    assert (s["TP"], s["FP"]) == (tp, fp)
    det = [(U, V) for a, p, U, V in rows if p]
    if det:
        want = sum(len(U & V) / len(U | V) if U | V else 1.0 for U, V in det) / len(det)
        assert s["IoU"] == pytest.approx(want, rel=1e-12)
    else:
        assert s["IoU"] is None
    shuffled = list(results)
    rnd.shuffle(shuffled)
    s2 = aggregate_report(shuffled)
    for k in s:
        assert s2[k] == pytest.approx(s[k], rel=1e-12) if isinstance(s[k], float) else s2[k] == s[k]


def test_program_level_rollup():
    results = [
        _result(0, True, False, {"x"}, set(), "p1"),
        _result(1, False, True, set(), {"y"}, "p1"),
        _result(2, False, False, set(), set(), "p2"),
    ]
    s = aggregate_report(results, program_level=True)
    assert (s["TP"], s["FP"], s["TN"], s["FN"]) == (1, 0, 1, 0)


def test_duplicate_ids():
    r = _result(0, True, True, set(), set())
    with pytest.raises(DataError):
        aggregate_report([r, r])


def test_match_results():
    entries = [SimpleNamespace(sample_id="a", vulnerable=True, locations=["f.c:2"])]
    truth = {"a": {"label": (2,), "lines": ["f.c:2"], "program": "p"}}
    (r,) = match_results(entries, truth)
    assert r.actual and r.predicted and r.iou == 1.0
    with pytest.raises(DataError):
        match_results(entries, {})
    with pytest.raises(DataError):
        match_results(entries, {**truth, "b": {"label": (), "lines": []}})


def test_format_summary():
    results = [_result(0, True, True, {"a.c:1"}, {"a.c:1", "a.c:2"})]
    text = format_summary(aggregate_report(results), results)
    lines = text.splitlines()
    assert lines[0] == "# summary"
    assert "IoU\t0.500000" in lines
    assert lines[-1] == "s0\t1\t1\t0.500000\ta.c:1,a.c:2"


def test_counts_tally():
    rng = random.Random(3)
    for _ in range(50):
        pairs = [(rng.random() < 0.5, rng.random() < 0.5) for _ in range(rng.randint(0, 30))]
        c = ConfusionCounts()
        for a, p in pairs:
            c.add(a, p)
        assert (c.TP, c.FP, c.TN, c.FN) == tuple(pairs.count(k) for k in ((1, 1), (0, 1), (0, 0), (1, 0)))
        assert c.total == len(pairs)
