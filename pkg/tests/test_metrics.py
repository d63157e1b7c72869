import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from camlink.metrics import (
    REPORT_FIELDS,
    MetricsReport,
    accuracy,
    cc_excluding_isolated,
    evaluate,
    isolated_pct,
    link_count_ratio,
    link_validity,
    prediction_variance,
    saturated_pct,
    tune_threshold,
    write_report,
)
from camlink.solver import connected_components


def graph(n, edges):
    a = np.zeros((n, n), dtype=np.int8)
    for i, j in edges:
        a[i, j] = a[j, i] = 1
    return a


def test_accuracy_examples():
    lab = graph(5, [(0, 1), (2, 3), (3, 4)])
    assert accuracy(lab, lab) == 1.0
    assert accuracy(np.zeros((5, 5)), lab) == pytest.approx(1 - 3 / 10)


def test_variance_examples():
    assert prediction_variance(np.full((4, 4), 0.3)) == 0.0
    p = np.zeros((1, 4, 4))
    p[0][np.triu_indices(4, 1)] = [0, 1, 0, 1, 0, 1]
    assert prediction_variance(p) == pytest.approx(0.25)


def test_component_metrics():
    assert cc_excluding_isolated(graph(4, [(0, 1), (2, 3)])) == 2
    assert cc_excluding_isolated(np.zeros((4, 4))) == 0
    assert isolated_pct(np.zeros((4, 4))) == 1.0
    assert isolated_pct(1 - np.eye(4)) == 0.0
    star = graph(5, [(0, 1), (0, 2), (0, 3), (0, 4)])
    assert saturated_pct(star, 3) == pytest.approx(1 / 5)
    assert saturated_pct(graph(5, [(0, 1), (1, 2)]), 3) == 0.0


def test_link_validity_and_count():
    coords = np.array([[0.0, 0.0], [0.1, 0.0], [0.9, 0.0]])
    assert link_validity(graph(3, [(0, 1)]), coords, 0.2) == 1.0
    assert link_validity(graph(3, [(0, 1), (1, 2)]), coords, 0.2) == 0.5
    assert link_validity(np.zeros((3, 3)), coords, 0.2) == 1.0
    lab = graph(4, [(0, 1), (2, 3)])
    assert link_count_ratio(lab, lab) == 1.0
    assert link_count_ratio(graph(4, [(0, 1), (2, 3), (0, 2), (1, 3)]), lab) == 2.0
    assert link_count_ratio(np.zeros((4, 4)), np.zeros((4, 4))) == 1.0
    with pytest.raises(ValueError):
        link_count_ratio(lab, np.zeros((4, 4)))


def test_evaluate_oracle_and_empty(rng, tmp_path):
    coords = rng.random((3, 5, 2))
    labels = np.stack([graph(5, [(0, 1), (1, 2)]), graph(5, [(3, 4)]), graph(5, [(0, 4), (1, 3)])])
    report, breakdown = evaluate(labels, labels, coords, 2.0, 3)
    assert report.accuracy == 1.0 and report.saturated_pct == 0.0
    assert report.link_validity_pct == 1.0 and report.link_count_ratio == 1.0
    assert len(breakdown) == 3
    empty, _ = evaluate(np.zeros_like(labels), labels, coords, 2.0, 3)
    assert empty.isolated_pct == 1.0
    write_report(report, breakdown, tmp_path / "r.txt", tmp_path / "b.jsonl")
    text = (tmp_path / "r.txt").read_text()
    assert MetricsReport.from_text(text) == report
    keys = [line.split("=")[0] for line in text.splitlines()]
    assert keys[:len(REPORT_FIELDS)] == list(REPORT_FIELDS)
    assert "link_count_deviation=+0.0%" in text


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 10), st.integers(0, 2**31 - 1))
def test_metrics_permutation_invariant(n, seed):
    r = np.random.default_rng(seed)
    coords = r.random((1, n, 2))
    lab = np.triu((r.random((n, n)) < 0.4).astype(np.int8), 1)
    lab = (lab | lab.T)[None]
    lab[0, 0, 1] = lab[0, 1, 0] = 1
    prob = r.random((1, n, n))
    prob = (prob + prob.transpose(0, 2, 1)) / 2
    perm = r.permutation(n)
    a, _ = evaluate(prob, lab, coords, 0.5, 2)
    b, _ = evaluate(prob[:, perm][:, :, perm], lab[:, perm][:, :, perm], coords[:, perm], 0.5, 2)
    assert a == b


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 10), st.integers(0, 2**31 - 1))
def test_cc_excluding_isolated_bounded(n, seed):
    r = np.random.default_rng(seed)
    adj = np.triu((r.random((n, n)) < 0.3).astype(np.int8), 1)
    adj = adj | adj.T
    assert cc_excluding_isolated(adj) <= connected_components(adj)[0]


def test_tune_threshold_prefers_default_on_ties():
    lab = graph(4, [(0, 1)])[None]
    assert tune_threshold(lab.astype(float), lab) == 0.5
    prob = np.full((1, 4, 4), 0.2)
    prob[0, 0, 1] = prob[0, 1, 0] = 0.3
    assert tune_threshold(prob, lab) == pytest.approx(0.21)
