"""Greedy metric selection and calibration tests."""

import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lidarqc.analysis import (
    CalibrationReport,
    SelectionTrace,
    calibration,
    greedy_select,
    load_reliability,
    reliability_export,
    write_selection_csv,
)
from lidarqc.meta import LinearParams, cross_validate

from test_meta import make_dataset


def planted_dataset(seed=0, n=90, groups=3, extra=("noise_a", "noise_b")):
    """One informative column among pure noise; classification target."""
    rng = np.random.default_rng(seed)
    y = (np.arange(n) % 2).astype(np.float64)
    useful = y * 0.8 + 0.1 + 0.02 * rng.standard_normal(n)
    cols = [useful] + [rng.random(n) for _ in extra]
    keys = [f"g{i % groups}" for i in range(n)]
    return make_dataset(np.column_stack(cols),
                        iou_adj=np.where(y == 1.0, 0.0, 0.7),
                        groups=keys, columns=("useful",) + tuple(extra))


# ----------------------------------------------------------------- selection

def test_greedy_select_finds_planted_metric_first():
    ds = planted_dataset()
    trace = greedy_select(ds, "classify", "linear", folds=3, seed=0)
    assert trace.steps[0].metric == "useful"
    assert trace.steps[0].objective >= 0.95
    assert trace.objective_name == "acc"
    assert len(trace.steps) == len(ds.columns)
    assert sorted(trace.metrics()) == sorted(ds.columns)


def test_greedy_select_max_metrics():
    ds = planted_dataset()
    trace = greedy_select(ds, "classify", "linear", folds=3, max_metrics=2)
    assert len(trace.steps) == 2
    assert trace.metrics()[0] == "useful"


def test_greedy_select_tie_breaks_by_name():
    # two byte-identical informative columns; the lexicographically first wins
    ds = planted_dataset()
    useful = ds.matrix[:, 0]
    matrix = np.column_stack([useful, useful, ds.matrix[:, 1]])
    tied = make_dataset(matrix, iou_adj=ds.iou_adj, groups=ds.group_keys,
                        columns=("m_twin", "a_twin", "noise"))
    trace = greedy_select(tied, "classify", "linear", folds=3, max_metrics=1)
    assert trace.steps[0].metric == "a_twin"


def test_greedy_select_regression_objective():
    rng = np.random.default_rng(2)
    x = rng.random((90, 2))
    y = np.clip(0.7 * x[:, 0] + 0.15, 0.0, 1.0)
    ds = make_dataset(x, iou_adj=y, groups=[f"g{i % 3}" for i in range(90)],
                      columns=("signal", "noise"))
    trace = greedy_select(ds, "regress", "linear", folds=3, max_metrics=1)
    assert trace.objective_name == "r2"
    assert trace.steps[0].metric == "signal"


def test_greedy_select_split_matches_cross_validate():
    ds = planted_dataset()
    trace = greedy_select(ds, "classify", "linear", folds=3, max_metrics=1,
                          split="train")
    report = cross_validate(ds.select_columns([trace.steps[0].metric]),
                            "classify", "linear", folds=3)
    assert trace.steps[0].objective == report.metrics["acc"]["train"]["mean"]


def test_greedy_select_errors():
    ds = planted_dataset()
    with pytest.raises(ValueError, match="unknown split test"):
        greedy_select(ds, "classify", "linear", folds=3, split="test")
    with pytest.raises(ValueError, match="at least one metric"):
        greedy_select(ds, "classify", "linear", folds=3, max_metrics=0)


def test_write_selection_csv(tmp_path):
    ds = planted_dataset()
    trace = greedy_select(ds, "classify", "linear", folds=3, max_metrics=2)
    path = tmp_path / "selection.csv"
    write_selection_csv(path, trace)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["step", "added_metric", "acc"]
    assert [r[0] for r in rows[1:]] == ["1", "2"]
    assert rows[1][1] == "useful"
    # repr serialization round-trips the objective exactly
    assert float(rows[1][2]) == trace.steps[0].objective


# --------------------------------------------------------------- calibration

def test_calibration_single_bin_fixture():
    probs = np.full(100, 0.75)
    labels = np.array([1.0] * 55 + [0.0] * 45)
    report = calibration(probs, labels)
    assert report.total == 100
    occupied = [b for b in report.bins if b.count]
    assert len(occupied) == 1
    assert (occupied[0].lower, occupied[0].upper) == (0.7, 0.8)
    assert occupied[0].confidence == 0.75
    assert occupied[0].accuracy == 0.55
    # hand computation |0.75 - 0.55| mapped onto doubles, bit for bit
    assert report.mce == abs(0.75 - 0.55)
    assert report.ece == report.mce
    assert report.mce == pytest.approx(0.20, abs=1e-15)


def test_calibration_bin_boundaries_right_closed():
    probs = np.array([0.1, 0.3, 0.7, 0.75, 1.0, 0.0])
    report = calibration(probs, np.zeros(6), mode="raw")
    counts = [b.count for b in report.bins]
    # 0.1 and 0.0 share the first bin; each boundary value joins the bin it closes
    assert counts == [2, 0, 1, 0, 0, 0, 1, 1, 0, 1]


def test_calibration_predicted_class_mode():
    # p < 0.5 predicts the negative class with confidence 1 - p
    probs = np.array([0.4, 0.4, 0.9])
    labels = np.array([0.0, 1.0, 1.0])
    report = calibration(probs, labels)
    low = report.bins[5]   # (0.5, 0.6] holds both 0.6-confidence picks
    high = report.bins[8]  # (0.8, 0.9]
    assert (low.count, high.count) == (2, 1)
    assert low.accuracy == 0.5 and high.accuracy == 1.0


def test_calibration_raw_mode_positive_rate():
    probs = np.full(5, 0.2)
    labels = np.array([1.0, 0.0, 0.0, 0.0, 0.0])
    report = calibration(probs, labels, mode="raw")
    bin1 = report.bins[1]
    assert bin1.count == 5 and bin1.accuracy == 0.2 and bin1.confidence == pytest.approx(0.2)
    assert report.ece == pytest.approx(0.0, abs=1e-15)


def test_calibration_perfect_scores_zero_error():
    report = calibration(np.ones(10), np.ones(10))
    assert report.mce == 0.0 and report.ece == 0.0


def test_calibration_errors():
    with pytest.raises(ValueError, match="no samples"):
        calibration(np.array([]), np.array([]))
    with pytest.raises(ValueError, match="disagree"):
        calibration(np.array([0.5]), np.array([1.0, 0.0]))
    with pytest.raises(ValueError, match="outside"):
        calibration(np.array([1.5]), np.array([1.0]))
    with pytest.raises(ValueError, match="unknown calibration mode"):
        calibration(np.array([0.5]), np.array([1.0]), mode="quantile")


@settings(max_examples=150, deadline=None)
@given(
    probs=st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=1, max_size=80),
    bits=st.lists(st.integers(0, 1), min_size=80, max_size=80),
    mode=st.sampled_from(["predicted_class", "raw"]),
)
def test_ece_never_exceeds_mce(probs, bits, mode):
    p = np.array(probs)
    y = np.array(bits[: len(p)], dtype=np.float64)
    report = calibration(p, y, mode=mode)
    assert report.ece <= report.mce + 1e-12
    assert sum(b.count for b in report.bins) == len(p)


def test_reliability_export_roundtrip(tmp_path):
    probs = np.array([0.95, 0.9, 0.93, 0.05, 0.1])
    labels = np.array([1.0, 1.0, 0.0, 0.0, 0.0])
    report = calibration(probs, labels, mode="raw")
    path = tmp_path / "reliability.json"
    reliability_export(report, path)
    restored = load_reliability(path)
    assert restored == report
    # untouched bins export as explicit nulls
    assert any(b.count == 0 and b.confidence is None for b in restored.bins)
