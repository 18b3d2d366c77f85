"""Meta-model tests: boosted trees, linear baselines, ranking metrics, CV."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers_oracles import pairwise_auroc
from lidarqc.features import MetaDataset
from lidarqc.gbt import GbtParams, fit_gbt, predict_gbt
from lidarqc.meta import (
    EvalReport,
    LinearParams,
    accuracy,
    assign_folds,
    auprc,
    auroc,
    cross_validate,
    load_model,
    predict,
    predict_matrix,
    r2,
    save_model,
    train,
)


def make_dataset(matrix, iou_adj=None, groups=None, columns=None):
    matrix = np.asarray(matrix, dtype=np.float64)
    n = len(matrix)
    if columns is None:
        columns = tuple(f"m{j:02d}" for j in range(matrix.shape[1]))
    if groups is None:
        groups = ["g0"] * n
    targets = None if iou_adj is None else np.asarray(iou_adj, dtype=np.float64)
    return MetaDataset(
        columns=tuple(columns),
        matrix=matrix,
        frame_ids=np.array([f"f{i:04d}" for i in range(n)], dtype="U32"),
        group_keys=np.asarray(groups, dtype="U32"),
        seg_ids=np.arange(n, dtype=np.int32),
        class_ids=np.ones(n, dtype=np.int32),
        size_points=np.full(n, 50, dtype=np.int64),
        iou=targets,
        iou_adj=targets,
        retained_point_fraction=1.0,
    )


def separable_case(n=200, seed=3):
    # label depends on the first feature only; second is noise
    rng = np.random.default_rng(seed)
    x = rng.random((n, 2))
    y = (x[:, 0] > 0.5).astype(np.float64)
    return x, y


# ---------------------------------------------------------------- gbt engine

def test_gbt_separable_classification():
    x, y = separable_case()
    model, losses = fit_gbt(x, y, "logistic", GbtParams(rounds=40, max_depth=3))
    probs = predict_gbt(model, x)
    labels = (probs >= 0.5).astype(np.float64)
    assert np.mean(labels == y) >= 0.99
    assert losses[-1] < losses[0]


def test_gbt_loss_non_increasing():
    rng = np.random.default_rng(11)
    x = rng.random((150, 3))
    noisy = ((x[:, 0] > 0.5) ^ (rng.random(150) < 0.1)).astype(np.float64)
    for objective, y in (("logistic", noisy), ("squared_error", x[:, 0] + 0.05 * rng.standard_normal(150))):
        _, losses = fit_gbt(x, y, objective, GbtParams(rounds=25, max_depth=3))
        assert len(losses) == 26
        for a, b in zip(losses, losses[1:]):
            assert b <= a + 1e-12


def test_gbt_zero_rounds_predicts_base():
    x, y = separable_case(n=60)
    model, losses = fit_gbt(x, y, "squared_error", GbtParams(rounds=0))
    assert len(losses) == 1
    assert model.trees == []
    assert np.all(predict_gbt(model, x) == y.mean())

    model, _ = fit_gbt(x, y, "logistic", GbtParams(rounds=0))
    prior = float(np.clip(y.mean(), 1e-6, 1 - 1e-6))
    assert model.base_score == pytest.approx(np.log(prior / (1 - prior)))
    np.testing.assert_allclose(predict_gbt(model, x), prior, rtol=1e-12)


def test_gbt_input_validation():
    x = np.zeros((4, 2))
    y = np.zeros(4)
    with pytest.raises(ValueError, match="unknown objective"):
        fit_gbt(x, y, "hinge", GbtParams())
    with pytest.raises(ValueError, match="disagree"):
        fit_gbt(x, np.zeros(3), "logistic", GbtParams())
    with pytest.raises(ValueError, match="at least two rows"):
        fit_gbt(x[:1], y[:1], "logistic", GbtParams())


def test_gbt_constant_target_regression():
    x = np.random.default_rng(0).random((30, 2))
    y = np.full(30, 0.4)
    model, losses = fit_gbt(x, y, "squared_error", GbtParams(rounds=10))
    np.testing.assert_allclose(predict_gbt(model, x), 0.4, atol=1e-12)
    assert losses[0] == pytest.approx(0.0, abs=1e-15)


# ------------------------------------------------------------- meta training

def test_linear_regression_recovers_noiseless_targets():
    rng = np.random.default_rng(5)
    x = rng.random((300, 3))
    y = 0.3 * x[:, 0] + 0.2 * x[:, 1] + 0.25  # stays inside [0, 1]
    ds = make_dataset(x, iou_adj=y)
    model = train(ds, "regress", "linear")
    assert r2(predict(model, ds), y) >= 0.999


def test_linear_logistic_separable():
    x, y = separable_case(n=240, seed=9)
    ds = make_dataset(x, iou_adj=np.where(y == 1.0, 0.0, 0.8))
    model = train(ds, "classify", "linear")
    scores = predict(model, ds)
    assert accuracy(scores, ds.fp_labels()) >= 0.95


def test_gbt_meta_train_records_loss_curve():
    x, y = separable_case(n=120, seed=2)
    ds = make_dataset(x, iou_adj=np.where(y == 1.0, 0.0, 0.8))
    model = train(ds, "classify", "gbt", GbtParams(rounds=15, max_depth=3))
    assert model.train_loss is not None and len(model.train_loss) == 16
    assert model.train_loss[-1] <= model.train_loss[0]


def test_train_errors():
    x = np.random.default_rng(1).random((20, 2))
    ds = make_dataset(x, iou_adj=np.linspace(0.1, 0.9, 20))
    with pytest.raises(ValueError, match="unknown task"):
        train(ds, "rank", "gbt")
    with pytest.raises(ValueError, match="unknown kind"):
        train(ds, "classify", "forest")
    with pytest.raises(ValueError, match="at least two rows"):
        train(make_dataset(x[:1], iou_adj=[0.5]), "regress", "linear")
    with pytest.raises(ValueError, match="single class"):
        train(ds, "classify", "gbt")  # no zero iou_adj rows anywhere
    with pytest.raises(ValueError, match="has no targets"):
        train(make_dataset(x), "regress", "linear")


def test_predict_aligns_columns_by_name():
    rng = np.random.default_rng(4)
    x = rng.random((80, 3))
    y = 0.5 * x[:, 2] + 0.25
    ds = make_dataset(x, iou_adj=y, columns=("a", "b", "c"))
    model = train(ds.select_columns(("c", "a")), "regress", "linear")

    scores = predict(model, ds)  # dataset carries extra column b, different order
    direct = predict_matrix(model, x[:, [2, 0]])
    np.testing.assert_array_equal(scores, direct)

    with pytest.raises(ValueError, match="unknown metric columns"):
        predict(model, ds.select_columns(("a", "b")))
    with pytest.raises(ValueError, match="does not match the model schema"):
        predict_matrix(model, x)


def test_regression_scores_are_clipped():
    x = np.linspace(0.0, 1.0, 40)[:, None]
    ds = make_dataset(x, iou_adj=np.linspace(0.0, 1.0, 40))
    model = train(ds, "regress", "linear")
    wild = predict_matrix(model, np.array([[-30.0], [30.0]]))
    assert wild[0] == 0.0 and wild[1] == 1.0


# ------------------------------------------------------------------- metrics

def test_accuracy_threshold_is_inclusive():
    assert accuracy(np.array([0.5, 0.49]), np.array([1.0, 0.0])) == 1.0
    assert accuracy(np.array([0.5]), np.array([0.0])) == 0.0
    with pytest.raises(ValueError, match="no samples"):
        accuracy(np.array([]), np.array([]))
    with pytest.raises(ValueError, match="disagree"):
        accuracy(np.array([0.5]), np.array([1.0, 0.0]))


def test_auroc_fixture():
    value = auroc(np.array([0.1, 0.4, 0.35, 0.8]), np.array([0, 0, 1, 1]))
    assert value == 0.75


def test_auroc_errors():
    with pytest.raises(ValueError, match="no samples"):
        auroc(np.array([]), np.array([]))
    with pytest.raises(ValueError, match="both classes"):
        auroc(np.array([0.2, 0.3]), np.array([1, 1]))


@st.composite
def ranking_case(draw):
    n = draw(st.integers(min_value=2, max_value=60))
    grid = [0.0, 0.25, 0.5, 0.75, 1.0]  # coarse grid forces plenty of ties
    scores = draw(st.lists(st.sampled_from(grid), min_size=n, max_size=n))
    labels = draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    if len(set(labels)) < 2:
        labels[0] = 1 - labels[0]
    return np.array(scores), np.array(labels, dtype=np.float64)


@settings(max_examples=200, deadline=None)
@given(case=ranking_case())
def test_auroc_equals_pairwise_oracle(case):
    scores, labels = case
    assert auroc(scores, labels) == pairwise_auroc(scores, labels)


def test_auprc_fixtures():
    # alternating hits: 1*0.5 + (2/3)*0.5
    value = auprc(np.array([0.9, 0.8, 0.7, 0.6]), np.array([1, 0, 1, 0]))
    assert value == pytest.approx(5.0 / 6.0, abs=1e-12)
    # reversed ranking: the single positive arrives last at precision 1/2
    assert auprc(np.array([0.1, 0.9]), np.array([1, 0])) == 0.5
    # tie group is a single sweep step at precision 1/2
    assert auprc(np.array([0.5, 0.5]), np.array([1, 0])) == 0.5
    assert auprc(np.array([0.4, 0.9]), np.array([0, 1])) == 1.0


def test_auprc_errors():
    with pytest.raises(ValueError, match="no samples"):
        auprc(np.array([]), np.array([]))
    with pytest.raises(ValueError, match="needs positive samples"):
        auprc(np.array([0.2, 0.3]), np.array([0, 0]))


def test_r2_fixture():
    value = r2(np.array([0.25, 0.75]), np.array([0.0, 1.0]))
    assert value == pytest.approx(0.75, abs=1e-12)
    # constant targets leave nothing to explain
    assert r2(np.array([0.3, 0.4]), np.array([0.5, 0.5])) == 0.0
    with pytest.raises(ValueError, match="disagree"):
        r2(np.array([0.1]), np.array([0.1, 0.2]))


# ------------------------------------------------------------ fold machinery

def test_assign_folds_keeps_groups_whole():
    keys = np.repeat([f"g{i}" for i in range(12)], 3)
    folds = assign_folds(keys, folds=4, seed=7)
    assert folds.shape == keys.shape
    for g in np.unique(keys):
        assert len(np.unique(folds[keys == g])) == 1
    # 12 groups dealt round-robin over 4 folds: 3 groups each
    counts = np.bincount(folds, minlength=4)
    assert np.all(counts == 9)


def test_assign_folds_one_group_per_fold():
    keys = np.array(["a", "b", "c", "a", "b", "c"])
    folds = assign_folds(keys, folds=3, seed=0)
    assert sorted(np.bincount(folds, minlength=3)) == [2, 2, 2]


def test_assign_folds_determinism_and_errors():
    keys = np.repeat([f"g{i}" for i in range(6)], 2)
    np.testing.assert_array_equal(assign_folds(keys, 3, seed=5),
                                  assign_folds(keys, 3, seed=5))
    with pytest.raises(ValueError, match="3 groups cannot fill 4 folds"):
        assign_folds(np.array(["a", "b", "c"]), folds=4)


def cv_dataset(seed=0, n=180, groups=6):
    rng = np.random.default_rng(seed)
    x = rng.random((n, 2))
    y = (x[:, 0] > 0.5).astype(np.float64)
    keys = [f"g{i % groups}" for i in range(n)]
    return make_dataset(x, iou_adj=np.where(y == 1.0, 0.0, 0.8), groups=keys)


def test_cross_validate_classify():
    ds = cv_dataset()
    report = cross_validate(ds, "classify", "linear", folds=3, seed=1)
    assert set(report.metrics) == {"acc", "auroc", "auprc"}
    for split in ("train", "validation"):
        stats = report.metrics["acc"][split]
        assert len(stats["per_fold"]) == 3
        assert stats["mean"] >= 0.9
    again = cross_validate(ds, "classify", "linear", folds=3, seed=1)
    assert report.metrics == again.metrics


def test_cross_validate_regress_and_report_roundtrip():
    rng = np.random.default_rng(8)
    x = rng.random((120, 2))
    y = np.clip(0.6 * x[:, 0] + 0.2, 0.0, 1.0)
    keys = [f"g{i % 4}" for i in range(120)]
    ds = make_dataset(x, iou_adj=y, groups=keys)
    report = cross_validate(ds, "regress", "linear", folds=4, seed=0)
    assert set(report.metrics) == {"r2"}
    assert report.metrics["r2"]["validation"]["mean"] > 0.9

    restored = EvalReport.from_json(report.to_json())
    assert restored == report


# ------------------------------------------------------------- serialization

@pytest.mark.parametrize("task,kind", [("classify", "gbt"), ("regress", "gbt"),
                                       ("classify", "linear"), ("regress", "linear")])
def test_model_roundtrip_is_bit_exact(tmp_path, task, kind):
    rng = np.random.default_rng(13)
    x = rng.random((90, 4))
    y = np.clip(0.7 * x[:, 1] + 0.1 * rng.random(90), 0.0, 1.0)
    if task == "classify":
        y = np.where(x[:, 1] > 0.5, 0.0, 0.8)
    params = GbtParams(rounds=12, max_depth=3) if kind == "gbt" else LinearParams()
    ds = make_dataset(x, iou_adj=y)
    model = train(ds, task, kind, params)

    path = tmp_path / "model.lqmm"
    save_model(path, model)
    loaded = load_model(path)

    assert (loaded.task, loaded.kind, loaded.columns) == (task, kind, model.columns)
    assert loaded.train_loss is None
    np.testing.assert_array_equal(predict(model, ds), predict(loaded, ds))


def test_model_file_corruption_errors(tmp_path):
    x, y = separable_case(n=40)
    ds = make_dataset(x, iou_adj=np.where(y == 1.0, 0.0, 0.8))
    path = tmp_path / "model.lqmm"
    save_model(path, train(ds, "classify", "linear"))
    good = bytearray(path.read_bytes())

    bad = tmp_path / "bad.lqmm"

    bad.write_bytes(b"XXXX" + bytes(good[4:]))
    with pytest.raises(ValueError, match="not a model file"):
        load_model(bad)

    tampered = bytearray(good)
    tampered[4:6] = (99).to_bytes(2, "little")
    bad.write_bytes(bytes(tampered))
    with pytest.raises(ValueError, match="unsupported model version 99"):
        load_model(bad)

    tampered = bytearray(good)
    tampered[8:12] = (77).to_bytes(4, "little")  # bogus column count
    bad.write_bytes(bytes(tampered))
    with pytest.raises(ValueError, match="column table is corrupt"):
        load_model(bad)

    tampered = bytearray(good)
    tampered[16] ^= 0x01  # flip a character inside the first column name
    bad.write_bytes(bytes(tampered))
    with pytest.raises(ValueError, match="schema hash mismatch"):
        load_model(bad)
