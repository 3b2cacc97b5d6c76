import numpy as np
import pytest

from invkern import harness
from invkern.group_algebra import record_group_actions, sample_orthogonal_set
from invkern.harness import (
    Dataset,
    ExperimentConfig,
    FoldPlan,
    ReportTable,
    augment_test_fold,
    load_csv,
    make_folds,
    normalize_rows,
    run_feature_experiment,
    run_kernel_experiment,
    synthetic_dataset,
    write_csv,
)
from invkern.invariant_features import PoolingSpec
from invkern.kernels import polynomial, rbf

SMALL = dict(folds=3, group_size=3, template_count=8)


def _write(tmp_path, text, name="d.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


# ---------------------------------------------------------------------------
# datasets


def test_load_csv_remaps_zero_one(tmp_path):
    path = _write(tmp_path, "3,4,0\n1,0,1\n0,2,1\n0,-5,0\n")
    d = load_csv(path)
    assert d.y.tolist() == [-1, 1, 1, -1]
    np.testing.assert_allclose(d.X[0], [0.6, 0.8])
    np.testing.assert_allclose(np.linalg.norm(d.X, axis=1), 1.0)
    assert d.normalized


def test_load_csv_header_and_first_column(tmp_path):
    path = _write(tmp_path, "label;a;b\nyes;1;0\nno;0;1\n")
    d = load_csv(path, label_column="first", delimiter=";")
    assert d.y.tolist() == [1, -1]
    np.testing.assert_allclose(d.X, np.eye(2))


def test_load_csv_numeric_label_order(tmp_path):
    # numeric sort, not string sort: 10 > 9
    d = load_csv(_write(tmp_path, "1,0,10\n0,1,9\n"))
    assert d.y.tolist() == [1, -1]


@pytest.mark.parametrize(
    "text,match",
    [
        ("1,0,0\n0,1,1\n1,1,2\n", "2 label values"),
        ("1,0,0\n0,0,1\n", "row 1"),
        ("1,0,0\n0,1\n", "ragged"),
        ("1,0,0\n0,1,1\n1,x,0\n", "non-numeric"),
        ("", "no data"),
    ],
)
def test_load_csv_errors(tmp_path, text, match):
    with pytest.raises(ValueError, match=match):
        load_csv(_write(tmp_path, text))


def test_write_csv_roundtrip(tmp_path):
    d = synthetic_dataset(n=20, dim=4, seed=1)
    write_csv(d, tmp_path / "s.csv")
    back = load_csv(tmp_path / "s.csv")
    assert np.array_equal(back.X, d.X) or np.abs(back.X - d.X).max() <= 1e-15
    assert np.array_equal(back.y, d.y)


def test_normalize_rows_zero():
    with pytest.raises(ValueError, match="row 2"):
        normalize_rows(np.array([[1.0, 0.0], [0.0, 2.0], [0.0, 0.0]]))


@pytest.mark.parametrize(
    "X,y,kw",
    [
        (np.ones((2, 2)), [1], {}),
        (np.array([[np.nan, 1.0]]), [1], {}),
        (np.ones((2, 2)), [1, 0], {}),
        (np.ones((2, 2)), [1, -1], dict(normalized=True)),
    ],
)
def test_dataset_validation(X, y, kw):
    with pytest.raises(ValueError):
        Dataset(X, y, **kw)


def test_synthetic_dataset_shape():
    d = synthetic_dataset(n=40, dim=6, seed=2)
    assert d.X.shape == (40, 6) and d.normalized
    assert set(d.y.tolist()) == {-1, 1}
    assert synthetic_dataset(n=40, dim=6, seed=2).X.tobytes() == d.X.tobytes()


# ---------------------------------------------------------------------------
# folds and augmentation


@pytest.mark.parametrize("n,k", [(10, 10), (23, 5), (400, 10), (5, 1)])
def test_folds_partition(n, k):
    plan = make_folds(n, k, seed=0)
    assert len(plan) == k
    allidx = np.concatenate(plan.test_folds)
    assert sorted(allidx.tolist()) == list(range(n))
    sizes = [len(f) for f in plan.test_folds]
    assert max(sizes) - min(sizes) <= 1
    tr, te = plan.split(0)
    assert not set(tr.tolist()) & set(te.tolist())
    assert len(tr) + len(te) == n


def test_folds_deterministic():
    a, b = make_folds(50, 7, seed=3), make_folds(50, 7, seed=3)
    assert all(np.array_equal(x, y) for x, y in zip(a.test_folds, b.test_folds))
    c = make_folds(50, 7, seed=4)
    assert not all(np.array_equal(x, y) for x, y in zip(a.test_folds, c.test_folds))


@pytest.mark.parametrize("n,k", [(3, 4), (5, 0)])
def test_folds_errors(n, k):
    with pytest.raises(ValueError):
        make_folds(n, k, seed=0)


def test_augment_identity_only():
    d = synthetic_dataset(n=10, dim=4, seed=0)
    aug = augment_test_fold(d, sample_orthogonal_set(4, 1, seed=0, include_identity=True))
    assert np.array_equal(aug.X, d.X) and np.array_equal(aug.y, d.y)


def test_augment_layout():
    d = synthetic_dataset(n=10, dim=5, seed=0)
    g = sample_orthogonal_set(5, 20, seed=1)
    aug = augment_test_fold(d, g)
    assert aug.X.shape == (200, 5)
    assert np.array_equal(aug.y, np.tile(d.y, 20))
    np.testing.assert_allclose(np.linalg.norm(aug.X, axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(aug.X[3 * 10 + 4], g[3] @ d.X[4], atol=1e-15)


def test_augment_dimension_mismatch():
    with pytest.raises(ValueError):
        augment_test_fold(synthetic_dataset(n=4, dim=3), sample_orthogonal_set(2, 2, seed=0))


# ---------------------------------------------------------------------------
# configuration and reports


def test_config_defaults():
    c = ExperimentConfig()
    assert c.folds == 10 and c.group_size == 10 and c.template_count == 100
    assert c.kernels == (rbf(1.0), polynomial(2, 1.0))
    assert c.pooling == PoolingSpec("max")
    assert c.kernel_of("poly") == polynomial(2, 1.0)
    with pytest.raises(ValueError):
        ExperimentConfig(kernels=(rbf(1.0),)).kernel_of("poly")


def test_config_text_roundtrip(tmp_path):
    c = ExperimentConfig(folds=4, pooling=PoolingSpec("moment", order=3), C=2.5, include_identity=True,
                         kernels=(rbf(0.5), polynomial(3, 0.25)), group_kind="set")
    path = _write(tmp_path, "# saved\n" + c.to_text(), "c.cfg")
    assert ExperimentConfig.from_file(path) == c


def test_config_override():
    c = ExperimentConfig().override({"folds": "3", "pooling": "mean", "group-seed": 9, "C": None})
    assert c.folds == 3 and c.pooling == PoolingSpec("mean") and c.group_seed == 9 and c.C == 1e4


@pytest.mark.parametrize(
    "values",
    [{"nope": "1"}, {"folds": "0"}, {"C": "-1"}, {"group_kind": "lattice"}, {"template_span": "x"}, {"folds": "two"}],
)
def test_config_errors(values):
    with pytest.raises(ValueError):
        ExperimentConfig.from_mapping(values)


def test_read_config_errors(tmp_path):
    with pytest.raises(ValueError, match=":2:"):
        harness.read_config(_write(tmp_path, "folds=3\nbroken\n", "c.cfg"))


def test_report_table_formats():
    t = ReportTable("T", ("a", "b"))
    t.add("ds", np.array([[1.0, 0.5], [0.0, 0.5]]))
    assert t.value("ds", "a") == 50.0
    assert t.to_csv() == "Dataset,a,b\nds,50.00,50.00\n"
    text = t.to_text().splitlines()
    assert text[0] == "T" and "a" in text[1] and text[-1].startswith("ds")
    with pytest.raises(KeyError):
        t.value("other", "a")


# ---------------------------------------------------------------------------
# experiments


@pytest.fixture(scope="module")
def small_data():
    return synthetic_dataset(n=60, dim=6, seed=5)


def test_feature_experiment_deterministic(small_data):
    cfg = ExperimentConfig(**SMALL)
    a = run_feature_experiment(cfg, small_data)
    b = run_feature_experiment(cfg, small_data)
    assert a.to_csv() == b.to_csv()
    assert a.columns == harness.FEATURE_COLUMNS
    assert a.fold_scores["synthetic"].shape == (3, 5)


def test_kernel_experiment_deterministic(small_data):
    cfg = ExperimentConfig(**SMALL)
    a = run_kernel_experiment(cfg, small_data)
    assert a.to_csv() == run_kernel_experiment(cfg, small_data).to_csv()
    assert a.columns == harness.KERNEL_COLUMNS


def test_identity_observed_set_changes_nothing(small_data):
    cfg = ExperimentConfig(group_kind="set", group_size=1, include_identity=True, folds=3, template_count=8)
    feats = run_feature_experiment(cfg, small_data)
    assert feats.value("synthetic", "Raw X_Te") == feats.value("synthetic", "Raw X_G0Te")
    kern = run_kernel_experiment(cfg, small_data)
    assert kern.value("synthetic", "X_Te") == kern.value("synthetic", "S.K X_G0Te")


def test_unnormalized_dataset_refused():
    d = Dataset(np.array([[2.0, 0.0], [0.0, 3.0]]), [1, -1])
    with pytest.raises(ValueError):
        run_feature_experiment(ExperimentConfig(folds=2), d)
    with pytest.raises(ValueError):
        run_kernel_experiment(ExperimentConfig(folds=2), d)


@pytest.mark.parametrize("runner", [run_feature_experiment, run_kernel_experiment])
def test_training_rows_never_transformed(monkeypatch, small_data, runner):
    # a single fold: the first 15 rows are test, the rest are only ever training
    plan = FoldPlan(len(small_data), (np.arange(15),))
    monkeypatch.setattr(harness, "make_folds", lambda n, k, seed: plan)
    train_rows = small_data.X[15:]
    with record_group_actions() as log:
        runner(ExperimentConfig(**SMALL), small_data)
    assert log
    for moved in log:
        moved = np.atleast_2d(moved)
        dist = np.abs(moved[:, None, :] - train_rows[None, :, :]).max(axis=2)
        assert dist.min() > 1e-12
