import csv

import numpy as np
import pytest

from invkern import cli, suites
from invkern.group_algebra import load_orthogonal_set, make_exact_group
from invkern.harness import load_csv, synthetic_dataset, write_csv

SUBCOMMANDS = ["gen-group", "gen-templates", "features", "train", "predict", "bench-features", "bench-kernel", "verify"]


def _run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def _read_predictions(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([float(r["decision"]) for r in rows]), np.array([int(r["prediction"]) for r in rows])


@pytest.fixture
def data_csv(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.standard_normal((30, 3))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    y = np.where(X[:, 0] + X[:, 1] + X[:, 2] >= 0, 1, -1)
    path = tmp_path / "train.csv"
    with open(path, "w") as fh:
        fh.write("a,b,c,label\n")
        for x, label in zip(X, y):
            fh.write(",".join(repr(float(v)) for v in x) + f",{int(label > 0)}\n")
    return path


# ---------------------------------------------------------------------------
# usage


@pytest.mark.parametrize("name", SUBCOMMANDS)
def test_help_exits_zero(name, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main([name, "--help"])
    assert exc.value.code == 0
    assert "usage" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [["verify", "--group", "reflection", "--bogus"], ["no-such-command"], ["train"]])
def test_usage_errors_exit_one(argv):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    assert exc.value.code == cli.EXIT_USAGE


def test_missing_bank_is_usage_error(tmp_path, data_csv, capsys):
    code, _, err = _run(["train", "--data", data_csv, "--invariant", "template", "-o", tmp_path / "m.txt"], capsys)
    assert code == cli.EXIT_USAGE and "--bank" in err


# ---------------------------------------------------------------------------
# verify


def test_verify_passes_on_small_group(capsys):
    code, out, _ = _run(["verify", "--group", "cyclic:order=4", "--dim", "2", "--trials", "200"], capsys)
    assert code == cli.EXIT_OK
    assert "FAIL" not in out and "checks passed" in out


def test_verify_bad_group_exits_two(capsys):
    code, _, err = _run(["verify", "--group", "cyclic:order=4,plane=0-5", "--dim", "3"], capsys)
    assert code == cli.EXIT_FAILURE and err


def test_verify_reports_failed_check(monkeypatch, capsys):
    monkeypatch.setattr(suites, "run_all", lambda group, trials, seed: [suites.Check("forced", 1.0, 0.0, False)])
    code, out, _ = _run(["verify", "--group", "reflection"], capsys)
    assert code == cli.EXIT_FAILURE and "FAIL" in out


# ---------------------------------------------------------------------------
# file workflow


def test_gen_group_roundtrip(tmp_path, capsys):
    path = tmp_path / "g.txt"
    code, _, _ = _run(["gen-group", "--group", "perm:n=3", "-o", path], capsys)
    assert code == 0
    g = load_orthogonal_set(path)
    assert g.is_exact_group and len(g) == 6
    np.testing.assert_array_equal(g.elements, make_exact_group("perm:n=3").elements)


def test_gen_group_stdout(capsys):
    code, out, _ = _run(["gen-group", "--group", "random:m=2,seed=1", "--dim", "3"], capsys)
    assert code == 0 and out.splitlines()[0].split() == ["3", "2", "0"]


def test_features_both_kinds(tmp_path, data_csv, capsys):
    bank = tmp_path / "bank.txt"
    assert _run(["gen-templates", "--group", "perm:n=3", "--count", "4", "-o", bank], capsys)[0] == 0
    for kind, pooling in (("kernel", "cdf:bins=5"), ("linear", "moment:n=2")):
        out = tmp_path / f"{kind}.csv"
        code, _, _ = _run(["features", "--data", data_csv, "--bank", bank, "--kind", kind, "--pooling", pooling,
                           "-o", out], capsys)
        assert code == 0
        rows = np.loadtxt(out, delimiter=",", ndmin=2, skiprows=1)
        assert rows.shape[0] == 30


def test_features_require_stable_refuses_max(tmp_path, data_csv, capsys):
    bank = tmp_path / "bank.txt"
    _run(["gen-templates", "--group", "perm:n=3", "--count", "3", "-o", bank], capsys)
    code, _, err = _run(["features", "--data", data_csv, "--bank", bank, "--pooling", "max", "--require-stable",
                         "-o", tmp_path / "f.csv"], capsys)
    assert code == cli.EXIT_FAILURE and err


@pytest.mark.parametrize("mode", ["none", "direct", "one_sided"])
def test_train_predict_roundtrip(tmp_path, data_csv, capsys, mode):
    model = tmp_path / "m.txt"
    argv = ["train", "--data", data_csv, "--kernel", "rbf:σ=1", "--C", "10", "--invariant", mode, "-o", model]
    if mode != "none":
        argv += ["--group", "perm:n=3"]
    code, out, _ = _run(argv, capsys)
    assert code == 0 and "support vectors" in out
    pred = tmp_path / "p.csv"
    code, _, err = _run(["predict", "--model", model, "--data", data_csv, "-o", pred], capsys)
    assert code == 0 and "accuracy" in err
    f, labels = _read_predictions(pred)
    assert len(f) == 30 and np.array_equal(labels, np.where(f >= 0, 1, -1))


def test_train_reports_non_convergence(tmp_path, data_csv, capsys):
    code, _, err = _run(["train", "--data", data_csv, "--C", "100", "--max-iter", "1", "-o", tmp_path / "m.txt"], capsys)
    assert code == cli.EXIT_FAILURE and "max_iter" in err


def test_template_model_is_invariant(tmp_path, data_csv, capsys):
    bank, model = tmp_path / "bank.txt", tmp_path / "m.txt"
    assert _run(["gen-templates", "--group", "perm:n=3", "--count", "5", "--orbit", "-o", bank], capsys)[0] == 0
    code, _, _ = _run(["train", "--data", data_csv, "--invariant", "template", "--bank", bank, "--C", "50",
                       "-o", model], capsys)
    assert code == 0
    data = load_csv(data_csv)
    g = make_exact_group("perm:n=3")
    ref_path = tmp_path / "orig.txt"
    np.savetxt(ref_path, data.X, delimiter=",")
    _run(["predict", "--model", model, "--data", ref_path, "--unlabelled", "-o", tmp_path / "p0.csv"], capsys)
    f0, p0 = _read_predictions(tmp_path / "p0.csv")
    for k, h in enumerate(g):
        moved = tmp_path / f"moved{k}.txt"
        np.savetxt(moved, data.X @ h.T, delimiter=",")
        _run(["predict", "--model", model, "--data", moved, "--unlabelled", "-o", tmp_path / "pk.csv"], capsys)
        fk, pk = _read_predictions(tmp_path / "pk.csv")
        assert np.abs(fk - f0).max() <= 1e-6
        assert np.array_equal(pk, p0)


# ---------------------------------------------------------------------------
# benchmarks


def test_bench_kernel_synthetic(tmp_path, capsys):
    out_csv = tmp_path / "t.csv"
    code, out, _ = _run(["bench-kernel", "--dataset", "synthetic", "--seed", "1", "--folds", "3",
                         "--template-count", "20", "--csv", out_csv], capsys)
    assert code == 0
    for col in ("X_Te", "S.K X_G0Te", "I.K X_G0Te"):
        assert col in out
    assert out_csv.read_text().splitlines()[0] == "Dataset,X_Te,S.K X_G0Te,I.K X_G0Te"


def test_bench_features_csv_with_config(tmp_path, capsys):
    d = synthetic_dataset(n=40, dim=5, seed=2)
    path = tmp_path / "d.csv"
    write_csv(d, path)
    cfg = tmp_path / "c.cfg"
    cfg.write_text("folds=2\ngroup_size=2\ntemplate_count=4  # small\n")
    code, out, _ = _run(["bench-features", "--dataset", path, "--config", cfg, "--pooling", "mean"], capsys)
    assert code == 0
    for col in ("Raw X_Te", "Raw X_G0Te", "mu(X_G0Te)", "Upsilon(X_G0Te)_RBF", "Upsilon(X_G0Te)_poly"):
        assert col in out


def test_bench_missing_dataset_exits_two(tmp_path, capsys):
    code, _, err = _run(["bench-kernel", "--dataset", tmp_path / "missing.csv"], capsys)
    assert code == cli.EXIT_FAILURE and err
