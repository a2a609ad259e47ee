import csv
import json
import warnings

import numpy as np
import pytest

from rdlda import harness
from rdlda.cli import main
from rdlda.errors import ConfigError
from rdlda.harness import (ExperimentConfig, build_config, confusion_matrix, dimension_distributions,
                           load_config_file, run_experiment, sweep_alpha)

SMALL = "gaussians:c=3,n=60,d=6,sep=5,seed=0"
METRIC_KEYS = ("epoch_loss", "eigenvalue_trace", "val_accuracy", "best_epoch", "accuracy", "confusion",
               "fisher_ratio", "mean_fisher_ratio", "steps", "batch_digest", "degenerate_steps")


def small_cfg(**kw):
    base = dict(synthetic=SMALL, epochs=4, hidden=(16, 16), batch_size=60)
    base.update(kw)
    return ExperimentConfig(**base)


def strip_timing(text):
    report = json.loads(text)
    report.pop("timing")
    return report


# --- confusion matrix ------------------------------------------------------------

def test_confusion_perfect():
    out = confusion_matrix([0, 1, 2, 2], [0, 1, 2, 2], 3)
    assert out["matrix"] == [[1, 0, 0], [0, 1, 0], [0, 0, 2]]
    assert out["accuracy"] == 1.0
    assert "sensitivity" not in out


def test_confusion_all_positive():
    out = confusion_matrix([1, 1, 1, 1], [1, 0, 1, 0], 2)
    assert out["sensitivity"] == 1.0 and out["specificity"] == 0.0


def test_confusion_hand_count():
    out = confusion_matrix([1, 1, 0, 0], [1, 0, 0, 1], 2, positive=1)
    assert out["matrix"] == [[1, 1], [1, 1]]
    assert out["accuracy"] == 0.5 and out["sensitivity"] == 0.5 and out["specificity"] == 0.5


def test_confusion_length_mismatch():
    with pytest.raises(ValueError, match="length"):
        confusion_matrix([0, 1], [0], 2)


# --- dimension distributions -----------------------------------------------------------

def test_dims_single_class():
    dist = dimension_distributions(np.random.default_rng(0).normal(size=(20, 3)), np.zeros(20, int), 1, bins=5)
    assert dist["fisher_reason"] and all(d["fisher_ratio"] is None for d in dist["dimensions"])
    assert dist["mean_fisher_ratio"] is None


def test_dims_separated_in_first_dimension(rng):
    y = np.repeat([0, 1], 100)
    H = rng.normal(size=(200, 2))
    H[:, 0] += 8.0 * y
    dist = dimension_distributions(H, y, 2, bins=10)
    r0, r1 = (d["fisher_ratio"] for d in dist["dimensions"])
    # oracle: per-dimension between/within sums computed directly
    for m, r in ((0, r0), (1, r1)):
        mu = H[:, m].mean()
        sb = sum(100 * (H[y == j, m].mean() - mu) ** 2 for j in (0, 1))
        sw = sum(((H[y == j, m] - H[y == j, m].mean()) ** 2).sum() for j in (0, 1))
        assert r == pytest.approx(sb / sw, rel=1e-10)
    assert r0 > 100 * r1


def test_dims_histograms_partition_samples(rng):
    y = rng.integers(0, 3, size=77)
    H = rng.normal(size=(77, 4))
    dist = dimension_distributions(H, y, 3, bins=7)
    for d in dist["dimensions"]:
        assert len(d["edges"]) == 8
        assert sum(sum(c["counts"]) for c in d["classes"]) == 77
        for c in d["classes"]:
            vals = H[y == c["class"], d["dimension"]]
            assert c["mean"] == pytest.approx(vals.mean()) and c["variance"] == pytest.approx(vals.var())


def test_dims_bins_validated(rng):
    with pytest.raises(ValueError):
        dimension_distributions(rng.normal(size=(4, 2)), [0, 1, 0, 1], 2, bins=1)


# --- config ---------------------------------------------------------------------------

def test_config_defaults_and_alpha_resolution():
    assert small_cfg().resolved_alpha() == harness.DEFAULT_ALPHA
    assert small_cfg(objective="dlda").resolved_alpha() == 1.0
    with pytest.warns(UserWarning, match="dlda fixes alpha"):
        assert small_cfg(objective="dlda", alpha=0.2).loss_config().alpha == 1.0
    assert small_cfg(alpha=0.3).loss_config().alpha == 0.3


def test_cce_warns_about_ignored_settings():
    with pytest.warns(UserWarning, match="ignored by the cce objective"):
        small_cfg(objective="cce", alpha=0.4)


@pytest.mark.parametrize("kwargs", [
    dict(objective="svm"), dict(net="vgg"), dict(predictor="knn"), dict(synthetic=None),
    dict(data="x.csv"), dict(alpha=1.5), dict(bins=1), dict(val_fraction=1.0),
    dict(subclass=True, objective="cce"), dict(synthetic="blobs:c=2"), dict(epochs=-1),
])
def test_config_errors(kwargs):
    with pytest.raises(ConfigError):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            small_cfg(**kwargs)


def test_config_file_with_overrides(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text(f"[data]\nsynthetic = {SMALL}\n[model]\nobjective = rdlda\nalpha = 0.2\nlambda = 0.01\n"
                    "hidden = 8, 8\n[train]\nepochs = 7\nclip-norm = none\n")
    values = load_config_file(path)
    assert values["lam"] == 0.01 and values["hidden"] == (8, 8) and values["clip_norm"] is None
    cfg = build_config(values, {"epochs": 3, "alpha": None})
    assert cfg.epochs == 3 and cfg.alpha == 0.2


def test_config_file_unknown_key(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[model]\nlearning_speed = 3\n")
    with pytest.raises(ConfigError, match="unknown key"):
        load_config_file(path)


# --- runs -------------------------------------------------------------------------------

def test_report_invariants_and_layout(tmp_path):
    report = run_experiment(small_cfg(out=str(tmp_path)))
    for name in ("report.json", "confusion.csv", "dimhist.csv", "checkpoint.rdlda"):
        assert (tmp_path / name).exists(), name
    M = np.array(report["confusion"]["matrix"])
    test_counts = np.bincount(np.repeat(np.arange(3), 60))
    np.testing.assert_array_equal(M.sum(axis=1), test_counts)
    assert report["confusion"]["accuracy"] == pytest.approx(np.trace(M) / M.sum())
    assert report["accuracy"][report["predictor"]] == report["confusion"]["accuracy"]
    assert len(report["epoch_loss"]) == 4 and len(report["eigenvalue_trace"]) == 4
    assert report["checkpoint_selection"] == "best validation accuracy"
    assert "out" not in report["config"]
    rows = list(csv.reader(open(tmp_path / "confusion.csv")))
    assert [int(v) for v in rows[1][1:]] == report["confusion"]["matrix"][0]
    hist = list(csv.DictReader(open(tmp_path / "dimhist.csv")))
    assert len(hist) == 3 * 3 * 20  # dimensions x classes x bins


def test_report_bytes_repeat(tmp_path):
    run_experiment(small_cfg(out=str(tmp_path / "a")))
    run_experiment(small_cfg(out=str(tmp_path / "b")))
    a = strip_timing((tmp_path / "a" / "report.json").read_text())
    b = strip_timing((tmp_path / "b" / "report.json").read_text())
    assert a == b
    assert (tmp_path / "a" / "checkpoint.rdlda").read_bytes() == (tmp_path / "b" / "checkpoint.rdlda").read_bytes()


def test_output_dir_excluded_from_hash(tmp_path):
    a = run_experiment(small_cfg(out=str(tmp_path / "a")))
    b = run_experiment(small_cfg(out=str(tmp_path / "elsewhere")))
    assert a["input_hash"] == b["input_hash"]
    assert run_experiment(small_cfg(seed=1), write=False)["input_hash"] != a["input_hash"]


def test_dlda_equals_rdlda_alpha_one():
    a = run_experiment(small_cfg(objective="dlda"), write=False)
    b = run_experiment(small_cfg(objective="rdlda", alpha=1.0), write=False)
    for key in METRIC_KEYS:
        assert a[key] == b[key], key


def test_trained_gaussians_reach_95_percent():
    cfg = ExperimentConfig(synthetic="gaussians:c=3,n=200,d=10,sep=6,seed=0", hidden=(64, 64),
                           epochs=50, batch_size=120, val_fraction=0.2)
    report = run_experiment(cfg, write=False)
    assert report["steps"] == 200
    for name, acc in report["accuracy"].items():
        assert acc >= 0.95, name


def test_untrained_is_chance_on_indistinguishable_data():
    report = run_experiment(ExperimentConfig(synthetic="gaussians:c=3,n=200,d=10,sep=0,seed=0",
                                             epochs=0, hidden=(32, 32)), write=False)
    n = report["test_count"]
    bound = 3 * np.sqrt((1 / 3) * (2 / 3) / n)
    assert report["epoch_loss"] == []
    for acc in report["accuracy"].values():
        assert abs(acc - 1 / 3) <= bound


def test_cce_run_reports_softmax(tmp_path):
    report = run_experiment(small_cfg(objective="cce", out=str(tmp_path)))
    assert report["predictor"] == "softmax" and report["alpha"] is None
    assert set(report["accuracy"]) == {"softmax"}
    assert report["eigenvalue_trace"] == []


def test_csv_data_split(tmp_path):
    rng = np.random.default_rng(0)
    y = np.repeat([0, 1], 50)
    X = rng.normal(size=(100, 3)) + 4 * y[:, None]
    path = tmp_path / "d.csv"
    np.savetxt(path, np.column_stack([X, y]), delimiter=",", header="a,b,c,label", comments="")
    report = run_experiment(ExperimentConfig(data=str(path), label_column="label", epochs=3, hidden=(8,),
                                             batch_size=32), write=False)
    assert report["test_count"] == 20
    assert report["confusion"]["sensitivity"] is not None


def test_subclass_run(tmp_path):
    cfg = ExperimentConfig(synthetic="multimodal:c=2,n=60,d=4,sep=5,seed=0", subclass=True, k=2,
                           ae_epochs=2, embedding_dim=3, epochs=3, hidden=(8, 8), batch_size=80,
                           out=str(tmp_path))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        report = run_experiment(cfg)
    assert report["subclasses_per_class"] == 2
    assert np.array(report["confusion"]["matrix"]).shape == (2, 2)


def test_stage_named_on_failure(tmp_path):
    with pytest.raises(harness.StageError, match="loading data failed"):
        run_experiment(ExperimentConfig(data=str(tmp_path / "missing.csv")), write=False)


# --- sweeps -------------------------------------------------------------------------------

def test_sweep_rows_sorted_and_isolated(tmp_path):
    rows = sweep_alpha(small_cfg(out=str(tmp_path)), alphas=[0.8, 1.5, 0.0])
    assert [r["alpha"] for r in rows] == [0.0, 0.8, 1.5]
    assert rows[2]["report"] is None and "alpha" in rows[2]["error"]
    table = list(csv.DictReader(open(tmp_path / "sweep.csv")))
    assert [float(r["alpha"]) for r in table] == [0.0, 0.8, 1.5]
    assert table[2]["error"] and not table[0]["error"]
    assert (tmp_path / "alpha_0" / "report.json").exists()


def test_sweep_alpha_one_is_plain_dlda():
    [row] = sweep_alpha(small_cfg(), alphas=[1.0], write=False)
    plain = run_experiment(small_cfg(objective="dlda"), write=False)
    for key in METRIC_KEYS:
        assert row["report"][key] == plain[key], key


def test_sweep_shares_batches():
    rows = sweep_alpha(small_cfg(), alphas=[0.0, 1.0], write=False)
    assert rows[0]["report"]["batch_digest"] == rows[1]["report"]["batch_digest"]
    assert rows[0]["report"]["epoch_loss"] != rows[1]["report"]["epoch_loss"]


def test_sweep_needs_alphas():
    with pytest.raises(ConfigError):
        sweep_alpha(small_cfg(), alphas=[], write=False)


# --- CLI ----------------------------------------------------------------------------------

def test_cli_train_eval_export(tmp_path, capsys):
    out = tmp_path / "run"
    args = ["--synthetic", SMALL, "--epochs", "3", "--hidden", "16,16", "--batch-size", "60"]
    assert main(["train", *args, "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    capsys.readouterr()
    assert main(["eval", *args, "--checkpoint", str(out / "checkpoint.rdlda")]) == 0
    evaluated = json.loads(capsys.readouterr().out)
    for name, acc in report["accuracy"].items():
        assert abs(evaluated["accuracy"][name] - acc) <= 2 / report["test_count"]
    assert main(["export-dims", *args, "--checkpoint", str(out / "checkpoint.rdlda"),
                 "--out", str(tmp_path / "dims")]) == 0
    assert (tmp_path / "dims" / "dimhist.csv").exists()


def test_cli_sweep_and_subclass(tmp_path):
    args = ["--synthetic", "multimodal:c=2,n=40,d=3,sep=5,seed=0", "--epochs", "2", "--hidden", "8",
            "--batch-size", "48"]
    assert main(["sweep", *args, "--alphas", "0,1", "--out", str(tmp_path / "s")]) == 0
    assert (tmp_path / "s" / "sweep.csv").exists()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        assert main(["subclass", *args, "--k", "2", "--ae-epochs", "1", "--embedding-dim", "2",
                     "--out", str(tmp_path / "k")]) == 0
    assert json.loads((tmp_path / "k" / "report.json").read_text())["subclasses_per_class"] == 2


@pytest.mark.parametrize("argv", [
    [],
    ["train", "--synthetic", SMALL, "--objective", "svm", "--out", "x"],
    ["train", "--synthetic", SMALL, "--alpha", "2", "--out", "x"],
    ["train", "--synthetic", SMALL],
    ["train", "--epochs", "3", "--out", "x"],
    ["eval", "--synthetic", SMALL],
    ["train", "--config", "/nonexistent.ini", "--out", "x"],
])
def test_cli_config_errors_exit_1(argv, capsys):
    assert main(argv) == 1
    assert "config error" in capsys.readouterr().err


def test_cli_runtime_failure_exit_2(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "none.csv"), "--out", str(tmp_path)]) == 2
    assert "loading data failed" in capsys.readouterr().err
    bad = tmp_path / "bad.rdlda"
    bad.write_bytes(b"garbage")
    assert main(["eval", "--synthetic", SMALL, "--checkpoint", str(bad)]) == 2
    assert "loading checkpoint failed" in capsys.readouterr().err


def test_cli_config_file(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text(f"[data]\nsynthetic = {SMALL}\n[train]\nepochs = 2\nhidden = 8\nbatch-size = 60\n")
    assert main(["train", "--config", str(cfg), "--epochs", "3", "--out", str(tmp_path / "o")]) == 0
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["config"]["epochs"] == 3 and report["config"]["hidden"] == [8]
