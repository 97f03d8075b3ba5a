import json

import numpy as np
import pandas as pd
import pytest

from aspr.app import parse_grid, run


@pytest.fixture
def dataset(tmp_path, rng):
    n = 200
    X = rng.binomial(1, 0.35, size=(n, 3))
    z = rng.uniform(size=n) < 0.2 + 0.3 * X[:, 0]
    Y = np.where(
        z[:, None],
        rng.multivariate_normal([240.0, 2000.0], [[400.0, 0.0], [0.0, 90000.0]], size=n),
        rng.multivariate_normal([280.0, 3400.0], [[100.0, 0.0], [0.0, 60000.0]], size=n),
    )
    outcomes, predictors = tmp_path / "outcomes.csv", tmp_path / "predictors.csv"
    pd.DataFrame(Y, columns=["gest", "bw"]).to_csv(outcomes, index=False)
    pd.DataFrame(X, columns=["snp1", "snp2", "smoke"]).to_csv(predictors, index=False)
    return outcomes, predictors


def test_em_writes_two_components(dataset, tmp_path):
    outcomes, _ = dataset
    out = tmp_path / "em.csv"
    assert run(["-q", "em", "--outcomes", str(outcomes), "--restarts", "3", "--out", str(out)]) == 0
    frame = pd.read_csv(out)
    assert list(frame["component"]) == ["adverse", "healthy"]
    assert frame["weight"].iloc[0] < 0.5
    assert frame["mean[gest]"].iloc[0] < frame["mean[gest]"].iloc[1]


def test_two_stage_cutoff(dataset, tmp_path):
    outcomes, predictors = dataset
    out = tmp_path / "coef.csv"
    argv = ["two-stage", "--outcomes", str(outcomes), "--predictors", str(predictors)]
    argv += ["--mode", "cutoff", "--cutoffs", "gest<259,bw<2500", "--out", str(out)]
    assert run(argv) == 0
    frame = pd.read_csv(out, index_col="predictor")
    assert list(frame.index) == ["snp1", "snp2", "smoke"]
    assert {"estimate", "lower", "upper", "selected"} <= set(frame.columns)


def test_malformed_csv_exits_with_status_two(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("gest,bw\n270,\n")
    assert run(["em", "--outcomes", str(bad), "--out", str(tmp_path / "em.csv")]) == 2
    err = capsys.readouterr().err
    assert "row 1" in err and "'bw'" in err


def fit_argv(outcomes, predictors, out, *extra):
    argv = ["-q", "fit", "--outcomes", str(outcomes), "--predictors", str(predictors)]
    argv += ["--iters", "30", "--burnin", "10", "--thin", "2", "--seed", "3", "--out", str(out)]
    return argv + list(extra)


def test_fit_then_predictive_density(dataset, tmp_path):
    outcomes, predictors = dataset
    out = tmp_path / "fit"
    assert run(fit_argv(outcomes, predictors, out, "--with-z")) == 0
    for name in ("samples.csv", "summary.csv", "diagnostics.csv", "allocation.csv", "effectprob.csv", "odds_ratios.csv"):
        assert (out / name).exists()
    samples = pd.read_csv(out / "samples.csv")
    assert samples.shape[0] == 10
    assert "beta[smoke]" in samples.columns and "z[200]" in samples.columns
    allocation = pd.read_csv(out / "allocation.csv")
    assert allocation["healthy_probability"].between(0.0, 1.0).all()
    summary = pd.read_csv(out / "summary.csv", index_col="parameter")
    assert {"ACF1", "ACF10", "ESS"} <= set(summary.columns)
    diagnostics = pd.read_csv(out / "diagnostics.csv")
    assert diagnostics["draws"].tolist() == [10]
    assert 0.0 <= diagnostics["label_diagnostic"].iloc[0] <= 1.0
    assert 0.0 < diagnostics["tail_weight_max"].iloc[0] < 1e-6
    record = json.loads((out / "run.json").read_text())
    assert record["chain"]["n_iter"] == 30 and record["outcome_names"] == ["gest", "bw"]

    density = tmp_path / "ppd.csv"
    grid = "200:300:6,1000:4500:8"
    assert run(["ppd", "--samples", str(out / "samples.csv"), "--grid", grid, "--out", str(density)]) == 0
    frame = pd.read_csv(density)
    assert list(frame.columns) == ["gest", "bw", "density"]
    assert frame.shape == (48, 3)
    assert (frame["density"] >= 0.0).all()


def test_repeated_fit_writes_identical_files(dataset, tmp_path):
    outcomes, predictors = dataset
    first, second = tmp_path / "first", tmp_path / "second"
    assert run(fit_argv(outcomes, predictors, first, "--with-z")) == 0
    assert run(fit_argv(outcomes, predictors, second, "--with-z")) == 0
    names = sorted(p.name for p in first.iterdir())
    assert names == sorted(p.name for p in second.iterdir())
    for name in names:
        assert (first / name).read_bytes() == (second / name).read_bytes(), name


def test_chain_file_sets_defaults_and_rejects_unknown_keys(dataset, tmp_path):
    outcomes, predictors = dataset
    chain = tmp_path / "chain.json"
    chain.write_text(json.dumps({"n_iter": 24, "burn_in": 4, "thin": 4}))
    out = tmp_path / "fit"
    argv = ["-q", "fit", "--outcomes", str(outcomes), "--predictors", str(predictors)]
    argv += ["--chain", str(chain), "--thin", "5", "--out", str(out)]
    assert run(argv) == 0
    assert pd.read_csv(out / "samples.csv").shape[0] == 4
    assert json.loads((out / "run.json").read_text())["chain"]["thin"] == 5

    chain.write_text(json.dumps({"n_iter": 24, "burnin": 4}))
    argv = ["fit", "--outcomes", str(outcomes), "--chain", str(chain), "--out", str(tmp_path / "bad")]
    assert run(argv) == 2


def test_simulate_writes_dataset(tmp_path):
    design = tmp_path / "design.json"
    design.write_text(json.dumps({"n": 120, "p": 8, "nonnull_count": 2, "replicates": 1}))
    out = tmp_path / "sim"
    assert run(["simulate", "--design", str(design), "--seed", "5", "--out", str(out)]) == 0
    assert pd.read_csv(out / "outcomes.csv").shape == (120, 2)
    assert pd.read_csv(out / "predictors.csv").shape == (120, 8)
    assert set(pd.read_csv(out / "classes.csv")["z"]) <= {0, 1}
    np.testing.assert_allclose(pd.read_csv(out / "beta.csv")["beta"], [0.8, 0.8, 0, 0, 0, 0, 0, 0])


def test_study_writes_table_and_roc(tmp_path):
    design = tmp_path / "design.json"
    design.write_text(json.dumps({"n": 200, "p": 5, "nonnull_count": 2, "target_fraction": 0.25}))
    table, roc = tmp_path / "table.csv", tmp_path / "roc.csv"
    argv = ["study", "--design", str(design), "--methods", "truth+standard", "--replicates", "2"]
    argv += ["--out", f"{table},{roc}"]
    assert run(argv) == 0
    assert pd.read_csv(table)["replicates"].tolist() == [2]
    assert set(pd.read_csv(roc).columns) == {"method", "threshold", "fpr", "tpr"}


def test_parse_grid():
    grid = parse_grid("0:1:3,10:20:2", 2)
    assert grid.shape == (6, 2)
    np.testing.assert_allclose(grid[:2], [[0.0, 10.0], [0.0, 20.0]])
    with pytest.raises(ValueError):
        parse_grid("0:1", 1)
    with pytest.raises(ValueError):
        parse_grid("0:1:3", 2)


def test_study_output_is_reproducible(tmp_path):
    design = tmp_path / "design.json"
    design.write_text(json.dumps({"n": 200, "p": 5, "nonnull_count": 2, "target_fraction": 0.25}))
    outputs = []
    for label, workers in (("serial", "1"), ("parallel", "2")):
        table, roc = tmp_path / label / "table.csv", tmp_path / label / "roc.csv"
        argv = ["-q", "study", "--design", str(design), "--methods", "truth+standard,cutoff+standard"]
        argv += ["--replicates", "3", "--workers", workers, "--out", f"{table},{roc}"]
        assert run(argv) == 0
        outputs.append((table.read_bytes(), roc.read_bytes()))
    assert outputs[0] == outputs[1]
    saved = json.loads((tmp_path / "serial" / "table.design.json").read_text())
    assert (saved["replicates"], saved["n"]) == (3, 200)
