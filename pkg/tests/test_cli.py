import json

import pytest

from bnpmed.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from bnpmed.data import load_dataset
from bnpmed.estimands import ESTIMANDS

SIM = ["--clusters", "6", "--min-size", "3", "--max-size", "5"]
CHAIN = ["--burn", "5", "--keep", "12", "--kc", "3", "--ki", "2"]


@pytest.fixture
def data_file(tmp_path):
    path = tmp_path / "d.csv"
    assert main(["simulate", *SIM, "--seed", "1", "--out", str(path)]) == EXIT_OK
    return path


def test_simulate_is_deterministic(tmp_path, data_file):
    other = tmp_path / "e.csv"
    truth = tmp_path / "t.json"
    assert main(["simulate", *SIM, "--seed", "1", "--out", str(other), "--truth", str(truth),
                 "--oracle", "500"]) == EXIT_OK
    assert other.read_bytes() == data_file.read_bytes()
    tr = json.loads(truth.read_text())
    assert set(tr["values"]) == set(ESTIMANDS)
    assert load_dataset(other).n_clusters == 6


def test_fit_estimate_lpml_pipeline(tmp_path, data_file, capsys):
    draws = tmp_path / "post.npz"
    assert main(["fit", "--data", str(data_file), *CHAIN, "--out", str(draws)]) == EXIT_OK
    prefix = tmp_path / "est"
    assert main(["estimate", "--data", str(data_file), "--draws", str(draws),
                 "--out", str(prefix)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "identity check" in out and "NIE" in out
    summary = json.loads((tmp_path / "est.summary.json").read_text())
    assert summary["identity_max_residual"] < 1e-9
    assert (tmp_path / "est.draws.csv").read_text().count("\n") == 13
    assert main(["lpml", "--data", str(data_file), "--draws", str(draws),
                 "--out", str(tmp_path / "l.json")]) == EXIT_OK
    assert "LPML =" in capsys.readouterr().out
    assert len(json.loads((tmp_path / "l.json").read_text())["log_cpo"]) == load_dataset(data_file).n_units


def test_exit_codes(tmp_path, data_file):
    assert main(["fit", "--data", str(data_file), "--model", "bart", "--out", "x.npz"]) == EXIT_USAGE
    assert main(["estimate", "--data", str(data_file), "--draws", str(tmp_path / "none.npz")]) == EXIT_DATA
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main(["fit", "--data", str(tmp_path / "missing.csv"), "--out", "x.npz"]) == EXIT_DATA
    # draws fitted to one dataset, applied to another
    draws = tmp_path / "p.npz"
    main(["fit", "--data", str(data_file), *CHAIN, "--out", str(draws)])
    other = tmp_path / "o.csv"
    main(["simulate", "--clusters", "7", "--min-size", "3", "--max-size", "5", "--out", str(other)])
    assert main(["estimate", "--data", str(other), "--draws", str(draws)]) == EXIT_DATA


def test_config_precedence(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("seed: 1\nmin_size: 3\nmax_size: 5\nsimulate:\n  clusters: 7\n")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["simulate", "--config", str(cfg), "--out", str(a)]) == EXIT_OK
    assert load_dataset(a).n_clusters == 7
    assert main(["simulate", "--config", str(cfg), "--clusters", "9", "--out", str(b)]) == EXIT_OK
    assert load_dataset(b).n_clusters == 9
    bad = tmp_path / "bad.yaml"
    bad.write_text("clustrs: 4\n")
    assert main(["simulate", "--config", str(bad), "--out", str(a)]) == EXIT_USAGE
    bad.write_text("- 1\n- 2\n")
    assert main(["simulate", "--config", str(bad), "--out", str(a)]) == EXIT_USAGE


def test_sensitivity_command(tmp_path, data_file, capsys):
    out = tmp_path / "s.tsv"
    assert main(["sensitivity", "--data", str(data_file), "--priors", "Default,Prior1", *CHAIN,
                 "--out", str(out)]) == EXIT_OK
    assert out.read_text().splitlines()[0].split("\t") == ["estimand", "Default", "Prior1"]
    assert main(["sensitivity", "--data", str(data_file), "--priors", "Nope", *CHAIN]) == EXIT_USAGE


def test_truth_command(capsys):
    assert main(["truth", "--oracle", "300", "--seed", "2"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["n_oracle_clusters"] == 300
