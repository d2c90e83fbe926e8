import json

import pandas as pd
import pytest

from app import cli
from app.config import get_settings
from app.services.sampling import EmpiricalHistogram


def test_missing_mechanism_is_a_usage_error(tmp_path):
    assert cli.main(["audit", "--n", "1000", "--out", str(tmp_path / "a.csv")]) == cli.EXIT_USAGE


def test_unknown_flag_is_a_usage_error():
    assert cli.main(["audit", "--mechanism", "tgm", "--frobnicate"]) == cli.EXIT_USAGE


def test_unknown_mechanism_is_a_usage_error(tmp_path):
    code = cli.main(["audit", "--mechanism", "laplace", "--n", "1000", "--out", str(tmp_path / "a.csv")])
    assert code == cli.EXIT_USAGE


def test_broken_mechanism_exits_with_violation(tmp_path):
    out = tmp_path / "isvt1.csv"
    code = cli.main(
        ["audit", "--mechanism", "isvt1", "--n", "20000", "--trials", "2", "--jobs", "1", "--out", str(out)]
    )
    assert code == cli.EXIT_VIOLATION
    frame = pd.read_csv(out)
    assert list(frame.columns) == ["epsilon", "delta_hat", "stderr", "trials", "n", "category"]
    assert len(frame) == 21
    certificate = out.with_suffix(".certificate.txt").read_text(encoding="utf-8")
    assert certificate.startswith("mechanism=isvt1")
    assert out.with_suffix(".categories.csv").exists()


def test_mixture_mechanism_within_claim(tmp_path):
    out = tmp_path / "mtgm.csv"
    code = cli.main(
        [
            "audit",
            "--mechanism", "mtgm",
            "--categories", "One Above",
            "--n", "100000",
            "--trials", "2",
            "--eps-grid", "0.25", "0.5",
            "--jobs", "1",
            "--out", str(out),
        ]
    )
    assert code == cli.EXIT_OK


def test_degree_above_guard_is_refused(tmp_path):
    assert cli.main(["poly-table", "--K", "61", "--cache", str(tmp_path / "c.txt")]) == cli.EXIT_USAGE


def test_named_incompatible_category_is_a_usage_error(tmp_path):
    code = cli.main(
        [
            "audit",
            "--mechanism", "histogram",
            "--categories", "One Above Rest Below",
            "--n", "1000",
            "--out", str(tmp_path / "h.csv"),
        ]
    )
    assert code == cli.EXIT_USAGE
    assert not (tmp_path / "h.csv").exists()


def test_bad_distribution_spec_is_a_usage_error(tmp_path):
    code = cli.main(["synthetic-mse", "--dist", "poisson:2", "--out", str(tmp_path / "s.csv")])
    assert code == cli.EXIT_USAGE


def test_domain_failure_during_run_is_an_internal_error(tmp_path):
    p_path, q_path = tmp_path / "p.hist", tmp_path / "q.hist"
    EmpiricalHistogram({0: 3, 1: 7}, 10).write(p_path)
    EmpiricalHistogram({0: 9, 1: 11}, 20).write(q_path)
    code = cli.main(["estimate", "--p-hist", str(p_path), "--q-hist", str(q_path), "--eps", "0.1"])
    assert code == cli.EXIT_SOFTWARE


def test_poly_table_build_is_idempotent(tmp_path, monkeypatch):
    path = tmp_path / "polycache.txt"
    monkeypatch.setenv("DPAUDIT_CACHE", str(path))
    assert cli.main(["poly-table", "--K", "4", "--cache", str(path)]) == cli.EXIT_OK
    first = path.read_bytes()
    assert first.startswith(b"polycache")
    assert cli.main(["poly-table", "--K", "4", "--cache", str(path)]) == cli.EXIT_OK
    assert path.read_bytes() == first


def test_estimate_from_histogram_files(tmp_path):
    p_path, q_path, out = tmp_path / "p.hist", tmp_path / "q.hist", tmp_path / "est.csv"
    EmpiricalHistogram({0: 600, 1: 400}, 1000).write(p_path)
    EmpiricalHistogram({0: 300, 1: 700}, 1000).write(q_path)
    code = cli.main(
        [
            "estimate",
            "--p-hist", str(p_path),
            "--q-hist", str(q_path),
            "--eps", "0",
            "--known-p", "uniform",
            "--S", "2",
            "--out", str(out),
        ]
    )
    assert code == cli.EXIT_OK
    values = pd.read_csv(out).set_index("estimator")["value"]
    assert values["plugin"] == pytest.approx(0.3)
    assert values["plugin_known_p"] == pytest.approx(0.2)
    assert 0.0 <= values["alg2"] <= 1.0
    assert 0.0 <= values["alg1"] <= 1.0


def test_estimate_requires_p(tmp_path):
    q_path = tmp_path / "q.hist"
    EmpiricalHistogram({0: 3}, 10).write(q_path)
    assert cli.main(["estimate", "--q-hist", str(q_path), "--eps", "0.1"]) == cli.EXIT_USAGE


def test_missing_histogram_file_is_an_io_error(tmp_path):
    code = cli.main(
        ["estimate", "--p-hist", str(tmp_path / "p"), "--q-hist", str(tmp_path / "q"), "--eps", "0.1"]
    )
    assert code == cli.EXIT_IO


def test_flags_override_config_file_over_settings(tmp_path):
    config_path = tmp_path / "audit.json"
    config_path.write_text(
        json.dumps({"audit": {"mechanism": "tgm", "n": 5000, "trials": 3, "seed": 9, "query-count": 10}}),
        encoding="utf-8",
    )
    config = cli.parse_config(["audit", "--config", str(config_path), "--trials", "1"])
    options = config.options
    assert options.mechanism == "tgm"
    assert options.n == 5000
    assert options.trials == 1
    assert options.seed == 9
    assert options.query_count == [10]
    assert options.c3 == get_settings().c3_audit
    assert options.out == get_settings().results_dir / "tgm.csv"


def test_unknown_config_key_is_a_usage_error(tmp_path):
    config_path = tmp_path / "bad.json"
    config_path.write_text(json.dumps({"mechanism": "tgm", "colour": "blue"}), encoding="utf-8")
    assert cli.main(["audit", "--config", str(config_path)]) == cli.EXIT_USAGE


def test_synthetic_sweep_is_byte_identical_on_rerun(tmp_path):
    args = ["synthetic-mse", "--S", "10", "--n-grid", "200", "500", "--trials", "3", "--jobs", "1", "--known-p"]
    assert cli.main([*args, "--out", str(tmp_path / "a.csv")]) == cli.EXIT_OK
    assert cli.main([*args, "--out", str(tmp_path / "b.csv")]) == cli.EXIT_OK
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    frame = pd.read_csv(tmp_path / "a.csv")
    assert list(frame.columns) == ["n", "mse_plugin", "mse_alg2", "se_plugin", "se_alg2", "mse_alg1", "se_alg1"]
