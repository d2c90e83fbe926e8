import math

import numpy as np
import pandas as pd
import pytest

from app.errors import DomainError
from app.models import Distribution, EstimatorConfig, MechanismKind, MechanismSpec, SplitMode
from app.services import audit, divergence
from app.services.data_loader import load_mechanism_catalog, load_pairs
from app.services.estimators import estimate
from app.services.mechanisms import compatible_pairs
from app.services.sampling import DistributionSource, as_seed_sequence, spawn_seeds, split_samples

AUDIT_CONFIG = EstimatorConfig(epsilon=0.5, n=20_000, c3=0.9)


def preset(mechanism_id: str) -> MechanismSpec:
    return load_mechanism_catalog().get(mechanism_id).spec


def small_audit(mechanism_id: str, categories, eps_grid=(0.0, 0.5, 1.0), n=20_000, trials=2, seed=3):
    return audit.run_audit(
        preset(mechanism_id),
        load_pairs(categories),
        list(eps_grid),
        n,
        trials,
        seed,
        AUDIT_CONFIG,
        jobs=1,
        mechanism_id=mechanism_id,
    )


def test_default_grid():
    grid = audit.default_eps_grid()
    assert len(grid) == 21
    assert grid[0] == 0.0 and grid[-1] == 1.0


def test_jackknife_matches_standard_error_for_means():
    values = np.random.default_rng(0).normal(size=40)
    assert audit.jackknife_se(values) == pytest.approx(audit.standard_error(values))
    assert audit.standard_error([0.3]) == 0.0


def test_mixture_mechanism_recovers_mixing_weight():
    report = small_audit("mtgm", ["One Above"])
    assert report.delta_hat_at(0.5) == pytest.approx(0.2, abs=0.05)
    assert report.claimed.epsilon == 0.5
    assert [r.epsilon for r in report.records] == [0.0, 0.5, 1.0]


def test_audit_is_reproducible(tmp_path):
    first = small_audit("rnm-lap", ["One Above"], trials=1)
    second = small_audit("rnm-lap", ["One Above"], trials=1)
    pd.testing.assert_frame_equal(first.to_frame(), second.to_frame())
    audit.write_report_csv(first, tmp_path / "a.csv")
    audit.write_report_csv(second, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_overall_curve_is_max_over_categories():
    report = small_audit("mtgm", ["One Above", "One Below"])
    frame = report.category_frame()
    assert set(frame["direction"]) == {"D->Dprime", "Dprime->D"}
    for record in report.records:
        rows = frame[frame["epsilon"] == record.epsilon]
        assert record.delta_hat == rows["delta_hat"].max()


def test_broken_sparse_vector_yields_sound_certificate(tmp_path):
    report = small_audit("isvt1", ["One Above Rest Below"], eps_grid=(0.5, 1.0))
    assert report.is_violation(0.02)
    certificate = report.certificate
    assert certificate is not None
    assert certificate.symbols
    assert certificate.margin > 0
    assert audit.certificate_margin(certificate) == certificate.margin
    assert len(certificate.raw_outputs) == len(certificate.symbols)
    assert certificate.trials == 2
    assert certificate.rate_n == pytest.approx(2 * 20_000)

    path = tmp_path / "isvt1.certificate.txt"
    assert audit.write_certificate(report, path) is True
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "mechanism=isvt1"
    assert "trials=2" in lines
    assert "symbol_id,raw_output" in lines


@pytest.mark.parametrize("mechanism_id", ["mtgm", "rna-exp"])
def test_mechanisms_within_their_claim_get_no_certificate(mechanism_id):
    spec = preset(mechanism_id)
    pairs = compatible_pairs(spec, load_pairs())
    report = audit.run_audit(spec, pairs, [0.5], 100_000, 2, 3, AUDIT_CONFIG, jobs=1, violation_tolerance=0.02)
    assert not report.is_violation(0.02)
    assert report.certificate is None


def test_certificate_follows_the_violation_tolerance():
    report = small_audit("isvt1", ["One Above Rest Below"], eps_grid=(0.5,))
    lenient = audit.run_audit(
        preset("isvt1"),
        load_pairs(["One Above Rest Below"]),
        [0.5],
        20_000,
        2,
        3,
        AUDIT_CONFIG,
        jobs=1,
        violation_tolerance=1.0,
    )
    assert report.certificate is not None
    assert lenient.certificate is None
    assert lenient.claimed.delta_hat == report.claimed.delta_hat


def test_missing_certificate_is_written_as_comment(tmp_path):
    report = small_audit("mtgm", ["One Above"], eps_grid=(0.5,), trials=1)
    path = tmp_path / "none.txt"
    assert audit.write_certificate(report.model_copy(update={"certificate": None}), path) is False
    assert path.read_text(encoding="utf-8").startswith("# no certificate")


def test_incompatible_category_is_rejected():
    spec = preset("histogram")
    with pytest.raises(DomainError):
        audit.run_audit(spec, load_pairs(["One Above Rest Below"]), [0.5], 1000, 1, 0, AUDIT_CONFIG)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"trials": 0},
        {"eps_grid": []},
        {"eps_grid": [-0.1, 0.5]},
        {"pairs": []},
    ],
)
def test_run_audit_preconditions(kwargs):
    arguments = {
        "spec": preset("tgm"),
        "pairs": load_pairs(["One Above"]),
        "eps_grid": [0.5],
        "n": 1000,
        "trials": 1,
        "seed": 0,
        "config": AUDIT_CONFIG,
    }
    arguments.update(kwargs)
    with pytest.raises(DomainError):
        audit.run_audit(**arguments)


def test_synthetic_mse_table_shape():
    P = Distribution.uniform(10)
    Q = Distribution.zipf(10, -0.6)
    config = EstimatorConfig(epsilon=0.4, n=200, c3=1.5)
    frame = audit.synthetic_mse(P, Q, 0.4, [200, 500], 3, 7, config, include_known_p=True)
    assert list(frame.columns) == audit.MSE_COLUMNS + audit.KNOWN_P_COLUMNS
    assert frame["n"].tolist() == [200.0, 500.0]
    assert (frame.drop(columns="n") >= 0).all().all()
    again = audit.synthetic_mse(P, Q, 0.4, [200, 500], 3, 7, config, include_known_p=True)
    pd.testing.assert_frame_equal(frame, again)


def test_synthetic_mse_single_point():
    P = Distribution.uniform(5)
    config = EstimatorConfig(epsilon=0.0, n=300, c3=1.5)
    frame = audit.synthetic_mse(P, P, 0.0, [300], 2, 0, config)
    assert len(frame) == 1
    assert list(frame.columns) == audit.MSE_COLUMNS


# ---- Monte-Carlo acceptance runs ----------------------------------------------------

ACCEPTANCE_N = 100_000
ACCEPTANCE_TRIALS = 10


def acceptance_audit(mechanism_id: str, eps_grid, query_counts=(5,)):
    spec = preset(mechanism_id)
    pairs = compatible_pairs(spec, load_pairs(query_count=list(query_counts)))
    config = EstimatorConfig(epsilon=spec.epsilon0, n=ACCEPTANCE_N, c3=0.9)
    return audit.run_audit(
        spec,
        pairs,
        eps_grid,
        ACCEPTANCE_N,
        ACCEPTANCE_TRIALS,
        2024,
        config,
        jobs=None,
        mechanism_id=mechanism_id,
        violation_tolerance=0.02,
    )


@pytest.mark.slow
@pytest.mark.parametrize("mechanism_id", ["rna-lap", "rna-exp"])
def test_noisy_argmax_satisfies_claim(mechanism_id):
    report = acceptance_audit(mechanism_id, [0.5])
    assert report.delta_hat_at(0.5) <= 0.01
    assert not report.is_violation(0.02)
    assert report.certificate is None


@pytest.mark.slow
@pytest.mark.parametrize("mechanism_id", ["rnm-lap", "rnm-exp"])
def test_noisy_max_value_is_caught(mechanism_id):
    # exact binned divergence peaks at 0.0336 on the uniform shift; ten queries stay lower
    report = acceptance_audit(mechanism_id, [0.5], query_counts=(5, 10))
    assert report.delta_hat_at(0.5) == pytest.approx(0.0336, abs=0.01)
    assert report.claimed.category == "All Above & All Below"
    assert report.is_violation(0.02)
    assert report.certificate is not None
    assert audit.certificate_margin(report.certificate) > 0


@pytest.mark.slow
def test_histogram_with_wrong_noise_needs_larger_epsilon():
    report = acceptance_audit("histogram-wrong-noise", [0.5, 2.0])
    assert report.delta_hat_at(2.0) <= 0.01
    assert report.delta_hat_at(0.5) >= 0.05


@pytest.mark.slow
def test_isvt3_effective_epsilon():
    report = acceptance_audit("isvt3", audit.default_eps_grid(31, 1.5))
    smallest = report.smallest_epsilon_below(0.005)
    assert smallest is not None
    assert 0.7 <= smallest <= 1.0


@pytest.mark.slow
def test_mtgm_acceptance():
    assert preset("mtgm").kind is MechanismKind.MTGM
    report = acceptance_audit("mtgm", [0.5])
    assert abs(report.delta_hat_at(0.5) - 0.2) <= 0.05
    assert report.certificate is None


SWEEP_P = Distribution.uniform(100)
SWEEP_Q = Distribution.zipf(100, -0.6)


def paired_squared_errors(config: EstimatorConfig, trials: int, seed: int) -> np.ndarray:
    """Rows of (plug-in, Algorithm 2) squared errors sharing one sample per trial."""
    truth = divergence.d_eps(SWEEP_P, SWEEP_Q, config.epsilon)
    outcomes = np.array(
        [
            audit.synthetic_trial(SWEEP_P, SWEEP_Q, config, child, False)[:2]
            for child in spawn_seeds(as_seed_sequence(seed), trials)
        ]
    )
    return (outcomes - truth) ** 2


@pytest.mark.slow
def test_synthetic_sweep_ordering_and_plugin_rate():
    config = EstimatorConfig(epsilon=0.4, n=1000, c1=4.0, c2=0.1, c3=1.5)
    n_grid = [1e3, 1e4, 1e5]
    frame = audit.synthetic_mse(SWEEP_P, SWEEP_Q, 0.4, n_grid, 100, 11, config, jobs=None)
    low, mid, high = (frame.iloc[i] for i in range(3))
    assert low["mse_alg2"] < low["mse_plugin"]
    assert mid["mse_alg2"] < mid["mse_plugin"]
    # plug-in sits at the variance floor of the linear terms here
    assert high["mse_alg2"] <= high["mse_plugin"] + 2 * high["se_plugin"]
    slope = np.polyfit(np.log(frame["n"]), np.log(frame["mse_plugin"]), 1)[0]
    assert -1.25 <= slope <= -0.75
    assert math.isfinite(slope)


@pytest.mark.slow
def test_polynomial_estimator_beats_plugin_by_two_standard_errors():
    config = EstimatorConfig(epsilon=0.4, n=1e4, c1=4.0, c2=0.1, c3=1.5)
    errors = paired_squared_errors(config, 100, 11)
    gain = errors[:, 0] - errors[:, 1]
    assert gain.mean() >= 2 * audit.standard_error(gain)


@pytest.mark.slow
def test_reusing_classification_sample_matches_split_mode(table):
    n = 1e5
    no_split = EstimatorConfig(epsilon=0.4, n=n, c3=1.5, split_mode=SplitMode.NO_SPLIT)
    split = EstimatorConfig(epsilon=0.4, n=n, c3=1.5, split_mode=SplitMode.SPLIT)
    reused, independent = [], []
    for child in spawn_seeds(as_seed_sequence(5), 100):
        seed_p, seed_q = spawn_seeds(child, 2)
        p_split = split_samples(DistributionSource(SWEEP_P), n, 2, seed_p)
        q_split = split_samples(DistributionSource(SWEEP_Q), n, 2, seed_q)
        reused.append(estimate(p_split, q_split, no_split, table))
        independent.append(estimate(p_split, q_split, split, table))
    combined = math.hypot(audit.standard_error(reused), audit.standard_error(independent))
    assert abs(np.mean(reused) - np.mean(independent)) <= 3 * combined
