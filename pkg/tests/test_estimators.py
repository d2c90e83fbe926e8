import numpy as np
import pytest
from pydantic import ValidationError

from app.errors import DimensionError, DomainError
from app.models import Distribution, EstimatorConfig, RegimeLabel, SplitMode
from app.services import divergence
from app.services.estimators import (
    classify_knownP,
    estimate,
    estimate_knownP,
    estimate_knownP_terms,
    estimate_terms,
    plugin_estimate,
    region2d_classify,
    region_knownP,
)
from app.services.sampling import DistributionSource, EmpiricalHistogram, SampleSplit, split_samples


def single(counts, n) -> SampleSplit:
    return SampleSplit((EmpiricalHistogram(counts, n),))


def test_plugin_on_histograms():
    p_hat = EmpiricalHistogram({0: 6, 1: 4}, 10)
    q_hat = EmpiricalHistogram({0: 3, 1: 7}, 10)
    assert plugin_estimate(p_hat, q_hat, 0.0) == pytest.approx(0.3)


def test_plugin_with_known_p():
    P = Distribution(probs=[0.5, 0.5, 0.0])
    q_hat = EmpiricalHistogram({1: 10, 2: 10}, 20)
    assert plugin_estimate(P, q_hat, 0.0) == pytest.approx(0.5)
    with pytest.raises(DimensionError):
        plugin_estimate(Distribution.uniform(2), q_hat, 0.0)


def test_plugin_is_clamped():
    p_hat = EmpiricalHistogram({0: 15}, 10)
    q_hat = EmpiricalHistogram({1: 1}, 10)
    assert plugin_estimate(p_hat, q_hat, 0.0) == 1.0


def test_known_p_region_branches():
    config = EstimatorConfig(epsilon=0.0, n=1000, c1=4.0, c2=0.1, c3=0.9)
    log_ratio = np.log(1000) / 1000
    lo, hi = region_knownP(0.001, config)
    assert lo == 0.0
    assert hi == pytest.approx(4.1 * log_ratio)
    lo, hi = region_knownP(0.3, config)
    assert (lo + hi) / 2 == pytest.approx(0.3)
    assert hi - lo == pytest.approx(2 * np.sqrt(0.1 * 0.3 * log_ratio))


def test_known_p_labels():
    config = EstimatorConfig(epsilon=0.0, n=1000, c1=4.0, c2=0.1, c3=0.9)
    assert classify_knownP(0.3, 0.3, config) is RegimeLabel.NON_SMOOTH_LARGE
    assert classify_knownP(0.3, 0.5, config) is RegimeLabel.SMOOTH_BELOW
    assert classify_knownP(0.3, 0.1, config) is RegimeLabel.SMOOTH_ABOVE
    assert classify_knownP(0.001, 0.0, config) is RegimeLabel.NON_SMOOTH_SMALL
    lo, hi = region_knownP(0.3, config)
    assert classify_knownP(0.3, hi, config) is RegimeLabel.NON_SMOOTH_LARGE
    assert classify_knownP(0.3, lo, config) is RegimeLabel.NON_SMOOTH_LARGE


def test_two_sample_labels():
    config = EstimatorConfig(epsilon=0.0, n=10_000, c1=4.0, c2=0.1, c3=0.9)
    assert region2d_classify(0.3, 0.01, config) is RegimeLabel.SMOOTH_ABOVE
    assert region2d_classify(0.01, 0.3, config) is RegimeLabel.SMOOTH_BELOW
    assert region2d_classify(0.2, 0.2, config) is RegimeLabel.NON_SMOOTH_LARGE
    assert region2d_classify(0.0, 0.0, config) is RegimeLabel.NON_SMOOTH_SMALL
    with pytest.raises(DomainError):
        region2d_classify(-0.1, 0.0, config)


def test_rate_must_match_config(table):
    config = EstimatorConfig(epsilon=0.0, n=1000, c3=0.9)
    with pytest.raises(DomainError):
        estimate(single({0: 5}, 500), single({0: 5}, 500), config, table)


@pytest.mark.parametrize("seed", range(10))
def test_estimate_stays_in_unit_interval(table, seed):
    rng = np.random.default_rng(seed)
    n = 1000
    size = int(rng.integers(1, 40))
    p_counts = {i: int(c) for i, c in enumerate(rng.poisson(rng.uniform(0, 60), size))}
    q_counts = {i: int(c) for i, c in enumerate(rng.poisson(rng.uniform(0, 60), size))}
    config = EstimatorConfig(epsilon=float(rng.uniform(0, 2)), n=n, c3=0.9)
    value = estimate(single(p_counts, n), single(q_counts, n), config, table)
    assert 0.0 <= value <= 1.0
    known = Distribution(probs=(np.ones(size) / size).tolist())
    assert 0.0 <= estimate_knownP(known, single(q_counts, n), config, table) <= 1.0


def test_estimate_is_permutation_equivariant(table):
    rng = np.random.default_rng(7)
    n = 2000
    p = rng.poisson(30, 25)
    q = rng.poisson(30, 25)
    perm = rng.permutation(25)
    config = EstimatorConfig(epsilon=0.2, n=n, c3=0.9)
    base = estimate(
        single(dict(enumerate(p.tolist())), n), single(dict(enumerate(q.tolist())), n), config, table
    )
    shuffled = estimate(
        single({int(perm[i]): int(p[i]) for i in range(25)}, n),
        single({int(perm[i]): int(q[i]) for i in range(25)}, n),
        config,
        table,
    )
    assert shuffled == pytest.approx(base, abs=1e-12)


def test_disjoint_supports_estimate_near_one(table):
    n = 1000
    P = Distribution(probs=[0.1] * 10 + [0.0] * 10)
    Q = Distribution(probs=[0.0] * 10 + [0.1] * 10)
    config = EstimatorConfig(epsilon=0.5, n=n, c3=0.9)
    p_split = split_samples(DistributionSource(P), n, 1, seed=1)
    q_split = split_samples(DistributionSource(Q), n, 1, seed=2)
    assert estimate(p_split, q_split, config, table) > 0.9


def test_identical_distributions_estimate_near_zero(table):
    n = 10_000
    P = Distribution.uniform(20)
    config = EstimatorConfig(epsilon=0.0, n=n, c3=0.9)
    p_split = split_samples(DistributionSource(P), n, 1, seed=3)
    q_split = split_samples(DistributionSource(P), n, 1, seed=4)
    assert estimate(p_split, q_split, config, table) < 0.1
    assert estimate_knownP(P, q_split, config, table) < 0.1


def test_split_mode_uses_separate_histograms(table):
    n = 5000
    P = Distribution.uniform(8)
    Q = Distribution.zipf(8, 1.0)
    config = EstimatorConfig(epsilon=0.1, n=n, c3=0.9, split_mode=SplitMode.SPLIT)
    p_split = split_samples(DistributionSource(P), n, 2, seed=5)
    q_split = split_samples(DistributionSource(Q), n, 2, seed=6)
    breakdown = estimate_terms(p_split, q_split, config, table)
    assert sum(breakdown.counts_by_label().values()) == breakdown.symbols.size
    truth = divergence.d_eps(P, Q, 0.1)
    assert breakdown.value == pytest.approx(truth, abs=0.1)


def test_known_p_breakdown_covers_support_and_observed(table):
    n = 1000
    P = Distribution(probs=[0.5, 0.5, 0.0, 0.0])
    config = EstimatorConfig(epsilon=0.0, n=n, c3=0.9)
    breakdown = estimate_knownP_terms(P, single({1: 400, 3: 600}, n), config, table)
    assert breakdown.symbols.tolist() == [0, 1, 3]
    assert breakdown.label_of(0) is RegimeLabel.SMOOTH_ABOVE
    assert breakdown.terms[0] == pytest.approx(0.5)
    with pytest.raises(KeyError):
        breakdown.label_of(2)


def test_zero_epsilon_converges_to_total_variation(table):
    n = 1_000_000
    P = Distribution(probs=[0.4, 0.3, 0.2, 0.1])
    Q = Distribution(probs=[0.1, 0.2, 0.3, 0.4])
    config = EstimatorConfig(epsilon=0.0, n=n)
    assert divergence.total_variation(P, Q) == pytest.approx(0.4)
    p_split = split_samples(DistributionSource(P), n, 1, seed=7)
    q_split = split_samples(DistributionSource(Q), n, 1, seed=8)
    assert estimate(p_split, q_split, config, table) == pytest.approx(0.4, abs=0.005)
    assert estimate_knownP(P, q_split, config, table) == pytest.approx(0.4, abs=0.005)


def test_config_rebased_to_new_epsilon_is_validated():
    config = EstimatorConfig(epsilon=0.5, n=1000, c3=0.9, split_mode=SplitMode.SPLIT)
    moved = config.at_epsilon(1.0)
    assert moved.epsilon == 1.0
    assert moved.split_mode is SplitMode.SPLIT
    assert moved.degree == config.degree
    with pytest.raises(ValidationError):
        config.at_epsilon(-0.1)
    with pytest.raises(ValidationError):
        config.at_epsilon(float("inf"))
    with pytest.raises(ValidationError):
        EstimatorConfig(epsilon=0.5, n=1000, c1=1.0, c2=2.0)
