"""Plug-in, known-P (Algorithm 1) and two-sample (Algorithm 2) estimators of d_eps(P||Q)."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple, Union

import numpy as np

from app.errors import DimensionError, DomainError
from app.models.distribution import Distribution
from app.models.estimator import EstimatorConfig, RegimeLabel, SplitMode
from app.services import mvue
from app.services.poly_cache import PolyTable, get_poly_table
from app.services.sampling import EmpiricalHistogram, SampleSplit, union_symbols

logger = logging.getLogger(__name__)

LABEL_CODES = {
    0: RegimeLabel.SMOOTH_BELOW,
    1: RegimeLabel.SMOOTH_ABOVE,
    2: RegimeLabel.NON_SMOOTH_SMALL,
    3: RegimeLabel.NON_SMOOTH_LARGE,
}
_CODE = {label: code for code, label in LABEL_CODES.items()}


@dataclass(frozen=True)
class EstimateBreakdown:
    """Per-symbol terms behind one estimate."""

    symbols: np.ndarray
    labels: np.ndarray
    terms: np.ndarray
    value: float

    def label_of(self, symbol: int) -> RegimeLabel:
        index = int(np.searchsorted(self.symbols, symbol))
        if index >= self.symbols.size or self.symbols[index] != symbol:
            raise KeyError(f"symbol {symbol} not in the estimate")
        return LABEL_CODES[int(self.labels[index])]

    def counts_by_label(self) -> Dict[RegimeLabel, int]:
        return {label: int(np.sum(self.labels == code)) for code, label in LABEL_CODES.items()}


def clamp_sum(terms: np.ndarray) -> float:
    """0 v (1 ^ sum), with an exactly rounded, order-independent sum."""
    total = math.fsum(np.asarray(terms, dtype=float).tolist())
    return min(1.0, max(0.0, total))


def _check_rate(config: EstimatorConfig, *histograms: EmpiricalHistogram) -> None:
    for hist in histograms:
        if not math.isclose(hist.rate_n, config.n, rel_tol=1e-12):
            raise DomainError(f"histogram rate {hist.rate_n} does not match configured n={config.n}")


# ---- Plug-in -----------------------------------------------------------------


def plugin_estimate(
    p: Union[Distribution, EmpiricalHistogram],
    q_hat: EmpiricalHistogram,
    epsilon: float,
) -> float:
    """sum_i [p_i - e^eps q_hat_i]^+ clamped to [0, 1]."""
    if epsilon < 0:
        raise DomainError(f"epsilon must be non-negative, got {epsilon}")
    if isinstance(p, Distribution):
        observed = union_symbols([q_hat])
        if observed.size and observed[-1] >= p.size:
            raise DimensionError(f"Q_hat has symbol {observed[-1]} outside P's alphabet of {p.size}")
        symbols = np.arange(p.size)
        p_values = p.as_array()
    else:
        symbols = union_symbols([p, q_hat])
        p_values = p.as_vector(symbols)
    gaps = p_values - math.exp(epsilon) * q_hat.as_vector(symbols)
    return clamp_sum(np.maximum(gaps, 0.0))


# ---- Algorithm 1 -----------------------------------------------------------------


def region_knownP(p: float, config: EstimatorConfig) -> Tuple[float, float]:
    """Closed interval U(p; c1, c2) for the classification histogram q_hat."""
    log_ratio = config.log_n / config.n
    if p <= config.c1 * config.exp_epsilon * log_ratio:
        return 0.0, (config.c1 + config.c2) * log_ratio
    center = p / config.exp_epsilon
    half = math.sqrt(config.c2 * center * log_ratio)
    return center - half, center + half


def _known_labels(p: np.ndarray, q1: np.ndarray, config: EstimatorConfig) -> np.ndarray:
    log_ratio = config.log_n / config.n
    small = p <= config.c1 * config.exp_epsilon * log_ratio
    center = p / config.exp_epsilon
    half = np.sqrt(config.c2 * center * log_ratio)
    lower = np.where(small, 0.0, center - half)
    upper = np.where(small, (config.c1 + config.c2) * log_ratio, center + half)
    labels = np.where(small, _CODE[RegimeLabel.NON_SMOOTH_SMALL], _CODE[RegimeLabel.NON_SMOOTH_LARGE])
    labels = np.where(q1 > upper, _CODE[RegimeLabel.SMOOTH_BELOW], labels)
    labels = np.where(q1 < lower, _CODE[RegimeLabel.SMOOTH_ABOVE], labels)
    return labels


def classify_knownP(p: float, q_hat1: float, config: EstimatorConfig) -> RegimeLabel:
    code = _known_labels(np.array([p], dtype=float), np.array([q_hat1], dtype=float), config)[0]
    return LABEL_CODES[int(code)]


def estimate_knownP_terms(
    P: Distribution,
    split: SampleSplit,
    config: EstimatorConfig,
    table: Optional[PolyTable] = None,
) -> EstimateBreakdown:
    classify, estimation = split.roles(config.split_mode is SplitMode.SPLIT)
    _check_rate(config, classify, estimation)
    observed = union_symbols([classify, estimation])
    support = P.support()
    symbols = np.union1d(support, observed).astype(np.int64)
    probs = P.as_array()
    p = np.where(symbols < P.size, probs[np.minimum(symbols, P.size - 1)], 0.0)
    q1 = classify.as_vector(symbols)
    q2 = estimation.as_vector(symbols)

    labels = _known_labels(p, q1, config)
    terms = np.zeros(symbols.size)
    above = labels == _CODE[RegimeLabel.SMOOTH_ABOVE]
    terms[above] = np.maximum(p[above] - config.exp_epsilon * q2[above], 0.0)
    case1 = labels == _CODE[RegimeLabel.NON_SMOOTH_SMALL]
    if np.any(case1):
        terms[case1] = mvue.d_tilde_known_case1(
            q2[case1], p[case1], config.n, config.degree, config.c1, config.epsilon
        )
    case2 = labels == _CODE[RegimeLabel.NON_SMOOTH_LARGE]
    if np.any(case2):
        terms[case2] = mvue.d_tilde_known_case2(
            q2[case2],
            p[case2],
            config.n,
            config.degree,
            config.c1,
            config.epsilon,
            table=table if table is not None else get_poly_table(),
        )
    return EstimateBreakdown(symbols=symbols, labels=labels, terms=terms, value=clamp_sum(terms))


def estimate_knownP(
    P: Distribution,
    split: SampleSplit,
    config: EstimatorConfig,
    table: Optional[PolyTable] = None,
) -> float:
    """Algorithm 1: estimate d_eps(P||Q) with P known and Q sampled."""
    return estimate_knownP_terms(P, split, config, table).value


# ---- Algorithm 2 -----------------------------------------------------------------


def _two_d_labels(p1: np.ndarray, q1: np.ndarray, config: EstimatorConfig) -> np.ndarray:
    log_ratio = config.log_n / config.n
    scaled_q = config.exp_epsilon * q1
    threshold = math.sqrt((config.c1 + config.c2) * log_ratio) * (np.sqrt(p1) + np.sqrt(scaled_q))
    gap = p1 - scaled_q
    small = (p1 + scaled_q) < config.c1 * log_ratio
    labels = np.where(small, _CODE[RegimeLabel.NON_SMOOTH_SMALL], _CODE[RegimeLabel.NON_SMOOTH_LARGE])
    labels = np.where(gap < -threshold, _CODE[RegimeLabel.SMOOTH_BELOW], labels)
    labels = np.where(gap > threshold, _CODE[RegimeLabel.SMOOTH_ABOVE], labels)
    return labels


def region2d_classify(p_hat1: float, q_hat1: float, config: EstimatorConfig) -> RegimeLabel:
    if p_hat1 < 0 or q_hat1 < 0:
        raise DomainError("histogram values must be non-negative")
    code = _two_d_labels(np.array([p_hat1], dtype=float), np.array([q_hat1], dtype=float), config)[0]
    return LABEL_CODES[int(code)]


def estimate_terms(
    P_split: SampleSplit,
    Q_split: SampleSplit,
    config: EstimatorConfig,
    table: Optional[PolyTable] = None,
) -> EstimateBreakdown:
    split = config.split_mode is SplitMode.SPLIT
    p_classify, p_estimate = P_split.roles(split)
    q_classify, q_estimate = Q_split.roles(split)
    _check_rate(config, p_classify, p_estimate, q_classify, q_estimate)
    symbols = union_symbols([p_classify, p_estimate, q_classify, q_estimate])
    p1, p2 = p_classify.as_vector(symbols), p_estimate.as_vector(symbols)
    q1, q2 = q_classify.as_vector(symbols), q_estimate.as_vector(symbols)

    labels = _two_d_labels(p1, q1, config)
    terms = np.zeros(symbols.size)
    above = labels == _CODE[RegimeLabel.SMOOTH_ABOVE]
    terms[above] = p2[above] - config.exp_epsilon * q2[above]
    table = table if table is not None else get_poly_table()
    small = labels == _CODE[RegimeLabel.NON_SMOOTH_SMALL]
    if np.any(small):
        terms[small] = mvue.d_tilde1(
            p2[small], q2[small], config.n, config.degree, config.c1, config.epsilon, table=table
        )
    large = labels == _CODE[RegimeLabel.NON_SMOOTH_LARGE]
    if np.any(large):
        terms[large] = mvue.d_tilde2(
            p2[large],
            q2[large],
            p1[large],
            q1[large],
            config.n,
            config.degree,
            config.c1,
            config.epsilon,
            table=table,
        ) - mvue.kink_offset(
            p1[large], q1[large], config.n, config.degree, config.c1, config.epsilon, table=table
        )
    return EstimateBreakdown(symbols=symbols, labels=labels, terms=terms, value=clamp_sum(terms))


def estimate(
    P_split: SampleSplit,
    Q_split: SampleSplit,
    config: EstimatorConfig,
    table: Optional[PolyTable] = None,
) -> float:
    """Algorithm 2: estimate d_eps(P||Q) from samples of both distributions."""
    return estimate_terms(P_split, Q_split, config, table).value
