"""Exact approximate-DP divergence between discrete distributions."""
from __future__ import annotations

import math
from typing import FrozenSet, Iterable, Sequence, Union

import numpy as np
from pydantic import ValidationError

from app.errors import DimensionError, DomainError
from app.models.distribution import Distribution, PrivacyPoint

VectorLike = Union[Distribution, np.ndarray, Sequence[float]]

# Slack on the threshold comparison for floating-point sums.
DP_CHECK_SLACK = 1e-12


def _as_vector(values: VectorLike) -> np.ndarray:
    if isinstance(values, Distribution):
        return values.as_array()
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise DimensionError(f"expected a 1-D probability vector, got shape {arr.shape}")
    if np.any(arr < 0):
        raise DomainError("probability vectors must be non-negative")
    return arr


def _aligned(p: VectorLike, q: VectorLike) -> tuple[np.ndarray, np.ndarray]:
    pv, qv = _as_vector(p), _as_vector(q)
    if pv.shape != qv.shape:
        raise DimensionError(f"alphabet sizes differ: {pv.size} vs {qv.size}")
    return pv, qv


def _check_epsilon(epsilon: float) -> float:
    if not epsilon >= 0:
        raise DomainError(f"epsilon must be non-negative, got {epsilon}")
    return float(epsilon)


def margins(p: VectorLike, q: VectorLike, epsilon: float) -> np.ndarray:
    """Per-symbol p_i - e^eps q_i."""
    pv, qv = _aligned(p, q)
    epsilon = _check_epsilon(epsilon)
    if math.isinf(epsilon):
        return np.where(qv > 0, -np.inf, pv)
    return pv - math.exp(epsilon) * qv


def d_eps(p: VectorLike, q: VectorLike, epsilon: float) -> float:
    """Sum over symbols of [p_i - e^eps q_i]^+."""
    gaps = margins(p, q, epsilon)
    return math.fsum(np.maximum(gaps, 0.0).tolist())


def total_variation(p: VectorLike, q: VectorLike) -> float:
    return d_eps(p, q, 0.0)


def is_eps_delta_dp(p: VectorLike, q: VectorLike, epsilon: float, delta: float) -> bool:
    """Both ordered divergences are at most delta."""
    try:
        point = PrivacyPoint(epsilon=epsilon, delta=delta)
    except ValidationError as exc:
        raise DomainError(str(exc)) from exc
    limit = point.delta + DP_CHECK_SLACK
    return d_eps(p, q, point.epsilon) <= limit and d_eps(q, p, point.epsilon) <= limit


def certificate_set(p_hat: VectorLike, q_hat: VectorLike, epsilon: float) -> FrozenSet[int]:
    """Symbols where p_hat exceeds e^eps q_hat; maximises P_hat(T) - e^eps Q_hat(T)."""
    gaps = margins(p_hat, q_hat, epsilon)
    return frozenset(int(i) for i in np.flatnonzero(gaps > 0))


def set_margin(p: VectorLike, q: VectorLike, epsilon: float, symbols: Iterable[int]) -> float:
    """P(T) - e^eps Q(T) for a symbol set T."""
    pv, qv = _aligned(p, q)
    index = sorted(int(i) for i in symbols)
    scale = math.exp(_check_epsilon(epsilon))
    return math.fsum(pv[index].tolist()) - scale * math.fsum(qv[index].tolist())
