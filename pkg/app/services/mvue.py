"""Unbiased estimators of polynomial functionals of Poisson means.

Observables are x_hat = N / n with N ~ Poi(n x). The identity behind every
routine here: if G(X) is unbiased for g(x), then X * G(X - 1/n) is unbiased
for x * g(x). Applying it along a three-term recurrence keeps magnitudes
bounded where a monomial expansion would cancel catastrophically.

All functions broadcast over numpy arrays of observables.
"""
from __future__ import annotations

import math
from typing import Optional, Union

import numpy as np
from scipy.special import comb

from app.errors import DegenerateWidthError, DomainError, RegimeError
from app.services import poly_engine
from app.services.poly_cache import PolyTable, get_poly_table

ArrayLike = Union[float, np.ndarray]

# relative slack when testing the Case-1 / Case-2 boundary
REGIME_SLACK = 1e-12


def _check_order(j: int) -> int:
    if int(j) != j or j < 0:
        raise DomainError(f"order j must be a non-negative integer, got {j}")
    return int(j)


def _check_rate(n: float) -> float:
    if not n > 0:
        raise DomainError(f"sample size n must be positive, got {n}")
    return float(n)


def delta_width(n: float, c1: float) -> float:
    return c1 * math.log(n) / n


def falling_factorial(x_hat: ArrayLike, j: int, n: float) -> np.ndarray:
    """prod_{k<j} (x_hat - k/n), accumulated in order k = 0..j-1; unbiased for x^j."""
    j = _check_order(j)
    n = _check_rate(n)
    x = np.asarray(x_hat, dtype=float)
    out = np.ones_like(x)
    for k in range(j):
        out = out * (x - k / n)
    return out


def centered_moments(
    x_hat: ArrayLike,
    center: ArrayLike,
    n: float,
    degree: int,
    scale: ArrayLike = 1.0,
) -> np.ndarray:
    """Rows j = 0..degree of g_{j,c}(x_hat) / scale**j.

    Recurrence G_{j+1}(X) = X G_j(X - 1/n) - c G_j(X), carried on the lattice
    of shifts X - m/n.
    """
    degree = _check_order(degree)
    n = _check_rate(n)
    x = np.asarray(x_hat, dtype=float)
    c = np.broadcast_to(np.asarray(center, dtype=float), x.shape)
    w = np.broadcast_to(np.asarray(scale, dtype=float), x.shape)
    shifts = x[None, ...] - (np.arange(degree + 1) / n).reshape((-1,) + (1,) * x.ndim)
    level = np.ones((degree + 1,) + x.shape)
    out = np.empty((degree + 1,) + x.shape)
    out[0] = 1.0
    for j in range(degree):
        nxt = np.zeros_like(level)
        nxt[:-1] = (shifts[:-1] * level[1:] - c * level[:-1]) / w
        level = nxt
        out[j + 1] = level[0]
    return out


def chebyshev_moments(
    x_hat: ArrayLike,
    n: float,
    slope: ArrayLike,
    offset: ArrayLike,
    degree: int,
) -> np.ndarray:
    """Rows k = 0..degree of the unbiased estimator of T_k(slope * x + offset)."""
    degree = _check_order(degree)
    n = _check_rate(n)
    x = np.asarray(x_hat, dtype=float)
    a = np.broadcast_to(np.asarray(slope, dtype=float), x.shape)
    b = np.broadcast_to(np.asarray(offset, dtype=float), x.shape)
    shifts = x[None, ...] - (np.arange(degree + 1) / n).reshape((-1,) + (1,) * x.ndim)
    out = np.empty((degree + 1,) + x.shape)
    prev = np.ones((degree + 1,) + x.shape)
    out[0] = 1.0
    if degree == 0:
        return out
    cur = np.zeros_like(prev)
    cur[:-1] = a * shifts[:-1] + b
    out[1] = cur[0]
    for k in range(1, degree):
        nxt = np.zeros_like(cur)
        nxt[:-1] = 2.0 * (a * shifts[:-1] * cur[1:] + b * cur[:-1]) - prev[:-1]
        prev, cur = cur, nxt
        out[k + 1] = cur[0]
    return out


def g_poly(j: int, q: ArrayLike, x_hat: ArrayLike, n: float) -> np.ndarray:
    """MVUE g_{j,q}(X) of (x - q)^j."""
    j = _check_order(j)
    return centered_moments(x_hat, q, n, j)[j]


def g_poly_binomial(j: int, q: ArrayLike, x_hat: ArrayLike, n: float) -> np.ndarray:
    """Sum_k C(j,k) (-q)^(j-k) prod_{h<k}(X - h/n); same function as g_poly."""
    j = _check_order(j)
    q = np.asarray(q, dtype=float)
    total = np.zeros(np.broadcast(np.asarray(x_hat, dtype=float), q).shape)
    for k in range(j + 1):
        total = total + comb(j, k, exact=True) * (-q) ** (j - k) * falling_factorial(x_hat, k, n)
    return total


def cross_moments(
    p_hat: ArrayLike,
    q_hat: ArrayLike,
    n: float,
    epsilon: float,
    degree: int,
    center: Optional[ArrayLike] = None,
    scale: ArrayLike = 1.0,
) -> np.ndarray:
    """Rows j = 0..degree of A_hat_j / scale**j, unbiased for ((e^eps q - p) / scale)^j.

    Recentering at r: e^eps q - p = e^eps (q - r e^-eps) - (p - r), and the two
    centered powers are estimated independently.
    """
    degree = _check_order(degree)
    p = np.asarray(p_hat, dtype=float)
    q = np.asarray(q_hat, dtype=float)
    factor = math.exp(epsilon)
    r = (p + factor * q) / 2.0 if center is None else np.asarray(center, dtype=float)
    gq = centered_moments(q, r / factor, n, degree, scale)
    gp = centered_moments(p, r, n, degree, scale)
    out = np.zeros((degree + 1,) + np.broadcast(p, q).shape)
    for j in range(degree + 1):
        for k in range(j + 1):
            out[j] = out[j] + comb(j, k, exact=True) * factor**k * (-1.0) ** (j - k) * gq[k] * gp[j - k]
    return out


def a_hat(
    j: int,
    p_hat: ArrayLike,
    q_hat: ArrayLike,
    n: float,
    epsilon: float,
    center: Optional[ArrayLike] = None,
) -> np.ndarray:
    """MVUE of (e^eps q - p)^j from independent Poissonized p_hat, q_hat."""
    j = _check_order(j)
    return cross_moments(p_hat, q_hat, n, epsilon, j, center)[j]


def a_hat_direct(j: int, p_hat: ArrayLike, q_hat: ArrayLike, n: float, epsilon: float) -> np.ndarray:
    """Double-sum form: sum_k C(j,k) e^(eps k) (-1)^(j-k) ff_k(q_hat) ff_(j-k)(p_hat)."""
    j = _check_order(j)
    factor = math.exp(epsilon)
    total = 0.0
    for k in range(j + 1):
        total = total + (
            comb(j, k, exact=True)
            * factor**k
            * (-1.0) ** (j - k)
            * falling_factorial(q_hat, k, n)
            * falling_factorial(p_hat, j - k, n)
        )
    return np.asarray(total, dtype=float)


def _table(table: Optional[PolyTable]) -> PolyTable:
    return table if table is not None else get_poly_table()


# ---- Algorithm 1 (known P) ------------------------------------------------------


def known_case1_target(q: ArrayLike, p: float, n: float, degree: int, c1: float, epsilon: float) -> np.ndarray:
    """D_K(q; p) = 2 e^eps Delta H_K(q / (2 Delta)), the Case-1 approximation."""
    width = delta_width(n, c1)
    scale = 2.0 * math.exp(epsilon) * width
    approx = poly_engine.shifted_relu_approx(p / scale, degree)
    return scale * approx(np.asarray(q, dtype=float) / (2.0 * width))


def d_tilde_known_case1(
    q_hat: ArrayLike,
    p: ArrayLike,
    n: float,
    degree: int,
    c1: float,
    epsilon: float,
) -> np.ndarray:
    """Unbiased estimator of D_K(q; p) for p <= e^eps Delta."""
    n = _check_rate(n)
    width = delta_width(n, c1)
    scale = 2.0 * math.exp(epsilon) * width
    q = np.asarray(q_hat, dtype=float)
    p_arr = np.broadcast_to(np.asarray(p, dtype=float), q.shape)
    if np.any(p_arr > scale / 2.0 * (1.0 + REGIME_SLACK)) or np.any(p_arr < 0):
        raise RegimeError("Case-1 estimator requires 0 <= p <= e^eps c1 ln n / n")
    moments = chebyshev_moments(q, n, 1.0 / width, -1.0, degree)
    out = np.zeros(q.shape)
    for value in np.unique(p_arr):
        mask = p_arr == value
        kink = min(value / scale, 1.0)
        approx = poly_engine.shifted_relu_approx(kink, degree)
        out[mask] = scale * np.tensordot(approx.cheb, moments[:, mask], axes=1)
    return out


def known_case2_target(q: ArrayLike, p: float, n: float, degree: int, c1: float, epsilon: float, table: Optional[PolyTable] = None) -> np.ndarray:
    """D_K(q; p) = (e^eps / 2) W R_K((q - c) / W) + (p - e^eps q) / 2, c = e^-eps p."""
    factor = math.exp(epsilon)
    center = p / factor
    width = math.sqrt(center * delta_width(n, c1))
    approx = _table(table).abs_approx(degree)
    q = np.asarray(q, dtype=float)
    return factor / 2.0 * width * approx((q - center) / width) + (p - factor * q) / 2.0


def d_tilde_known_case2(
    q_hat: ArrayLike,
    p: ArrayLike,
    n: float,
    degree: int,
    c1: float,
    epsilon: float,
    table: Optional[PolyTable] = None,
) -> np.ndarray:
    """Unbiased estimator of the Case-2 approximation for p > e^eps Delta.

    (e^eps / 2) (sum_j r_j W^(1-j) g_{j,c}(q_hat) - g_{1,c}(q_hat)), c = e^-eps p,
    W = sqrt(c Delta).
    """
    n = _check_rate(n)
    factor = math.exp(epsilon)
    width_base = delta_width(n, c1)
    q = np.asarray(q_hat, dtype=float)
    p_arr = np.broadcast_to(np.asarray(p, dtype=float), q.shape)
    if np.any(p_arr <= factor * width_base * (1.0 - REGIME_SLACK)):
        raise RegimeError("Case-2 estimator requires p > e^eps c1 ln n / n")
    center = p_arr / factor
    width = np.sqrt(center * width_base)
    coeffs = _table(table).abs_approx(degree).coeffs
    scaled = centered_moments(q, center, n, degree, width)
    series = np.tensordot(coeffs, scaled, axes=1)
    return factor / 2.0 * (width * series - (q - center))


# ---- Algorithm 2 (both unknown) ------------------------------------------------


def d1_target(p: ArrayLike, q: ArrayLike, n: float, degree: int, c1: float, epsilon: float, table: Optional[PolyTable] = None) -> np.ndarray:
    """D^(1)(p, q) = 2 Delta h_2K(p / (2 Delta), e^eps q / (2 Delta))."""
    width = delta_width(n, c1)
    h = _table(table).h2k(degree)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return 2.0 * width * h(p / (2.0 * width), math.exp(epsilon) * q / (2.0 * width))


def d_tilde1(
    p_hat2: ArrayLike,
    q_hat2: ArrayLike,
    n: float,
    degree: int,
    c1: float,
    epsilon: float,
    table: Optional[PolyTable] = None,
) -> np.ndarray:
    """Unbiased estimator of D^(1) for the small-mass branch."""
    n = _check_rate(n)
    width = delta_width(n, c1)
    h = _table(table).h2k(degree)
    p = np.asarray(p_hat2, dtype=float)
    q = np.asarray(q_hat2, dtype=float)
    p, q = np.broadcast_arrays(p, q)
    order = h.max_exponent
    moments_p = chebyshev_moments(p, n, 1.0 / width, -1.0, order)
    moments_q = chebyshev_moments(q, n, math.exp(epsilon) / width, -1.0, order)
    inner = np.tensordot(h.cheb, moments_q, axes=([1], [0]))
    return 2.0 * width * np.sum(moments_p * inner, axis=0)


def d2_target(
    p: ArrayLike,
    q: ArrayLike,
    p_hat1: ArrayLike,
    q_hat1: ArrayLike,
    n: float,
    degree: int,
    c1: float,
    epsilon: float,
    table: Optional[PolyTable] = None,
) -> np.ndarray:
    """D^(2) = (W/2) R_K((e^eps q - p) / W) + (p - e^eps q) / 2."""
    factor = math.exp(epsilon)
    width = d2_width(p_hat1, q_hat1, n, c1, epsilon)
    approx = _table(table).abs_approx(degree)
    gap = factor * np.asarray(q, dtype=float) - np.asarray(p, dtype=float)
    return width / 2.0 * approx(gap / width) - gap / 2.0


def d2_width(p_hat1: ArrayLike, q_hat1: ArrayLike, n: float, c1: float, epsilon: float) -> np.ndarray:
    """W = sqrt(8 c1 ln n / n) * sqrt(p_hat1 + e^eps q_hat1)."""
    mass = np.asarray(p_hat1, dtype=float) + math.exp(epsilon) * np.asarray(q_hat1, dtype=float)
    return math.sqrt(8.0 * c1 * math.log(n) / n) * np.sqrt(mass)


def d_tilde2(
    p_hat2: ArrayLike,
    q_hat2: ArrayLike,
    p_hat1: ArrayLike,
    q_hat1: ArrayLike,
    n: float,
    degree: int,
    c1: float,
    epsilon: float,
    table: Optional[PolyTable] = None,
) -> np.ndarray:
    """(1/2) sum_j a_j W^(1-j) A_hat_j with a_1 = r_1 - 1, a_j = r_j otherwise.

    The width comes from the classification histograms, the moments from the
    estimation histograms.
    """
    n = _check_rate(n)
    factor = math.exp(epsilon)
    p2, q2, p1, q1 = np.broadcast_arrays(
        np.asarray(p_hat2, dtype=float),
        np.asarray(q_hat2, dtype=float),
        np.asarray(p_hat1, dtype=float),
        np.asarray(q_hat1, dtype=float),
    )
    width = d2_width(p1, q1, n, c1, epsilon)
    if np.any(width <= 0):
        raise DegenerateWidthError("W = 0: the large-mass branch needs p_hat1 + e^eps q_hat1 > 0")
    coeffs = np.array(_table(table).abs_approx(degree).coeffs, dtype=float)
    coeffs[1] -= 1.0
    center = (p1 + factor * q1) / 2.0
    scaled = cross_moments(p2, q2, n, epsilon, degree, center=center, scale=width)
    return width / 2.0 * np.tensordot(coeffs, scaled, axes=1)


def kink_offset(
    p_hat1: ArrayLike,
    q_hat1: ArrayLike,
    n: float,
    degree: int,
    c1: float,
    epsilon: float,
    table: Optional[PolyTable] = None,
) -> np.ndarray:
    """(W/2) (R_K(t_hat) - |t_hat|) at the plug-in gap t_hat = clip((e^eps q_hat1 - p_hat1) / W, -1, 1).

    R_K sits E_K above |t| at the kink, so D_tilde2 alone carries a bias of
    up to (W/2) E_K per symbol. Subtracting the offset read off the
    classification histograms recenters the large-mass branch.
    """
    n = _check_rate(n)
    p1, q1 = np.broadcast_arrays(np.asarray(p_hat1, dtype=float), np.asarray(q_hat1, dtype=float))
    width = d2_width(p1, q1, n, c1, epsilon)
    if np.any(width <= 0):
        raise DegenerateWidthError("W = 0: the large-mass branch needs p_hat1 + e^eps q_hat1 > 0")
    gap = np.clip((math.exp(epsilon) * q1 - p1) / width, -1.0, 1.0)
    approx = _table(table).abs_approx(degree)
    return width / 2.0 * (approx(gap) - np.abs(gap))
