"""Best and near-best polynomial approximations used by the estimators.

Univariate targets go through a Remez exchange on a dense grid. Bivariate
targets on [0,1]^2 use a tapered tensor Chebyshev expansion sampled on a
Chebyshev-extrema grid. Every approximation keeps its Chebyshev coefficients
for evaluation and exposes monomial coefficients for export.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, Iterable, List, Sequence, Tuple

import numpy as np
from numpy.polynomial import Chebyshev, Polynomial
from numpy.polynomial import chebyshev as cheb
from scipy import fft, optimize

from app.errors import ConvergenceError, DomainError
from app.models.estimator import MAX_DEGREE

logger = logging.getLogger(__name__)

REMEZ_MAX_ITER = 200
REMEZ_TOL = 1e-12
REMEZ_ACCEPT_SPREAD = 1e-6
REMEZ_STALL_LIMIT = 8
GRID_MIN_POINTS = 4000
GRID_POINTS_PER_DEGREE = 40
EXACT_THRESHOLD = 1e-15

BIVARIATE_SAMPLING = 4
FILTER_PLATEAU = 0.75
SUP_GRID_POINTS = 513

UNIT_INTERVAL = (0.0, 1.0)
SYMMETRIC_INTERVAL = (-1.0, 1.0)


def _sqrt_sum(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.sqrt(x) + np.sqrt(y)


def _relu_sqrt_diff(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.maximum(np.sqrt(x) - np.sqrt(y), 0.0)


def _relu_diff(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.maximum(x - y, 0.0)


BIVARIATE_TARGETS: Dict[str, Callable[[np.ndarray, np.ndarray], np.ndarray]] = {
    "sqrt_sum": _sqrt_sum,
    "relu_sqrt_diff": _relu_sqrt_diff,
}


def frozen_array(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


def check_degree(degree: int, minimum: int = 0) -> int:
    if int(degree) != degree or degree < minimum:
        raise DomainError(f"degree must be an integer >= {minimum}, got {degree}")
    if degree > MAX_DEGREE:
        raise DomainError(
            f"degree {degree} exceeds {MAX_DEGREE}; coefficients beyond this lose double precision"
        )
    return int(degree)


def _to_window(x, interval: Tuple[float, float]) -> np.ndarray:
    lo, hi = interval
    return (2.0 * np.asarray(x, dtype=float) - lo - hi) / (hi - lo)


def chebyshev_to_monomial(coeffs: np.ndarray, interval: Tuple[float, float]) -> np.ndarray:
    series = Chebyshev(coeffs, domain=list(interval))
    mono = series.convert(kind=Polynomial).coef
    out = np.zeros(len(coeffs))
    out[: len(mono)] = mono
    return out


@lru_cache(maxsize=None)
def shifted_monomial_basis(degree: int) -> np.ndarray:
    """Column k holds the monomial coefficients of T_k(2s - 1)."""
    basis = np.zeros((degree + 1, degree + 1))
    for k in range(degree + 1):
        mono = Chebyshev.basis(k, domain=[0.0, 1.0]).convert(kind=Polynomial).coef
        basis[: len(mono), k] = mono
    basis.setflags(write=False)
    return basis


@dataclass(frozen=True, eq=False)
class UniPolyApprox:
    """Polynomial of degree <= ``degree`` on ``interval``."""

    degree: int
    interval: Tuple[float, float]
    cheb: np.ndarray
    coeffs: np.ndarray
    sup_error: float
    alternation: np.ndarray = field(default_factory=lambda: frozen_array(np.empty(0)))
    label: str = ""

    def __call__(self, x) -> np.ndarray:
        return cheb.chebval(_to_window(x, self.interval), self.cheb)

    def monomial_value(self, x) -> np.ndarray:
        return np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), self.coeffs)


@dataclass(frozen=True, eq=False)
class BiPolyApprox:
    """Polynomial in (x, y) on [0,1]^2 stored as a tensor Chebyshev series."""

    target: str
    degree: int
    cheb: np.ndarray
    coeffs: np.ndarray
    sup_error: float

    @property
    def max_exponent(self) -> int:
        return self.cheb.shape[0] - 1

    def __call__(self, x, y) -> np.ndarray:
        return cheb.chebval2d(_to_window(x, UNIT_INTERVAL), _to_window(y, UNIT_INTERVAL), self.cheb)

    def on_grid(self, xs, ys) -> np.ndarray:
        return cheb.chebgrid2d(_to_window(xs, UNIT_INTERVAL), _to_window(ys, UNIT_INTERVAL), self.cheb)

    def monomial_value(self, x, y) -> np.ndarray:
        return np.polynomial.polynomial.polyval2d(
            np.asarray(x, dtype=float), np.asarray(y, dtype=float), self.coeffs
        )


# ---- Remez exchange ----------------------------------------------------------


def _dense_grid(interval: Tuple[float, float], degree: int, kinks: Iterable[float]) -> np.ndarray:
    lo, hi = interval
    points = max(GRID_MIN_POINTS, GRID_POINTS_PER_DEGREE * (degree + 1))
    nodes = lo + (hi - lo) * (1.0 - np.cos(np.pi * np.arange(points + 1) / points)) / 2.0
    uniform = np.linspace(lo, hi, points + 1)
    extra = [k for k in kinks if lo <= k <= hi]
    return np.unique(np.concatenate([nodes, uniform, np.asarray(extra, dtype=float), [lo, hi]]))


def _solve_reference(
    func: Callable[[np.ndarray], np.ndarray],
    reference: np.ndarray,
    degree: int,
    interval: Tuple[float, float],
) -> Tuple[np.ndarray, float]:
    vander = cheb.chebvander(_to_window(reference, interval), degree)
    signs = (-1.0) ** np.arange(reference.size)
    system = np.column_stack([vander, signs])
    solution = np.linalg.solve(system, func(reference))
    return solution[:-1], float(solution[-1])


def _error(func, coeffs, interval, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return func(x) - cheb.chebval(_to_window(x, interval), coeffs)


def _local_extrema(func, coeffs, interval, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """One extremum per sign run of the error, refined with bounded Brent."""
    errors = _error(func, coeffs, interval, points)
    signs = np.where(errors >= 0, 1.0, -1.0)
    starts = np.concatenate([[0], np.flatnonzero(np.diff(signs) != 0) + 1])
    ends = np.concatenate([starts[1:], [points.size]])
    xs: List[float] = []
    es: List[float] = []
    for start, end in zip(starts, ends):
        idx = start + int(np.argmax(np.abs(errors[start:end])))
        best_x, best_e = float(points[idx]), float(errors[idx])
        if 0 < idx < points.size - 1:
            sign = signs[idx]
            result = optimize.minimize_scalar(
                lambda t: -sign * float(_error(func, coeffs, interval, t)),
                bounds=(float(points[idx - 1]), float(points[idx + 1])),
                method="bounded",
                options={"xatol": 1e-15 * max(1.0, abs(best_x))},
            )
            refined = -sign * float(result.fun)
            if abs(refined) > abs(best_e) and np.sign(refined) == sign:
                best_x, best_e = float(result.x), refined
        xs.append(best_x)
        es.append(best_e)
    return np.asarray(xs), np.asarray(es)


def _trim_reference(xs: np.ndarray, es: np.ndarray, count: int) -> Tuple[np.ndarray, np.ndarray]:
    """Drop the weakest extrema while keeping sign alternation."""
    xs_list, es_list = list(xs), list(es)
    while len(xs_list) > count:
        mags = np.abs(es_list)
        if len(xs_list) - count == 1:
            drop = [0] if mags[0] < mags[-1] else [len(xs_list) - 1]
        else:
            k = int(np.argmin(mags))
            if k in (0, len(xs_list) - 1):
                drop = [k]
            else:
                # neighbours of k share a sign once k is gone
                drop = [k, k - 1 if mags[k - 1] < mags[k + 1] else k + 1]
        for idx in sorted(drop, reverse=True):
            del xs_list[idx]
            del es_list[idx]
    return np.asarray(xs_list), np.asarray(es_list)


def remez(
    func: Callable[[np.ndarray], np.ndarray],
    degree: int,
    interval: Tuple[float, float] = SYMMETRIC_INTERVAL,
    *,
    kinks: Sequence[float] = (),
    max_iter: int = REMEZ_MAX_ITER,
    tol: float = REMEZ_TOL,
    label: str = "",
) -> UniPolyApprox:
    """Minimax polynomial of degree <= ``degree`` for ``func`` on ``interval``."""
    degree = check_degree(degree)
    lo, hi = interval
    count = degree + 2
    grid = _dense_grid(interval, degree, kinks)
    reference = lo + (hi - lo) * (1.0 - np.cos(np.pi * np.arange(count) / (count - 1))) / 2.0

    best_spread = math.inf
    stalled = 0
    spread = math.inf
    coeffs = np.zeros(degree + 1)
    extrema = np.zeros(count)
    for iteration in range(1, max_iter + 1):
        coeffs, level = _solve_reference(func, reference, degree, interval)
        points = np.union1d(grid, reference)
        peak = float(np.max(np.abs(_error(func, coeffs, interval, points))))
        if peak <= EXACT_THRESHOLD:
            logger.debug("remez %s K=%d: exact after %d iterations", label, degree, iteration)
            return _finish(func, coeffs, degree, interval, peak, reference, label)
        xs, es = _local_extrema(func, coeffs, interval, points)
        if xs.size < count:
            raise ConvergenceError(
                f"remez {label} K={degree}: error lost alternation ({xs.size} < {count} extrema)",
                iterations=iteration,
                levelled_error=abs(level),
            )
        reference, extrema = _trim_reference(xs, es, count)
        mags = np.abs(extrema)
        spread = float((mags.max() - mags.min()) / mags.max())
        if spread < tol:
            logger.debug("remez %s K=%d: converged in %d iterations", label, degree, iteration)
            return _finish(func, coeffs, degree, interval, max(float(mags.max()), peak), reference, label)
        if spread < 0.5 * best_spread:
            best_spread, stalled = spread, 0
        else:
            stalled += 1
        if stalled >= REMEZ_STALL_LIMIT and spread < REMEZ_ACCEPT_SPREAD:
            break

    if spread < REMEZ_ACCEPT_SPREAD:
        logger.warning(
            "remez %s K=%d: accepted with level spread %.2e after %d iterations",
            label,
            degree,
            spread,
            iteration,
        )
        mags = np.abs(extrema)
        return _finish(func, coeffs, degree, interval, float(mags.max()), reference, label)
    raise ConvergenceError(
        f"remez {label} K={degree}: no convergence in {max_iter} iterations (spread {spread:.2e})",
        iterations=max_iter,
        spread=spread,
        levelled_error=float(np.max(np.abs(extrema))),
    )


def _finish(func, coeffs, degree, interval, sup_error, reference, label) -> UniPolyApprox:
    return UniPolyApprox(
        degree=degree,
        interval=(float(interval[0]), float(interval[1])),
        cheb=frozen_array(coeffs),
        coeffs=frozen_array(chebyshev_to_monomial(coeffs, interval)),
        sup_error=float(sup_error),
        alternation=frozen_array(reference),
        label=label,
    )


@lru_cache(maxsize=None)
def remez_abs(degree: int) -> UniPolyApprox:
    """Minimax approximation R_K of |t| on [-1, 1].

    Built from the best degree-floor(K/2) approximation P of sqrt(s) on [0, 1]
    as R_K(t) = P(t^2). Since T_k(2t^2 - 1) = T_2k(t), odd coefficients are
    exactly zero in both bases.
    """
    degree = check_degree(degree)
    half = degree // 2
    inner = remez(np.sqrt, half, UNIT_INTERVAL, label="sqrt")
    cheb_t = np.zeros(degree + 1)
    cheb_t[0 : 2 * half + 1 : 2] = inner.cheb
    mono_t = np.zeros(degree + 1)
    mono_t[0 : 2 * half + 1 : 2] = inner.coeffs
    roots = np.sqrt(inner.alternation)
    alternation = np.unique(np.concatenate([-roots, roots]))
    return UniPolyApprox(
        degree=degree,
        interval=SYMMETRIC_INTERVAL,
        cheb=frozen_array(cheb_t),
        coeffs=frozen_array(mono_t),
        sup_error=inner.sup_error,
        alternation=frozen_array(alternation),
        label="abs",
    )


@lru_cache(maxsize=4096)
def shifted_relu_approx(kink: float, degree: int) -> UniPolyApprox:
    """Best approximation H_K of [b - y]^+ on [0, 1] with b = ``kink``.

    Uses [b - y]^+ = ((b - y) + |y - b|) / 2, so only |y - b| needs Remez.
    """
    kink = float(kink)
    if not 0.0 <= kink <= 1.0:
        raise DomainError(f"kink location must lie in [0, 1], got {kink}")
    degree = check_degree(degree, minimum=1)
    linear = np.zeros(degree + 1)
    linear[0] = kink - 0.5
    linear[1] = -0.5
    if kink == 0.0:
        coeffs, sup_error, alternation = np.zeros(degree + 1), 0.0, np.empty(0)
    elif kink == 1.0:
        coeffs, sup_error, alternation = linear, 0.0, np.empty(0)
    else:
        inner = remez(lambda y: np.abs(y - kink), degree, UNIT_INTERVAL, kinks=(kink,), label="abs-shift")
        coeffs = (linear + inner.cheb) / 2.0
        sup_error, alternation = inner.sup_error / 2.0, inner.alternation
    return UniPolyApprox(
        degree=degree,
        interval=UNIT_INTERVAL,
        cheb=frozen_array(coeffs),
        coeffs=frozen_array(chebyshev_to_monomial(coeffs, UNIT_INTERVAL)),
        sup_error=float(sup_error),
        alternation=frozen_array(alternation),
        label=f"relu@{kink!r}",
    )


# ---- Bivariate Chebyshev approximations -------------------------------------


def _extrema_nodes(points: int) -> np.ndarray:
    """Chebyshev extrema cos(pi j / M) for j = 0..M."""
    return np.cos(np.pi * np.arange(points + 1) / points)


def values_to_chebyshev(values: np.ndarray) -> np.ndarray:
    """Tensor Chebyshev interpolation coefficients from values on the extrema grid."""
    points = values.shape[0] - 1
    coeffs = fft.dctn(values, type=1) / points**2
    coeffs[0, :] /= 2.0
    coeffs[points, :] /= 2.0
    coeffs[:, 0] /= 2.0
    coeffs[:, points] /= 2.0
    return coeffs


def taper(degree: int, plateau: float = FILTER_PLATEAU) -> np.ndarray:
    """Flat up to plateau*K, then linear down towards zero at K + 1."""
    k = np.arange(degree + 1, dtype=float)
    start = math.floor(plateau * degree)
    weights = np.ones(degree + 1)
    tail = k > start
    weights[tail] = (degree + 1 - k[tail]) / (degree + 1 - start)
    return weights


def measure_sup_error_2d(approx_cheb: np.ndarray, target, points: int = SUP_GRID_POINTS) -> float:
    grid = np.linspace(0.0, 1.0, points)
    window = _to_window(grid, UNIT_INTERVAL)
    approx = cheb.chebgrid2d(window, window, approx_cheb)
    exact = target(grid[:, None], grid[None, :])
    return float(np.max(np.abs(approx - exact)))


def _guard_coefficients(name: str, degree: int, coeffs: np.ndarray) -> None:
    bound = (math.sqrt(2.0) + 1.0) ** (8 * degree)
    peak = float(np.max(np.abs(coeffs)))
    if not np.isfinite(peak) or peak > bound:
        logger.warning("%s K=%d: monomial coefficient %.3e exceeds %.3e", name, degree, peak, bound)


def _monomial_2d(coeffs: np.ndarray) -> np.ndarray:
    basis = shifted_monomial_basis(coeffs.shape[0] - 1)
    return basis @ coeffs @ basis.T


@lru_cache(maxsize=None)
def cheb_bivariate(target: str, degree: int, plateau: float = FILTER_PLATEAU) -> BiPolyApprox:
    """Tapered tensor Chebyshev expansion of u_K (sqrt_sum) or v_K (relu_sqrt_diff)."""
    func = BIVARIATE_TARGETS.get(target)
    if func is None:
        raise DomainError(f"unknown bivariate target '{target}' (expected one of {sorted(BIVARIATE_TARGETS)})")
    degree = check_degree(degree, minimum=1)
    points = BIVARIATE_SAMPLING * degree
    nodes = (_extrema_nodes(points) + 1.0) / 2.0
    full = values_to_chebyshev(func(nodes[:, None], nodes[None, :]))
    weights = taper(degree, plateau)
    coeffs = full[: degree + 1, : degree + 1] * np.outer(weights, weights)
    if target == "relu_sqrt_diff":
        # pin v_K(0, y) to zero, matching the target on that edge
        edge = ((-1.0) ** np.arange(degree + 1)) @ coeffs
        coeffs[0, :] -= edge
    mono = _monomial_2d(coeffs)
    _guard_coefficients(target, degree, mono)
    return BiPolyApprox(
        target=target,
        degree=degree,
        cheb=frozen_array(coeffs),
        coeffs=frozen_array(mono),
        sup_error=measure_sup_error_2d(coeffs, func),
    )


@lru_cache(maxsize=None)
def h2k(degree: int) -> BiPolyApprox:
    """h_2K(x, y) = u_K v_K - u_K(0,0) v_K(0,0), approximating [x - y]^+."""
    degree = check_degree(degree, minimum=1)
    u = cheb_bivariate("sqrt_sum", degree)
    v = cheb_bivariate("relu_sqrt_diff", degree)
    return product_approx(u, v, degree)


def product_approx(u: BiPolyApprox, v: BiPolyApprox, degree: int) -> BiPolyApprox:
    points = 2 * degree
    window = _extrema_nodes(points)
    values = cheb.chebgrid2d(window, window, u.cheb) * cheb.chebgrid2d(window, window, v.cheb)
    coeffs = values_to_chebyshev(values)
    coeffs[0, 0] -= float(cheb.chebval2d(-1.0, -1.0, u.cheb) * cheb.chebval2d(-1.0, -1.0, v.cheb))
    coeffs[0, 0] -= float(cheb.chebval2d(-1.0, -1.0, coeffs))
    mono = _monomial_2d(coeffs)
    mono[0, 0] = 0.0
    _guard_coefficients("h2k", degree, mono)
    return BiPolyApprox(
        target="relu_diff",
        degree=degree,
        cheb=frozen_array(coeffs),
        coeffs=frozen_array(mono),
        sup_error=measure_sup_error_2d(coeffs, _relu_diff),
    )
