"""Exact expectations under Poisson sampling by truncated summation."""
import math

import numpy as np
from scipy import stats


def poisson_support(rate: float) -> np.ndarray:
    """Counts carrying all but a negligible tail of Poi(rate)."""
    upper = int(math.ceil(rate + 12.0 * math.sqrt(rate) + 30.0))
    return np.arange(upper + 1)


def expectation(estimator, x: float, n: float) -> float:
    """E[estimator(N / n)] for N ~ Poi(n x)."""
    counts = poisson_support(n * x)
    weights = stats.poisson.pmf(counts, n * x)
    values = np.asarray(estimator(counts / n), dtype=float)
    return math.fsum((weights * values).tolist())


def expectation_2d(estimator, p: float, q: float, n: float) -> float:
    """E[estimator(Np / n, Nq / n)] for independent Np ~ Poi(n p), Nq ~ Poi(n q)."""
    counts_p = poisson_support(n * p)
    counts_q = poisson_support(n * q)
    weights = np.outer(stats.poisson.pmf(counts_p, n * p), stats.poisson.pmf(counts_q, n * q))
    xs, ys = np.meshgrid(counts_p / n, counts_q / n, indexing="ij")
    values = np.asarray(estimator(xs, ys), dtype=float)
    return math.fsum((weights * values).ravel().tolist())


def positive_deviation(q: float, n: float) -> float:
    """Closed form of E[[q_hat - q]^+]: lam^(floor(lam)+1) e^-lam / (n floor(lam)!), lam = n q."""
    lam = n * q
    floor = math.floor(lam)
    return math.exp((floor + 1) * math.log(lam) - lam - math.lgamma(floor + 1)) / n
