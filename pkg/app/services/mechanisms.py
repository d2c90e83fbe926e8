"""Sampling the mechanism zoo and mapping outputs to symbol ids."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, Hashable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from app.errors import DomainError
from app.models.mechanism import (
    SUPPORTED_QUERY_COUNTS,
    MechanismKind,
    MechanismSpec,
    QueryDatabasePair,
    Side,
)
from app.services.sampling import Seed, make_rng

logger = logging.getLogger(__name__)

GEOMETRIC_MAX = 3
DEFAULT_BIN_WIDTH = 0.1
UNANSWERED = -1

RawOutput = Union[int, float, Tuple]


# ---- Validation ----------------------------------------------------------------


def validate_pair(spec: MechanismSpec, pair: QueryDatabasePair) -> None:
    """Raise DomainError when ``pair`` cannot be audited with ``spec``."""
    if pair.query_count not in SUPPORTED_QUERY_COUNTS:
        raise DomainError(f"{pair.category}: {pair.query_count} queries (supported: {SUPPORTED_QUERY_COUNTS})")
    if spec.kind.is_histogram and not pair.is_histogram_neighbour():
        raise DomainError(
            f"{spec.kind.value} needs answers differing in one coordinate by at most 1; "
            f"'{pair.category}' does not qualify"
        )
    if spec.kind.is_geometric:
        a, b = pair.answers_d[0], pair.answers_dprime[0]
        if not (0 <= a <= GEOMETRIC_MAX and 0 <= b <= GEOMETRIC_MAX) or abs(a - b) > 1:
            raise DomainError(
                f"{spec.kind.value} needs adjacent counts in [0, {GEOMETRIC_MAX}]; '{pair.category}' has {a} vs {b}"
            )


def is_compatible(spec: MechanismSpec, pair: QueryDatabasePair) -> bool:
    try:
        validate_pair(spec, pair)
    except DomainError:
        return False
    return True


def compatible_pairs(spec: MechanismSpec, pairs: Sequence[QueryDatabasePair]) -> List[QueryDatabasePair]:
    return [pair for pair in pairs if is_compatible(spec, pair)]


# ---- Noise ---------------------------------------------------------------------


def _laplace(rng: np.random.Generator, scale: float, shape) -> np.ndarray:
    if scale == 0:
        return np.zeros(shape)
    return rng.laplace(0.0, scale, shape)


def _exponential(rng: np.random.Generator, scale: float, shape) -> np.ndarray:
    if scale == 0:
        return np.zeros(shape)
    return rng.exponential(scale, shape)


def _two_sided_geometric(rng: np.random.Generator, alpha: float, size: int) -> np.ndarray:
    """Z with P(Z = z) proportional to alpha^|z|."""
    if alpha == 0:
        return np.zeros(size, dtype=np.int64)
    success = 1.0 - alpha
    return rng.geometric(success, size) - rng.geometric(success, size)


def _svt_parameters(spec: MechanismSpec) -> Tuple[float, float, bool]:
    """(threshold noise scale, query noise scale, stops after ``bound`` trues)."""
    eps, bound = spec.epsilon0, spec.bound
    if spec.kind is MechanismKind.SVT:
        return 2.0 / eps, 4.0 * bound / eps, True
    if spec.kind is MechanismKind.ISVT1:
        return 2.0 / eps, 0.0, False
    if spec.kind is MechanismKind.ISVT2:
        return 2.0 / eps, 2.0 / eps, False
    if spec.kind is MechanismKind.ISVT3:
        return 4.0 / eps, 4.0 / (3.0 * eps), True
    raise DomainError(f"{spec.kind.value} is not a sparse-vector mechanism")


# ---- Sampling ------------------------------------------------------------------


def draw_outputs(
    spec: MechanismSpec,
    pair: QueryDatabasePair,
    side: Side,
    size: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """``size`` independent raw outputs, one per row.

    RNA gives argmax indices, RNM noisy maxima, Histogram noisy vectors, the
    SVT family int8 rows (1 true, 0 false, -1 after stopping) and TGM/MTGM
    clamped counts.
    """
    answers = np.asarray(pair.answers(side), dtype=float)
    m = answers.size
    kind = spec.kind
    eps = spec.epsilon0

    if kind in (MechanismKind.RNA_LAP, MechanismKind.RNM_LAP):
        noisy = answers + _laplace(rng, 2.0 / eps, (size, m))
        return np.argmax(noisy, axis=1) if kind is MechanismKind.RNA_LAP else np.max(noisy, axis=1)
    if kind in (MechanismKind.RNA_EXP, MechanismKind.RNM_EXP):
        noisy = answers + _exponential(rng, 2.0 / eps, (size, m))
        return np.argmax(noisy, axis=1) if kind is MechanismKind.RNA_EXP else np.max(noisy, axis=1)
    if kind is MechanismKind.HISTOGRAM:
        return answers + _laplace(rng, 1.0 / eps, (size, m))
    if kind is MechanismKind.HISTOGRAM_WRONG_NOISE:
        return answers + _laplace(rng, eps, (size, m))
    if kind.is_sparse_vector:
        rho_scale, nu_scale, bounded = _svt_parameters(spec)
        rho = _laplace(rng, rho_scale, (size, 1))
        nu = _laplace(rng, nu_scale, (size, m))
        above = (answers + nu) >= (spec.threshold + rho)
        rows = above.astype(np.int8)
        if bounded:
            trues_before = np.cumsum(above, axis=1) - above
            rows[trues_before >= spec.bound] = UNANSWERED
        return rows
    if kind.is_geometric:
        true_count = int(answers[0])
        noisy = true_count + _two_sided_geometric(rng, math.exp(-eps), size)
        outputs = np.clip(noisy, 0, GEOMETRIC_MAX)
        if kind is MechanismKind.MTGM:
            keep = rng.random(size) < spec.delta0
            outputs = np.where(keep, true_count, outputs)
        return outputs.astype(np.int64)
    raise DomainError(f"unsupported mechanism {kind}")


def _python_output(spec: MechanismSpec, row) -> RawOutput:
    kind = spec.kind
    if kind in (MechanismKind.RNA_LAP, MechanismKind.RNA_EXP) or kind.is_geometric:
        return int(row)
    if kind in (MechanismKind.RNM_LAP, MechanismKind.RNM_EXP):
        return float(row)
    if kind.is_histogram:
        return tuple(float(v) for v in row)
    return tuple(bool(v) for v in row if v != UNANSWERED)


def sample_mechanism(spec: MechanismSpec, pair: QueryDatabasePair, side: Side, seed: Seed) -> RawOutput:
    """One output of ``spec`` run on the ``side`` database of ``pair``."""
    validate_pair(spec, pair)
    rows = draw_outputs(spec, pair, Side(side), 1, make_rng(seed))
    return _python_output(spec, rows[0])


# ---- Exact output distributions ---------------------------------------------------


def exact_output_pmf(spec: MechanismSpec, answer: int) -> np.ndarray:
    """Closed-form pmf over {0, 1, 2, 3} for TGM and MTGM."""
    if not spec.kind.is_geometric:
        raise DomainError(f"no closed-form output pmf for {spec.kind.value}")
    if not 0 <= answer <= GEOMETRIC_MAX:
        raise DomainError(f"answer {answer} outside [0, {GEOMETRIC_MAX}]")
    alpha = math.exp(-spec.epsilon0)
    z = np.arange(GEOMETRIC_MAX + 1)
    pmf = (1.0 - alpha) / (1.0 + alpha) * alpha ** np.abs(z - answer)
    pmf[0] = alpha**answer / (1.0 + alpha)
    pmf[GEOMETRIC_MAX] = alpha ** (GEOMETRIC_MAX - answer) / (1.0 + alpha)
    if spec.kind is MechanismKind.MTGM:
        pmf = (1.0 - spec.delta0) * pmf
        pmf[answer] += spec.delta0
    return pmf


def binned_laplace_pmf(center: float, scale: float, bin_width: float, low: float, high: float) -> np.ndarray:
    """Laplace(center, scale) mass per bin floor(x / w) over [low, high); tails fold into the end bins."""
    first = math.floor(low / bin_width)
    last = math.floor(high / bin_width)
    edges = np.arange(first, last + 2) * bin_width
    cdf = stats.laplace.cdf(edges, loc=center, scale=scale)
    cdf[0], cdf[-1] = 0.0, 1.0
    return np.diff(cdf)


def binned_noisy_max_pmf(
    spec: MechanismSpec, answers: Sequence[float], bin_width: float, low: float, high: float
) -> np.ndarray:
    """Noisy-max value mass per bin floor(x / w); the max has the product of the per-query CDFs."""
    if spec.kind not in (MechanismKind.RNM_LAP, MechanismKind.RNM_EXP):
        raise DomainError(f"{spec.kind.value} does not release a noisy maximum")
    noise = stats.laplace if spec.kind is MechanismKind.RNM_LAP else stats.expon
    first = math.floor(low / bin_width)
    last = math.floor(high / bin_width)
    edges = np.arange(first, last + 2) * bin_width
    cdf = np.prod([noise.cdf(edges - answer, scale=2.0 / spec.epsilon0) for answer in answers], axis=0)
    cdf[0], cdf[-1] = 0.0, 1.0
    return np.maximum(np.diff(cdf), 0.0)


# ---- Symbol dictionaries -----------------------------------------------------------


class SymbolDictionary:
    """Dense ids for raw outputs, shared by both databases of an audit.

    Continuous outputs are binned as floor(x / bin_width) (anchor 0) before
    lookup; vector outputs can be projected onto ``coordinates`` first.
    """

    def __init__(self, bin_width: Optional[float] = None, coordinates: Optional[Sequence[int]] = None) -> None:
        if bin_width is not None and not bin_width > 0:
            raise DomainError(f"bin width must be positive, got {bin_width}")
        self.bin_width = bin_width
        self.coordinates = tuple(coordinates) if coordinates is not None else None
        self._ids: Dict[Hashable, int] = {}
        self._keys: List[Hashable] = []

    def __len__(self) -> int:
        return len(self._keys)

    def _intern(self, key: Hashable) -> int:
        symbol = self._ids.get(key)
        if symbol is None:
            symbol = len(self._keys)
            self._ids[key] = symbol
            self._keys.append(key)
        return symbol

    def _prepare(self, outputs: np.ndarray) -> np.ndarray:
        arr = np.asarray(outputs)
        if self.coordinates is not None and arr.ndim == 2:
            arr = arr[:, list(self.coordinates)]
        if self.bin_width is not None:
            arr = np.floor(arr / self.bin_width).astype(np.int64)
        return arr

    def symbolize(self, outputs: np.ndarray) -> np.ndarray:
        """Map a batch of raw outputs (one per row) to symbol ids."""
        arr = self._prepare(outputs)
        if arr.shape[0] == 0:
            return np.empty(0, dtype=np.int64)
        if arr.ndim == 1:
            unique, inverse = np.unique(arr, return_inverse=True)
            keys = unique.tolist()
        else:
            unique, inverse = np.unique(arr, axis=0, return_inverse=True)
            keys = [tuple(row) for row in unique.tolist()]
        ids = np.array([self._intern(key) for key in keys], dtype=np.int64)
        return ids[np.asarray(inverse).reshape(-1)]

    def lookup(self, raw: RawOutput) -> int:
        row = np.asarray(raw)
        batch = row.reshape(1, -1) if row.ndim == 1 else row.reshape(1)
        return int(self.symbolize(batch)[0])

    def key_of(self, symbol: int) -> Hashable:
        return self._keys[symbol]

    def describe(self, symbol: int) -> str:
        key = self._keys[symbol]
        if self.bin_width is None:
            return str(key)
        width = self.bin_width
        if isinstance(key, tuple):
            return "(" + ", ".join(f"[{k * width:.6g},{(k + 1) * width:.6g})" for k in key) + ")"
        return f"[{key * width:.6g},{(key + 1) * width:.6g})"


def dictionary_for(spec: MechanismSpec, pair: QueryDatabasePair, bin_width: float = DEFAULT_BIN_WIDTH) -> SymbolDictionary:
    coordinates = pair.differing_coordinates() if spec.kind.is_histogram else None
    width = bin_width if spec.kind.has_continuous_output else None
    return SymbolDictionary(bin_width=width, coordinates=coordinates)


@dataclass
class MechanismSource:
    """Symbol source for one side of an audited pair."""

    spec: MechanismSpec
    pair: QueryDatabasePair
    side: Side
    dictionary: SymbolDictionary

    def draw(self, size: int, rng: np.random.Generator) -> np.ndarray:
        return self.dictionary.symbolize(draw_outputs(self.spec, self.pair, self.side, size, rng))
