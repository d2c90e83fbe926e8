"""Poissonized sampling and MLE histograms.

A histogram built from N ~ Poi(n) draws has independent per-symbol counts
Poi(n q_i); normalising by the nominal rate n (not by N) gives the
unbiased MLE q_hat_i = count_i / n.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Dict, Iterable, List, Mapping, Protocol, Sequence, Tuple, Union

import numpy as np

from app.errors import DomainError
from app.models.distribution import Distribution

Seed = Union[int, np.random.SeedSequence]

ALLOWED_PARTS = (1, 2, 4)


class SymbolSource(Protocol):
    """Anything that can draw a batch of integer symbol ids."""

    def draw(self, size: int, rng: np.random.Generator) -> np.ndarray:
        ...


@dataclass(frozen=True)
class DistributionSource:
    """Draws symbol ids from a known distribution."""

    distribution: Distribution

    def draw(self, size: int, rng: np.random.Generator) -> np.ndarray:
        probs = self.distribution.as_array()
        return rng.choice(probs.size, size=size, p=probs / probs.sum())


def as_seed_sequence(seed: Seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(int(seed))


def make_rng(seed: Seed) -> np.random.Generator:
    """Counter-based Philox generator for a seed or substream."""
    return np.random.Generator(np.random.Philox(as_seed_sequence(seed)))


def spawn_seeds(seed: Seed, count: int) -> List[np.random.SeedSequence]:
    """Independent child substreams; the same parent always yields the same children."""
    parent = as_seed_sequence(seed)
    return [
        np.random.SeedSequence(parent.entropy, spawn_key=parent.spawn_key + (i,), pool_size=parent.pool_size)
        for i in range(count)
    ]


@dataclass(frozen=True)
class EmpiricalHistogram:
    counts: Mapping[int, int]
    rate_n: float

    def __post_init__(self) -> None:
        if not self.rate_n > 0:
            raise DomainError(f"rate n must be positive, got {self.rate_n}")
        cleaned: Dict[int, int] = {}
        for symbol, count in self.counts.items():
            count = int(count)
            if count < 0:
                raise DomainError(f"negative count {count} for symbol {symbol}")
            if count:
                cleaned[int(symbol)] = count
        object.__setattr__(self, "counts", MappingProxyType(dict(sorted(cleaned.items()))))

    @classmethod
    def from_samples(cls, samples: np.ndarray, rate_n: float) -> "EmpiricalHistogram":
        symbols, counts = np.unique(np.asarray(samples, dtype=np.int64), return_counts=True)
        return cls(dict(zip(symbols.tolist(), counts.tolist())), rate_n)

    @property
    def symbols(self) -> Tuple[int, ...]:
        return tuple(self.counts)

    @property
    def total_count(self) -> int:
        return sum(self.counts.values())

    def count(self, symbol: int) -> int:
        return self.counts.get(int(symbol), 0)

    def value(self, symbol: int) -> float:
        return self.count(symbol) / self.rate_n

    def count_vector(self, symbols: Sequence[int]) -> np.ndarray:
        return np.array([self.counts.get(int(s), 0) for s in symbols], dtype=float)

    def as_vector(self, symbols: Sequence[int]) -> np.ndarray:
        return self.count_vector(symbols) / self.rate_n

    def to_text(self) -> str:
        lines = [f"n={self.rate_n!r}"]
        lines.extend(f"{symbol},{count}" for symbol, count in self.counts.items())
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EmpiricalHistogram":
        rows = [line.strip() for line in text.splitlines() if line.strip()]
        if not rows or not rows[0].startswith("n="):
            raise DomainError("histogram text must start with a 'n=<rate>' header")
        rate = float(rows[0][2:])
        counts: Dict[int, int] = {}
        for row in rows[1:]:
            symbol, _, count = row.partition(",")
            counts[int(symbol)] = counts.get(int(symbol), 0) + int(count)
        return cls(counts, rate)

    def write(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def read(cls, path: Path) -> "EmpiricalHistogram":
        return cls.from_text(path.read_text(encoding="utf-8"))


@dataclass(frozen=True)
class SampleSplit:
    """Independently Poissonized histograms of one source."""

    parts: Tuple[EmpiricalHistogram, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if not self.parts:
            raise DomainError("a sample split needs at least one part")
        rates = {part.rate_n for part in self.parts}
        if len(rates) != 1:
            raise DomainError(f"parts disagree on the sampling rate: {sorted(rates)}")

    def __len__(self) -> int:
        return len(self.parts)

    def __getitem__(self, index: int) -> EmpiricalHistogram:
        return self.parts[index]

    @property
    def rate_n(self) -> float:
        return self.parts[0].rate_n

    def symbols(self) -> set:
        observed: set = set()
        for part in self.parts:
            observed.update(part.counts)
        return observed

    def roles(self, split: bool) -> Tuple[EmpiricalHistogram, EmpiricalHistogram]:
        """(classification, estimation) histograms; no-split reuses the first part."""
        if not split:
            return self.parts[0], self.parts[0]
        if len(self.parts) < 2:
            raise DomainError("split mode needs two histograms per source")
        return self.parts[0], self.parts[1]


def _check_rate(n: float) -> float:
    if not n > 0:
        raise DomainError(f"sample size n must be positive, got {n}")
    return float(n)


def _draw_histogram(source: SymbolSource, n: float, rng: np.random.Generator) -> EmpiricalHistogram:
    size = int(rng.poisson(n))
    samples = source.draw(size, rng) if size else np.empty(0, dtype=np.int64)
    return EmpiricalHistogram.from_samples(samples, n)


def poissonized_histogram(source: SymbolSource, n: float, seed: Seed) -> EmpiricalHistogram:
    """Draw N ~ Poi(n) symbols and return count / n per symbol."""
    n = _check_rate(n)
    return _draw_histogram(source, n, make_rng(seed))


def split_samples(source: SymbolSource, n: float, parts: int, seed: Seed) -> SampleSplit:
    """``parts`` independent Poissonized histograms, one substream each."""
    n = _check_rate(n)
    if parts < 1:
        raise DomainError(f"parts must be at least 1, got {parts}")
    if parts == 1:
        return SampleSplit((poissonized_histogram(source, n, seed),))
    streams = spawn_seeds(seed, parts)
    return SampleSplit(tuple(_draw_histogram(source, n, make_rng(s)) for s in streams))


def multinomial_histogram(source: SymbolSource, sample_count: int, seed: Seed) -> EmpiricalHistogram:
    """Fixed-N empirical frequencies, normalised by N."""
    if sample_count < 1:
        raise DomainError("sample_count must be at least 1")
    rng = make_rng(seed)
    return EmpiricalHistogram.from_samples(source.draw(sample_count, rng), float(sample_count))


def union_symbols(histograms: Iterable[EmpiricalHistogram]) -> np.ndarray:
    observed: set = set()
    for hist in histograms:
        observed.update(hist.counts)
    return np.array(sorted(observed), dtype=np.int64)
