"""Persistent coefficient table for the polynomial approximations."""
from __future__ import annotations

import logging
import os
import tempfile
import threading
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from app.config import get_settings
from app.services import poly_engine
from app.services.poly_engine import BiPolyApprox, UniPolyApprox

logger = logging.getLogger(__name__)

CACHE_VERSION = "polycache v1"
ABS_ID = "abs"
H2K_ID = "h2k"
BIVARIATE_IDS = tuple(poly_engine.BIVARIATE_TARGETS)

Key = Tuple[str, int]


def _format(value: float) -> str:
    return format(float(value), ".17g")


class CoeffCache:
    """Versioned text table keyed by (function id, degree).

    Rows are ``<function-id>,<K>,<i>[,<j>],<coefficient>``; values are written
    with 17 significant digits so a read returns the exact doubles written.
    """

    def __init__(self, path: Optional[Path]) -> None:
        self.path = Path(path) if path is not None else None
        self._entries: Dict[Key, np.ndarray] = {}
        self._lock = threading.RLock()
        self._loaded = False
        self._dirty = False

    def _ensure_loaded(self) -> None:
        if not self._loaded:
            self.load()

    def load(self) -> int:
        with self._lock:
            self._loaded = True
            self._entries = {}
            if self.path is None or not self.path.exists():
                return 0
            lines = self.path.read_text(encoding="utf-8").splitlines()
            if not lines or lines[0].strip() != CACHE_VERSION:
                found = lines[0].strip() if lines else "<empty>"
                logger.info("Coefficient cache %s has version %r; regenerating", self.path, found)
                self._dirty = True
                return 0
            self._entries = _parse_rows(lines[1:])
            return len(self._entries)

    def get(self, function_id: str, degree: int) -> Optional[np.ndarray]:
        with self._lock:
            self._ensure_loaded()
            return self._entries.get((function_id, int(degree)))

    def put(self, function_id: str, degree: int, values: np.ndarray) -> None:
        values = np.array(values, dtype=float)
        if values.ndim not in (1, 2):
            raise ValueError(f"cache entries must be 1-D or 2-D, got {values.ndim}-D")
        with self._lock:
            self._ensure_loaded()
            key = (function_id, int(degree))
            current = self._entries.get(key)
            if current is not None and current.shape == values.shape and np.array_equal(current, values):
                return
            self._entries[key] = values
            self._dirty = True

    def keys(self) -> List[Key]:
        with self._lock:
            self._ensure_loaded()
            return sorted(self._entries)

    def render(self) -> str:
        rows = [CACHE_VERSION]
        for (function_id, degree) in sorted(self._entries):
            values = self._entries[(function_id, degree)]
            if values.ndim == 1:
                rows.extend(
                    f"{function_id},{degree},{i},{_format(v)}" for i, v in enumerate(values)
                )
            else:
                rows.extend(
                    f"{function_id},{degree},{i},{j},{_format(values[i, j])}"
                    for i in range(values.shape[0])
                    for j in range(values.shape[1])
                )
        return "\n".join(rows) + "\n"

    def flush(self) -> bool:
        """Write pending entries atomically; returns whether the file changed."""
        with self._lock:
            if self.path is None or not self._dirty:
                return False
            self.path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp_name = tempfile.mkstemp(prefix=".polycache-", dir=self.path.parent)
            try:
                with os.fdopen(fd, "w", encoding="utf-8") as handle:
                    handle.write(self.render())
                os.replace(tmp_name, self.path)
            except BaseException:
                if os.path.exists(tmp_name):
                    os.unlink(tmp_name)
                raise
            self._dirty = False
            return True


def _parse_rows(lines: Iterable[str]) -> Dict[Key, np.ndarray]:
    flat: Dict[Key, Dict[Tuple[int, ...], float]] = {}
    for line in lines:
        line = line.strip()
        if not line:
            continue
        fields = line.split(",")
        if len(fields) not in (4, 5):
            raise ValueError(f"Malformed coefficient row: {line!r}")
        key = (fields[0], int(fields[1]))
        index = tuple(int(f) for f in fields[2:-1])
        flat.setdefault(key, {})[index] = float(fields[-1])
    entries: Dict[Key, np.ndarray] = {}
    for key, cells in flat.items():
        dims = len(next(iter(cells)))
        shape = tuple(max(idx[d] for idx in cells) + 1 for d in range(dims))
        arr = np.zeros(shape)
        for idx, value in cells.items():
            arr[idx] = value
        entries[key] = arr
    return entries


@dataclass
class TableEntry:
    function_id: str
    degree: int
    sup_error: float

    @property
    def scaled_error(self) -> float:
        return self.degree * self.sup_error


class PolyTable:
    """Approximations backed by the coefficient cache; builds on first use."""

    def __init__(self, cache: Optional[CoeffCache] = None) -> None:
        self.cache = cache or CoeffCache(None)
        self._lock = threading.Lock()
        self._memo: Dict[Key, object] = {}

    def abs_approx(self, degree: int) -> UniPolyApprox:
        degree = poly_engine.check_degree(degree)
        with self._lock:
            key = (ABS_ID, degree)
            if key not in self._memo:
                self._memo[key] = self._load_uni(degree) or self._store_uni(poly_engine.remez_abs(degree))
            return self._memo[key]

    def bivariate(self, target: str, degree: int) -> BiPolyApprox:
        if target not in poly_engine.BIVARIATE_TARGETS:
            return poly_engine.cheb_bivariate(target, degree)
        degree = poly_engine.check_degree(degree, minimum=1)
        with self._lock:
            key = (target, degree)
            if key not in self._memo:
                self._memo[key] = self._load_bi(target, degree) or self._store_bi(
                    target, poly_engine.cheb_bivariate(target, degree)
                )
            return self._memo[key]

    def h2k(self, degree: int) -> BiPolyApprox:
        degree = poly_engine.check_degree(degree, minimum=1)
        u = self.bivariate("sqrt_sum", degree)
        v = self.bivariate("relu_sqrt_diff", degree)
        with self._lock:
            key = (H2K_ID, degree)
            if key not in self._memo:
                self._memo[key] = self._load_bi(H2K_ID, degree) or self._store_bi(
                    H2K_ID, poly_engine.product_approx(u, v, degree)
                )
            return self._memo[key]

    def warm(self, degrees: Iterable[int]) -> List[TableEntry]:
        entries: List[TableEntry] = []
        for degree in sorted(set(int(d) for d in degrees)):
            entries.append(TableEntry(ABS_ID, degree, self.abs_approx(degree).sup_error))
            for target in BIVARIATE_IDS:
                entries.append(TableEntry(target, degree, self.bivariate(target, degree).sup_error))
            entries.append(TableEntry(H2K_ID, degree, self.h2k(degree).sup_error))
        self.cache.flush()
        return entries

    # ---- cache (de)serialisation ----

    def _load_uni(self, degree: int) -> Optional[UniPolyApprox]:
        parts = [self.cache.get(f"{ABS_ID}{suffix}", degree) for suffix in ("", ".cheb", ".alt", ".sup")]
        if any(p is None for p in parts):
            return None
        coeffs, cheb_coeffs, alternation, sup = parts
        return UniPolyApprox(
            degree=degree,
            interval=poly_engine.SYMMETRIC_INTERVAL,
            cheb=poly_engine.frozen_array(cheb_coeffs),
            coeffs=poly_engine.frozen_array(coeffs),
            sup_error=float(sup[0]),
            alternation=poly_engine.frozen_array(alternation),
            label=ABS_ID,
        )

    def _store_uni(self, approx: UniPolyApprox) -> UniPolyApprox:
        self.cache.put(ABS_ID, approx.degree, approx.coeffs)
        self.cache.put(f"{ABS_ID}.cheb", approx.degree, approx.cheb)
        self.cache.put(f"{ABS_ID}.alt", approx.degree, approx.alternation)
        self.cache.put(f"{ABS_ID}.sup", approx.degree, np.array([approx.sup_error]))
        self.cache.flush()
        return approx

    def _load_bi(self, function_id: str, degree: int) -> Optional[BiPolyApprox]:
        parts = [self.cache.get(f"{function_id}{suffix}", degree) for suffix in ("", ".cheb", ".sup")]
        if any(p is None for p in parts):
            return None
        coeffs, cheb_coeffs, sup = parts
        return BiPolyApprox(
            target="relu_diff" if function_id == H2K_ID else function_id,
            degree=degree,
            cheb=poly_engine.frozen_array(cheb_coeffs),
            coeffs=poly_engine.frozen_array(coeffs),
            sup_error=float(sup[0]),
        )

    def _store_bi(self, function_id: str, approx: BiPolyApprox) -> BiPolyApprox:
        self.cache.put(function_id, approx.degree, approx.coeffs)
        self.cache.put(f"{function_id}.cheb", approx.degree, approx.cheb)
        self.cache.put(f"{function_id}.sup", approx.degree, np.array([approx.sup_error]))
        self.cache.flush()
        return approx


@lru_cache(1)
def get_poly_table() -> PolyTable:
    settings = get_settings()
    return PolyTable(CoeffCache(settings.cache_path))
