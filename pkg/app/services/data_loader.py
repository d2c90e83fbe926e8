"""Data loading utilities for mechanism presets and database categories."""
from __future__ import annotations

import json
from functools import lru_cache
from pathlib import Path
from typing import List, Optional, Sequence, Union

from app.config import get_settings
from app.models import CategoryCatalog, MechanismCatalog, QueryDatabasePair


def _load_json(path: Path) -> dict:
    if not path.exists():
        raise FileNotFoundError(f"Required data file missing: {path}")
    with path.open("r", encoding="utf-8") as f:
        return json.load(f)


@lru_cache(1)
def load_mechanism_catalog() -> MechanismCatalog:
    settings = get_settings()
    payload = _load_json(settings.mechanisms_path)
    return MechanismCatalog.model_validate(payload)


@lru_cache(1)
def load_category_catalog() -> CategoryCatalog:
    settings = get_settings()
    payload = _load_json(settings.categories_path)
    return CategoryCatalog.model_validate(payload)


def load_pairs(
    names: Optional[Sequence[str]] = None, query_count: Union[int, Sequence[int]] = 5
) -> List[QueryDatabasePair]:
    """Preset categories, optionally filtered by name, padded to each requested query count."""
    catalog = load_category_catalog()
    pairs = [catalog.get(name) for name in names] if names else list(catalog.categories)
    counts = [query_count] if isinstance(query_count, int) else list(query_count)
    return [pair.with_query_count(count) for count in counts for pair in pairs]
