from pathlib import Path

import pytest

from app.config import get_settings
from app.services import data_loader
from app.services.poly_cache import CoeffCache, PolyTable, get_poly_table

DATA_DIR = Path(__file__).resolve().parents[1] / "data"


@pytest.fixture(scope="session")
def table() -> PolyTable:
    """Coefficient table that lives in memory for the whole session."""
    return PolyTable(CoeffCache(None))


@pytest.fixture(autouse=True)
def isolated_settings(tmp_path_factory, monkeypatch):
    """Repo presets, a per-session coefficient cache, no run ledger."""
    scratch = tmp_path_factory.getbasetemp() / "dpaudit"
    monkeypatch.setenv("DPAUDIT_DATA_DIR", str(DATA_DIR))
    monkeypatch.setenv("DPAUDIT_CACHE", str(scratch / "polycache.txt"))
    monkeypatch.setenv("DPAUDIT_RECORD_RUNS", "false")
    get_settings.cache_clear()
    get_poly_table.cache_clear()
    data_loader.load_mechanism_catalog.cache_clear()
    data_loader.load_category_catalog.cache_clear()
    yield
    get_settings.cache_clear()
    get_poly_table.cache_clear()
