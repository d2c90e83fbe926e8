"""FastAPI application for the audit service: ``uvicorn app.main:app``."""
import logging
from contextlib import asynccontextmanager
from typing import AsyncIterator

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from app.api.routes import router as api_router
from app.config import get_settings
from app.pipelines.base import configure_logging
from app.services import data_loader

logger = logging.getLogger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI) -> AsyncIterator[None]:
    """Load the preset catalogs once so a broken data directory fails at startup."""
    configure_logging()
    settings = get_settings()
    mechanisms = data_loader.load_mechanism_catalog()
    categories = data_loader.load_category_catalog()
    app.state.mechanism_ids = mechanisms.list_ids()
    app.state.category_names = [pair.category for pair in categories.categories]
    logger.info(
        "audit service ready: %d mechanisms, %d categories from %s",
        len(app.state.mechanism_ids),
        len(app.state.category_names),
        settings.data_dir,
    )
    yield


def create_app() -> FastAPI:
    application = FastAPI(title="DP Audit Service", version="0.1.0", lifespan=lifespan)
    application.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["GET", "POST"],
        allow_headers=["*"],
    )
    application.include_router(api_router)
    return application


app = create_app()
