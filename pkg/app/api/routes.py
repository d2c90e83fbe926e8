"""API routes for the DP audit service."""
from datetime import datetime
from typing import Dict, List, Optional

from fastapi import APIRouter, HTTPException
from pydantic import BaseModel, Field, ValidationError

from app.config import get_settings
from app.errors import AuditError
from app.models import EstimatorConfig, MechanismSpec
from app.services import audit, data_loader, divergence
from app.services.estimators import estimate, plugin_estimate
from app.services.mechanisms import compatible_pairs
from app.services.sampling import EmpiricalHistogram, SampleSplit

router = APIRouter(prefix="/api", tags=["audit"])


class DivergenceRequest(BaseModel):
    p: List[float] = Field(..., min_length=1)
    q: List[float] = Field(..., min_length=1)
    epsilon: float
    delta: Optional[float] = Field(None, description="When given, also check (epsilon, delta)-DP.")


class EstimateRequest(BaseModel):
    p_counts: Dict[int, int] = Field(..., description="Poisson counts of P by symbol id.")
    q_counts: Dict[int, int]
    n: float = Field(..., gt=1.0, description="Sampling rate both histograms were drawn at.")
    epsilon: float = Field(..., ge=0.0)
    c1: float = 4.0
    c2: float = 0.1
    c3: float = 1.5


class AuditRequest(BaseModel):
    mechanism: str
    eps0: Optional[float] = Field(None, gt=0.0)
    delta0: Optional[float] = Field(None, ge=0.0, le=1.0)
    n: float = Field(10_000, gt=1.0)
    trials: int = Field(2, ge=1)
    seed: int = Field(0, ge=0)
    categories: Optional[List[str]] = None
    eps_grid: Optional[List[float]] = None
    c3: Optional[float] = Field(None, gt=0.0)


def _bad_request(exc: Exception) -> HTTPException:
    return HTTPException(status_code=400, detail=str(exc))


@router.get("/health", summary="Health check")
def health() -> dict:
    return {"status": "ok", "timestamp": datetime.utcnow()}


@router.get("/mechanisms", summary="List mechanism presets")
def list_mechanisms() -> dict:
    catalog = data_loader.load_mechanism_catalog()
    return {
        "mechanisms": [
            {"id": preset.id, "description": preset.description, "spec": preset.spec.model_dump(mode="json")}
            for preset in catalog.mechanisms
        ]
    }


@router.get("/categories", summary="List neighbouring-database categories")
def list_categories() -> dict:
    catalog = data_loader.load_category_catalog()
    return {"categories": [pair.model_dump() for pair in catalog.categories]}


@router.post("/divergence", summary="Exact d_eps in both directions")
def exact_divergence(request: DivergenceRequest) -> dict:
    try:
        forward = divergence.d_eps(request.p, request.q, request.epsilon)
        backward = divergence.d_eps(request.q, request.p, request.epsilon)
        is_dp = (
            divergence.is_eps_delta_dp(request.p, request.q, request.epsilon, request.delta)
            if request.delta is not None
            else None
        )
    except (AuditError, ValidationError) as exc:
        raise _bad_request(exc) from exc
    return {"epsilon": request.epsilon, "d_forward": forward, "d_backward": backward, "is_dp": is_dp}


@router.post("/estimate", summary="Plug-in and polynomial estimates from counts")
def estimate_from_counts(request: EstimateRequest) -> dict:
    try:
        config = EstimatorConfig(epsilon=request.epsilon, n=request.n, c1=request.c1, c2=request.c2, c3=request.c3)
        p_hat = EmpiricalHistogram(request.p_counts, request.n)
        q_hat = EmpiricalHistogram(request.q_counts, request.n)
        values = {
            "plugin": plugin_estimate(p_hat, q_hat, request.epsilon),
            "alg2": estimate(SampleSplit((p_hat,)), SampleSplit((q_hat,)), config),
        }
    except (AuditError, ValidationError) as exc:
        raise _bad_request(exc) from exc
    return {"epsilon": request.epsilon, "n": request.n, "degree": config.degree, **values}


@router.post("/audit", summary="Run a small audit")
def run_small_audit(request: AuditRequest) -> dict:
    settings = get_settings()
    try:
        preset = data_loader.load_mechanism_catalog().get(request.mechanism)
    except KeyError as exc:
        raise HTTPException(status_code=404, detail=str(exc)) from exc

    try:
        overrides = {k: v for k, v in (("epsilon0", request.eps0), ("delta0", request.delta0)) if v is not None}
        spec = MechanismSpec.model_validate({**preset.spec.model_dump(), **overrides})
        pairs = data_loader.load_pairs(request.categories)
        if not request.categories:
            pairs = compatible_pairs(spec, pairs)
        budget = 2 * request.n * request.trials * max(len(pairs), 1)
        if budget > settings.api_max_samples:
            raise HTTPException(
                status_code=400,
                detail=f"audit needs about {budget:.0f} samples; the limit is {settings.api_max_samples:.0f}",
            )
        config = EstimatorConfig(
            epsilon=spec.epsilon0,
            n=request.n,
            c1=settings.c1,
            c2=settings.c2,
            c3=request.c3 or settings.c3_audit,
        )
        report = audit.run_audit(
            spec,
            pairs,
            request.eps_grid or audit.default_eps_grid(settings.audit_grid_points, settings.audit_grid_max),
            request.n,
            request.trials,
            request.seed,
            config,
            jobs=1,
            bin_width=settings.bin_width,
            mechanism_id=request.mechanism,
        )
    except KeyError as exc:
        raise HTTPException(status_code=404, detail=str(exc)) from exc
    except (AuditError, ValidationError) as exc:
        raise _bad_request(exc) from exc
    return {
        "violation": report.is_violation(settings.violation_tolerance),
        "report": report.model_dump(mode="json"),
    }
