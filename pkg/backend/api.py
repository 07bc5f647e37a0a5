"""
FastAPI Application for the Unit-Root Marked Process Toolkit
RESTful API for path simulation, estimation and marked empirical curves
"""

import sys
import math
from pathlib import Path
from datetime import datetime
from typing import Optional, List, Any
import logging

# Add parent directory to path to access the stochastics package
parent_dir = str(Path(__file__).parent.parent)
if parent_dir not in sys.path:
    sys.path.insert(0, parent_dir)

import numpy as np
from fastapi import FastAPI, HTTPException, Request, status
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, Field
import uvicorn

from backend.config import Config
from stochastics.distributions import reference_by_id
from stochastics.errors import DomainError, NumericalError, UnidentifiedError
from stochastics.estimators import EstimatorMethod, estimate
from stochastics.innovations import InnovationSpec, configure_samplers
from stochastics.marked_process import (
    NormKind,
    SupMode,
    mark_grid,
    marked_empirical,
    residual_marked_empirical,
    sup_functional,
    weight_function,
)
from stochastics.processes import SeriesSample, max_normalized_level, observed_series, simulate_series
from stochastics.streams import NoiseStream

# Fix Windows encoding
if sys.platform == 'win32':
    sys.stdout.reconfigure(encoding='utf-8')

# Configure logging
logging.basicConfig(
    level=getattr(logging, Config.LOG_LEVEL),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

configure_samplers(**Config.sampler_settings())

API_VERSION = "1.0.0"
MAX_SIMULATE_N = 2 ** 20

# ============================================================================
# Pydantic Models for Request/Response
# ============================================================================

class SimulateRequest(BaseModel):
    """Request model for path simulation."""
    model_config = ConfigDict(
        extra="forbid",
        json_schema_extra={
            "example": {
                "spec": {"family": "StableIID", "alpha": 1.5},
                "n": 1024,
                "seed": 42,
                "stream_id": 0,
            }
        },
    )

    spec: InnovationSpec
    n: int = Field(..., ge=1, le=MAX_SIMULATE_N, description="Sample size")
    seed: int = Field(Config.DEFAULT_SEED, ge=0, le=2**64 - 1)
    stream_id: int = Field(0, ge=0)
    beta: float = 1.0
    x0: float = 0.0


class EstimateRequest(BaseModel):
    """Request model for estimating beta from observations."""
    model_config = ConfigDict(
        extra="forbid",
        json_schema_extra={
            "example": {"x": [0.0, 0.4, -0.1, 0.7, 1.2], "method": "quantile", "tau": 0.5, "q_tau": 0.0}
        },
    )

    x: List[float] = Field(..., min_length=2, description="Observations X_0..X_n")
    method: EstimatorMethod = EstimatorMethod.QUANTILE
    tau: float = Field(0.5, gt=0.0, lt=1.0)
    q_tau: Optional[float] = None
    estimate_intercept: bool = False
    beta_true: float = Field(1.0, description="Beta used for the scaled error")
    spec: Optional[InnovationSpec] = None


class MarkedCurveRequest(BaseModel):
    """Request model for a marked (or residual marked) empirical curve."""
    model_config = ConfigDict(
        extra="forbid",
        json_schema_extra={
            "example": {"x": [0.0, 0.4, -0.1, 0.7], "g_id": "identity", "F_id": "normal", "points": 5}
        },
    )

    x: List[float] = Field(..., min_length=2, description="Observations X_0..X_n")
    eps: Optional[List[float]] = Field(None, description="True innovations eps_1..eps_n")
    beta: float = Field(1.0, description="Beta implying the innovations when eps is omitted")
    beta_hat: Optional[float] = Field(None, description="Residual curve at this estimate")
    spec: Optional[InnovationSpec] = None
    g_id: str = "identity"
    g_scale: float = 1.0
    F_id: str = "normal"
    A: float = Field(Config.GRID_HALF_WIDTH, gt=0.0)
    points: int = Field(Config.GRID_POINTS, ge=1, le=10_001)
    norm: NormKind = NormKind.SQRT_N
    sup_mode: SupMode = SupMode.SIGNED


class APIResponse(BaseModel):
    """Standard API response format."""
    success: bool = Field(..., description="Whether the request was successful")
    data: Optional[Any] = Field(None, description="Response data")
    error: Optional[str] = Field(None, description="Error message if success=false")
    timestamp: str = Field(default_factory=lambda: datetime.now().isoformat())


class HealthResponse(BaseModel):
    """Health check response."""
    status: str
    environment: str
    version: str
    numpy_version: str


# ============================================================================
# FastAPI Application
# ============================================================================

app = FastAPI(
    title="Unit-Root Marked Process API",
    description="Simulation of unit-root AR(1) paths, quantile / least-squares estimation and marked empirical processes",
    version=API_VERSION,
    docs_url="/docs",
    redoc_url="/redoc"
)

# ============================================================================
# CORS Middleware
# ============================================================================

app.add_middleware(
    CORSMiddleware,
    allow_origins=Config.CORS_ORIGINS,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


# ============================================================================
# Exception Handlers
# ============================================================================

def _error_response(status_code: int, message: str) -> JSONResponse:
    return JSONResponse(
        status_code=status_code,
        content={
            "success": False,
            "data": None,
            "error": message,
            "timestamp": datetime.now().isoformat()
        }
    )


@app.exception_handler(HTTPException)
async def http_exception_handler(request: Request, exc: HTTPException):
    """Handle HTTP exceptions with standard response format."""
    return _error_response(exc.status_code, exc.detail)


@app.exception_handler(DomainError)
@app.exception_handler(UnidentifiedError)
async def domain_exception_handler(request: Request, exc: ValueError):
    """Parameter and identification problems are client errors."""
    logger.info(f"Rejected request to {request.url.path}: {exc}")
    return _error_response(status.HTTP_400_BAD_REQUEST, str(exc))


@app.exception_handler(NumericalError)
async def numerical_exception_handler(request: Request, exc: NumericalError):
    """Numerical failures keep their message."""
    logger.error(f"Numerical failure on {request.url.path}: {exc}")
    return _error_response(status.HTTP_500_INTERNAL_SERVER_ERROR, str(exc))


@app.exception_handler(Exception)
async def general_exception_handler(request: Request, exc: Exception):
    """Handle general exceptions with standard response format."""
    logger.error(f"Unhandled exception: {str(exc)}", exc_info=True)
    return _error_response(status.HTTP_500_INTERNAL_SERVER_ERROR, "Internal server error occurred")


# ============================================================================
# Helpers
# ============================================================================

def _finite_or_none(value: float) -> Optional[float]:
    return float(value) if math.isfinite(value) else None


def _series_from_request(request: MarkedCurveRequest) -> SeriesSample:
    if request.eps is None:
        return observed_series(request.x, beta=request.beta, spec=request.spec)
    if len(request.eps) != len(request.x) - 1:
        raise DomainError(f"eps must have {len(request.x) - 1} entries, got {len(request.eps)}")
    base = observed_series(request.x, beta=request.beta, spec=request.spec)
    return SeriesSample(
        x=np.array(request.x, dtype=float),
        eps=np.array(request.eps, dtype=float),
        beta_true=request.beta,
        a_n=base.a_n,
        spec=request.spec,
    )


# ============================================================================
# API Endpoints
# ============================================================================

@app.get(
    "/health",
    response_model=APIResponse,
    summary="Health Check",
    description="Check API health and system status"
)
async def health_check():
    """Health check endpoint."""
    health_data = HealthResponse(
        status="healthy",
        environment=Config.ENVIRONMENT,
        version=API_VERSION,
        numpy_version=np.__version__,
    )
    return APIResponse(success=True, data=health_data.model_dump())


@app.post(
    "/simulate",
    response_model=APIResponse,
    summary="Simulate Path",
    description="Draw innovations for a spec and run the AR(1) recursion"
)
def simulate(request: SimulateRequest):
    """
    Simulate one path.

    The (seed, stream_id) pair fixes the draws, so repeated requests return
    identical series.
    """
    stream = NoiseStream(request.seed, request.stream_id)
    series = simulate_series(request.spec, request.n, stream, beta=request.beta, x0=request.x0)
    logger.info(f"Simulated {request.spec.family.value} path (n={series.n}, stream={request.stream_id})")
    return APIResponse(
        success=True,
        data={
            "x": series.x.tolist(),
            "eps": series.eps.tolist(),
            "a_n": series.a_n,
            "beta_true": series.beta_true,
            "seed": request.seed,
            "stream_id": request.stream_id,
            "truncation_tail_mass": series.truncation_tail_mass,
            "max_normalized_level": max_normalized_level(series),
        }
    )


@app.post(
    "/estimate",
    response_model=APIResponse,
    summary="Estimate Beta",
    description="Quantile or least-squares estimate of beta from observations"
)
def estimate_beta(request: EstimateRequest):
    """Estimate beta; scaled errors use beta_true."""
    series = observed_series(request.x, beta=request.beta_true, spec=request.spec)
    result = estimate(series, request.method, request.tau, request.q_tau, request.estimate_intercept)
    data = result.to_dict()
    data["scaled_error"] = _finite_or_none(result.scaled_error)
    data["n"] = series.n
    data["a_n"] = series.a_n
    return APIResponse(success=True, data=data)


@app.post(
    "/marked-curve",
    response_model=APIResponse,
    summary="Marked Empirical Curve",
    description="alpha_n(x) (or the residual version at beta_hat) on a mark grid, with its sup"
)
def marked_curve(request: MarkedCurveRequest):
    """Evaluate the marked empirical process of the posted path."""
    if request.spec is None and request.F_id not in ("normal", "two_point"):
        raise DomainError(f"F_id '{request.F_id}' needs a spec")
    series = _series_from_request(request)
    g = weight_function(request.g_id, request.g_scale)
    F = reference_by_id(request.F_id, request.spec, series.n, **Config.table_options())
    grid = mark_grid(request.A, request.points)

    if request.beta_hat is None:
        curve = marked_empirical(series, g, F, grid, request.norm)
    else:
        curve = residual_marked_empirical(series, request.beta_hat, g, F, grid, request.norm)

    return APIResponse(
        success=True,
        data={
            "kind": curve.kind.value,
            "x_grid": curve.x_grid.tolist(),
            "values": curve.values.tolist(),
            "norm": curve.norm,
            "sup": sup_functional(curve, request.sup_mode),
            "g_id": curve.g_id,
            "F_id": curve.F_id,
            "boundary_bound": curve.boundary_bound,
        }
    )


@app.get(
    "/",
    response_model=APIResponse,
    summary="API Info",
    description="Get API information and available endpoints"
)
async def root():
    """
    Root endpoint with API information.
    """
    return APIResponse(
        success=True,
        data={
            "name": "Unit-Root Marked Process API",
            "version": API_VERSION,
            "endpoints": {
                "health": "/health - Health check",
                "simulate": "/simulate - Simulate a unit-root path",
                "estimate": "/estimate - Quantile / least-squares estimate of beta",
                "marked_curve": "/marked-curve - Marked empirical process on a grid",
                "docs": "/docs - Interactive API documentation",
            },
            "documentation": f"http://{Config.API_HOST}:{Config.API_PORT}/docs"
        }
    )


# ============================================================================
# Run Server
# ============================================================================

def start_server(
    host: str = Config.API_HOST,
    port: int = Config.API_PORT,
    reload: bool = False
):
    """
    Start the FastAPI server.

    Args:
        host: Host to bind to
        port: Port to bind to
        reload: Enable auto-reload on code changes (development only)
    """
    logger.info(f"Starting Unit-Root Marked Process API...")
    logger.info(f"Environment: {Config.ENVIRONMENT}")
    logger.info(f"Debug mode: {Config.DEBUG}")

    uvicorn.run(
        "backend.api:app",
        host=host,
        port=port,
        reload=reload,
        log_level=Config.LOG_LEVEL.lower()
    )


if __name__ == "__main__":
    # Run with auto-reload in development
    start_server(reload=Config.ENVIRONMENT == "development")
