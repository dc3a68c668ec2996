"""
API v1 router - estimation endpoints mirroring the CLI commands

Handlers are plain ``def``: the work is CPU-bound NumPy with no awaits, so FastAPI runs
each request in its threadpool instead of blocking the event loop.
"""

import logging
from typing import List, Optional, Tuple

import numpy as np
from fastapi import APIRouter, HTTPException
from pydantic import BaseModel, Field, ValidationError

from app.core.errors import ConfigError, EstimationError
from app.core.kernels import kernel_moments
from app.models.kernel import KernelFamily, KernelSpec
from app.models.psd import TransformGrid
from app.models.run import InputRecord, RunConfig
from app.models.simulation import CorrelationFunctionSpec, ScenarioConfig
from app.services.analysis import get_analysis_service
from app.services.correlation_models import fit_matern, spectral_density
from app.services.ingest import dataset_from_records
from app.services.simulation import get_simulation_service

logger = logging.getLogger(__name__)

api_router = APIRouter()


class DataRequest(BaseModel):
    """Records in the CSV layout plus run options"""
    records: List[InputRecord] = Field(..., min_length=1)
    config: RunConfig = Field(default_factory=RunConfig)


class EstimateRequest(DataRequest):
    surface: bool = False


class CurveRequest(BaseModel):
    delta: List[float] = Field(..., min_length=2)
    rho: List[float] = Field(..., min_length=2)
    config: RunConfig = Field(default_factory=RunConfig)


class MaternFitRequest(BaseModel):
    delta: List[float] = Field(..., min_length=2)
    rho: List[float] = Field(..., min_length=2)
    bounds: Optional[Tuple[Tuple[float, float], Tuple[float, float]]] = None


class SpectralDensityRequest(BaseModel):
    """A correlation model tabulated on [0, delta_max]; theta defaults to the DCT-I grid"""
    correlation: CorrelationFunctionSpec
    delta_step: float = Field(..., gt=0)
    delta_max: float = Field(..., gt=0)
    theta_step: Optional[float] = Field(None, gt=0)
    theta_max: Optional[float] = Field(None, gt=0)

    def grid(self) -> TransformGrid:
        grid = TransformGrid.for_lags(self.delta_step, self.delta_max)
        if self.theta_step is None and self.theta_max is None:
            return grid
        return TransformGrid(
            delta_step=self.delta_step,
            delta_max=self.delta_max,
            theta_step=self.theta_step or grid.theta_step,
            theta_max=self.theta_max or grid.theta_max,
        )


class SimulateRequest(BaseModel):
    """A preset name or a full scenario; the seed is always explicit"""
    seed: int = Field(..., ge=0, lt=2 ** 64)
    preset: Optional[str] = None
    scenario: Optional[ScenarioConfig] = None
    replications: Optional[int] = Field(None, ge=1)


def _values(array) -> list:
    """JSON-safe nested lists; NaN becomes null"""
    array = np.asarray(array, dtype=float)
    if array.ndim == 0:
        return None if not np.isfinite(array) else float(array)
    return [_values(a) for a in array] if array.ndim > 1 else [
        None if not np.isfinite(v) else float(v) for v in array
    ]


def _unprocessable(e: Exception, action: str) -> HTTPException:
    logger.warning(f"{action} rejected: {e}")
    if isinstance(e, EstimationError):
        return HTTPException(status_code=422, detail=e.to_dict())
    return HTTPException(status_code=422, detail={"code": "validation", "detail": str(e)})


@api_router.get("/kernels/{family}")
def get_kernel(family: KernelFamily):
    """Moments of a kernel family"""
    sigma_k2, r_k = kernel_moments(KernelSpec.global_h(1.0, family))
    return {"family": family.value, "sigma_K_sq": sigma_k2, "R_K": r_k}


@api_router.post("/estimate")
def estimate(request: EstimateRequest):
    """rho-hat and G-hat on a lag grid, optionally the covariance surface"""
    try:
        service = get_analysis_service()
        data = dataset_from_records(request.records, request.config.domain_length)
        curve, surface = service.estimate(data, request.config, surface=request.surface)
        body = curve.to_dict()
        body["kernel"] = service.kernel(request.config).describe()
        if surface is not None:
            body["surface"] = _values(surface.values)
            body["effective_weight"] = _values(surface.effective_weight)
        return body
    except (EstimationError, ValidationError) as e:
        raise _unprocessable(e, "estimate")
    except HTTPException:
        raise
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Failed to estimate: {str(e)}")


@api_router.post("/cv")
def cross_validate(request: DataRequest):
    """Leave-one-subject-out bandwidth selection"""
    try:
        data = dataset_from_records(request.records, request.config.domain_length)
        report = get_analysis_service().cross_validate(data, request.config)
        return {
            "criterion": report.criterion.value,
            "best": report.best.model_dump(),
            "scores": [s.model_dump() for s in report.scores],
        }
    except (EstimationError, ValidationError) as e:
        raise _unprocessable(e, "cv")
    except HTTPException:
        raise
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Failed to cross-validate: {str(e)}")


@api_router.post("/bootstrap")
def bootstrap(request: DataRequest):
    """Block bootstrap standard errors; config.seed is required"""
    try:
        data = dataset_from_records(request.records, request.config.domain_length)
        curve, report = get_analysis_service().bootstrap(data, request.config)
        body = report.to_dict()
        body["rho"] = _values(curve.rho)
        return body
    except (EstimationError, ValidationError) as e:
        raise _unprocessable(e, "bootstrap")
    except HTTPException:
        raise
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Failed to bootstrap: {str(e)}")


@api_router.post("/adjust")
def adjust(request: CurveRequest):
    """Positive semidefinite adjustment of a tabulated curve"""
    try:
        adjusted = get_analysis_service().adjust(request.delta, request.rho, request.config)
        return {
            "delta": _values(adjusted.delta_grid),
            "rho_adjusted": _values(adjusted.adjusted),
            "rho_adjusted_normalized": _values(adjusted.normalized) if adjusted.adjusted[0] != 0 else None,
            "theta": _values(adjusted.theta_grid),
            "spectrum": _values(adjusted.spectrum),
        }
    except (EstimationError, ValidationError) as e:
        raise _unprocessable(e, "adjust")
    except HTTPException:
        raise
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Failed to adjust: {str(e)}")


@api_router.post("/simulate")
def simulate(request: SimulateRequest):
    """Run a preset or custom simulation scenario"""
    try:
        service = get_simulation_service()
        if request.scenario is not None:
            scenario = request.scenario.model_copy(update={"seed": request.seed})
            if request.replications is not None:
                scenario = scenario.model_copy(update={"replications": request.replications})
        elif request.preset is not None:
            scenario = service.scenario(request.preset, request.replications, request.seed)
        else:
            raise ConfigError("give a preset name or a scenario")
        report = service.run(scenario, workers=1)
        body = report.summary()
        body["curves"] = {column: _values(values) for column, values in report.to_frame().items()}
        return body
    except (EstimationError, ValidationError) as e:
        raise _unprocessable(e, "simulate")
    except HTTPException:
        raise
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Failed to simulate: {str(e)}")


@api_router.post("/matern-fit")
def matern_fit(request: MaternFitRequest):
    """Least-squares Matern approximation of a correlation curve"""
    try:
        if len(request.delta) != len(request.rho):
            raise ConfigError("delta and rho must have the same length")
        return fit_matern(request.delta, request.rho, request.bounds).model_dump()
    except (EstimationError, ValidationError) as e:
        raise _unprocessable(e, "matern-fit")
    except HTTPException:
        raise
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Failed to fit Matern curve: {str(e)}")


@api_router.post("/spectral-density")
def model_spectral_density(request: SpectralDensityRequest):
    """Cosine transform of a correlation model, for comparison with an adjusted spectrum"""
    try:
        theta, spectrum = spectral_density(request.correlation, request.grid())
        return {"theta": _values(theta), "spectrum": _values(spectrum)}
    except (EstimationError, ValidationError) as e:
        raise _unprocessable(e, "spectral-density")
    except HTTPException:
        raise
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Failed to transform correlation model: {str(e)}")
