"""
Simulation models: correlation functions, sampling intensities, random field
models and experiment scenarios
"""

from typing import Annotated, List, Literal, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import integrate, stats

from app.models.kernel import KernelSpec
from app.models.psd import TaperWeight

DENSITY_FLOOR = 1e-6


# ---- correlation functions -------------------------------------------------

class MaternCorrelation(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["matern"] = "matern"
    phi: float = Field(..., gt=0)
    kappa: float = Field(..., gt=0)


class Sim3Correlation(BaseModel):
    """0.5 cos(d/60) / (1 + |d|/100) + 0.5 exp(-|d|/800)"""
    model_config = ConfigDict(frozen=True)

    kind: Literal["sim3"] = "sim3"


class TabulatedCorrelation(BaseModel):
    """Monotone cubic interpolation on |delta|; zero beyond the last lag"""
    model_config = ConfigDict(frozen=True)

    kind: Literal["tabulated"] = "tabulated"
    grid: List[float] = Field(..., min_length=2)
    values: List[float] = Field(..., min_length=2)

    @model_validator(mode="after")
    def _valid(self) -> "TabulatedCorrelation":
        grid = np.asarray(self.grid)
        values = np.asarray(self.values)
        if grid.shape != values.shape:
            raise ValueError("tabulated correlation needs one value per lag")
        if grid[0] != 0 or np.any(np.diff(grid) <= 0):
            raise ValueError("tabulated lags must start at 0 and increase strictly")
        if values[0] != 1:
            raise ValueError("tabulated correlation must equal 1 at lag 0")
        if np.any(np.abs(values) > 1):
            raise ValueError("tabulated correlation values must lie in [-1, 1]")
        return self


CorrelationFunctionSpec = Annotated[
    Union[MaternCorrelation, Sim3Correlation, TabulatedCorrelation], Field(discriminator="kind")
]


# ---- intensity densities on [0, 1] ------------------------------------------

class UniformDensity(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["uniform"] = "uniform"


class TruncatedNormalDensity(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["truncated_normal"] = "truncated_normal"
    mu: float = 0.5
    sigma: float = Field(0.2, gt=0)

    @property
    def distribution(self):
        a, b = (0.0 - self.mu) / self.sigma, (1.0 - self.mu) / self.sigma
        return stats.truncnorm(a, b, loc=self.mu, scale=self.sigma)

    @model_validator(mode="after")
    def _floor(self) -> "TruncatedNormalDensity":
        lowest = float(np.min(self.distribution.pdf([0.0, 1.0])))
        if lowest < DENSITY_FLOOR:
            raise ValueError(f"truncated normal density drops to {lowest:g} on [0, 1]")
        return self


class TabulatedDensity(BaseModel):
    """Piecewise-linear density through (grid, values) on [0, 1]"""
    model_config = ConfigDict(frozen=True)

    kind: Literal["tabulated"] = "tabulated"
    grid: List[float] = Field(..., min_length=2)
    values: List[float] = Field(..., min_length=2)

    @model_validator(mode="after")
    def _valid(self) -> "TabulatedDensity":
        grid = np.asarray(self.grid)
        values = np.asarray(self.values)
        if grid.shape != values.shape:
            raise ValueError("tabulated density needs one value per grid point")
        if grid[0] != 0 or grid[-1] != 1 or np.any(np.diff(grid) <= 0):
            raise ValueError("tabulated density grid must increase strictly from 0 to 1")
        if np.any(values < DENSITY_FLOOR):
            raise ValueError(f"tabulated density must stay above {DENSITY_FLOOR:g}")
        total = integrate.trapezoid(values, grid)
        if abs(total - 1.0) > 1e-8:
            raise ValueError(f"tabulated density integrates to {total:.10g}, not 1")
        return self


IntensityDensity = Annotated[
    Union[UniformDensity, TruncatedNormalDensity, TabulatedDensity], Field(discriminator="kind")
]


class PoissonProcess(BaseModel):
    """Unit locations: N ~ Poisson(nu L), S / L i.i.d. with density g"""
    model_config = ConfigDict(frozen=True)

    nu: float = Field(..., gt=0)
    length: float = Field(..., gt=0)
    density: IntensityDensity = Field(default_factory=UniformDensity)

    @classmethod
    def with_expected_count(cls, expected: float, length: float, density=None) -> "PoissonProcess":
        return cls(nu=expected / length, length=length, density=density or UniformDensity())

    @property
    def expected_count(self) -> float:
        return self.nu * self.length


class RandomFieldModel(BaseModel):
    """Separable field: Cov = G(x1, x2) rho(|s - s'|), plus white noise"""
    model_config = ConfigDict(frozen=True)

    G: List[List[float]]
    rho: CorrelationFunctionSpec
    sigma_eps: float = Field(0.0, ge=0)
    process: PoissonProcess

    @field_validator("G")
    @classmethod
    def _symmetric(cls, v):
        g = np.asarray(v, dtype=float)
        if g.ndim != 2 or g.shape[0] != g.shape[1] or g.shape[0] == 0:
            raise ValueError(f"G must be a nonempty square matrix, got shape {g.shape}")
        if not np.allclose(g, g.T, rtol=0, atol=1e-12 * max(1.0, np.abs(g).max())):
            raise ValueError("G must be symmetric")
        return v

    @property
    def G_matrix(self) -> np.ndarray:
        return np.asarray(self.G, dtype=float)

    @property
    def m(self) -> int:
        return len(self.G)


# ---- experiments -------------------------------------------------------------

class ScenarioConfig(BaseModel):
    """A complete simulate-estimate-bootstrap-adjust experiment"""

    name: str = "custom"
    model: RandomFieldModel
    n_subjects: int = Field(..., ge=1)
    subunit_grid: Optional[List[float]] = None  # defaults to (j - 1) / (m - 1)
    kernel: KernelSpec
    delta_max: float = Field(..., gt=0)
    delta_points: int = Field(101, ge=2)
    block_length: Optional[float] = Field(None, gt=0)
    bootstrap_replicates: int = Field(0, ge=0)  # 0 skips the bootstrap
    taper: Optional[TaperWeight] = None
    imse_ranges: List[Tuple[float, float]] = Field(default_factory=list)
    replications: int = Field(1, ge=1)
    seed: int = Field(0, ge=0, lt=2 ** 64)
    # per-subject unit locations held fixed across replications
    fixed_locations: Optional[List[List[float]]] = None

    @model_validator(mode="after")
    def _consistent(self) -> "ScenarioConfig":
        if self.subunit_grid is not None and len(self.subunit_grid) != self.model.m:
            raise ValueError("subunit grid length must match G")
        if self.bootstrap_replicates == 1:
            raise ValueError("the bootstrap needs at least 2 replicates")
        for lo, hi in self.imse_ranges:
            if not 0 <= lo < hi <= self.delta_max:
                raise ValueError(f"IMSE range [{lo:g}, {hi:g}] outside [0, {self.delta_max:g}]")
        if self.fixed_locations is not None:
            if len(self.fixed_locations) != self.n_subjects:
                raise ValueError(
                    f"{len(self.fixed_locations)} location lists for {self.n_subjects} subjects"
                )
            length = self.model.process.length
            for r, locations in enumerate(self.fixed_locations):
                s = np.asarray(locations, dtype=float)
                if s.size == 0 or not np.all(np.isfinite(s)) or s.min() < 0 or s.max() > length:
                    raise ValueError(f"subject {r + 1}: fixed locations must be nonempty and inside [0, {length:g}]")
                if np.unique(s).size != s.size:
                    raise ValueError(f"subject {r + 1}: fixed locations must be distinct")
        return self

    @property
    def delta_grid(self) -> np.ndarray:
        return np.linspace(0.0, self.delta_max, self.delta_points)

    @property
    def grid(self) -> np.ndarray:
        if self.subunit_grid is not None:
            return np.asarray(self.subunit_grid, dtype=float)
        m = self.model.m
        return np.array([0.5]) if m == 1 else np.linspace(0.0, 1.0, m)


class ReplicateOutcome(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    index: int
    rho: np.ndarray
    adjusted: np.ndarray
    bootstrap_sd: Optional[np.ndarray] = None
    imse_rho: List[float]
    imse_adjusted: List[float]


class ExperimentReport(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    scenario: str
    delta_grid: np.ndarray
    truth: np.ndarray
    mean: np.ndarray
    p05: np.ndarray
    p95: np.ndarray
    empirical_sd: np.ndarray
    mean_adjusted: np.ndarray
    mean_bootstrap_sd: Optional[np.ndarray] = None
    imse_ranges: List[Tuple[float, float]]
    imse_rho: List[float]  # mean over replications, one per range
    imse_adjusted: List[float]
    adjusted_better: List[float]  # share of replications with a smaller adjusted IMSE
    replications: int

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({
            "delta": self.delta_grid,
            "truth": self.truth,
            "mean": self.mean,
            "p05": self.p05,
            "p95": self.p95,
            "empirical_sd": self.empirical_sd,
            "mean_adjusted": self.mean_adjusted,
        })
        if self.mean_bootstrap_sd is not None:
            frame["mean_bootstrap_sd"] = self.mean_bootstrap_sd
        return frame

    def summary(self) -> dict:
        return {
            "scenario": self.scenario,
            "replications": self.replications,
            "imse": [
                {
                    "range": [lo, hi],
                    "rho": a,
                    "rho_adjusted": b,
                    "adjusted_better_share": c,
                    "ratio": (b / a) if a > 0 else None,
                }
                for (lo, hi), a, b, c in zip(
                    self.imse_ranges, self.imse_rho, self.imse_adjusted, self.adjusted_better
                )
            ],
        }
