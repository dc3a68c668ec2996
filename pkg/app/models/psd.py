"""
Positive semidefinite adjustment models: taper weights, transform grids and
adjusted curves
"""

import math
from typing import Annotated, Literal, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator


class NoTaper(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["none"] = "none"


class IndicatorTaper(BaseModel):
    """w(delta) = 1 for |delta| <= d, else 0"""
    model_config = ConfigDict(frozen=True)

    kind: Literal["w1"] = "w1"
    d: float = Field(..., gt=0)


class LinearTaper(BaseModel):
    """1 below d1, linear down to 0 at d2, 0 beyond"""
    model_config = ConfigDict(frozen=True)

    kind: Literal["w2"] = "w2"
    d1: float = Field(..., gt=0)
    d2: float = Field(..., gt=0)

    @model_validator(mode="after")
    def _ordered(self) -> "LinearTaper":
        if self.d1 > self.d2:
            raise ValueError(f"taper needs d1 <= d2, got {self.d1:g} > {self.d2:g}")
        return self


TaperWeight = Annotated[Union[NoTaper, IndicatorTaper, LinearTaper], Field(discriminator="kind")]


class TransformGrid(BaseModel):
    """
    Uniform lag grid [0, delta_max] and frequency grid [0, theta_max].

    theta_max * delta_step may reach pi, the Nyquist limit of the lag grid, rather than
    stopping at pi / 4. With theta_step = pi / delta_max and theta_max = pi / delta_step
    the forward and inverse trapezoid sums are an exact DCT-I pair, so a curve whose
    spectrum is already nonnegative comes back unchanged. A tighter theta_max drops the
    upper frequencies and smooths rho-tilde even when nothing was clipped.
    """
    model_config = ConfigDict(frozen=True)

    delta_step: float = Field(..., gt=0)
    delta_max: float = Field(..., gt=0)
    theta_step: float = Field(..., gt=0)
    theta_max: float = Field(..., gt=0)

    @model_validator(mode="after")
    def _resolved(self) -> "TransformGrid":
        # frequencies beyond pi / delta_step alias on the lag grid
        if self.theta_max * self.delta_step > math.pi * (1 + 1e-9):
            raise ValueError(
                f"theta_max * delta_step = {self.theta_max * self.delta_step:g} exceeds pi"
            )
        return self

    @classmethod
    def for_lags(cls, delta_step: float, delta_max: float) -> "TransformGrid":
        """theta_max = pi / delta_step and theta_step = pi / delta_max"""
        return cls(
            delta_step=delta_step,
            delta_max=delta_max,
            theta_step=math.pi / delta_max,
            theta_max=math.pi / delta_step,
        )

    @property
    def delta_points(self) -> np.ndarray:
        n = int(round(self.delta_max / self.delta_step))
        return np.arange(n + 1) * self.delta_step

    @property
    def theta_points(self) -> np.ndarray:
        n = int(math.floor(self.theta_max / self.theta_step + 1e-9))
        return np.arange(n + 1) * self.theta_step


class AdjustedCurve(BaseModel):
    """rho-tilde on the lag grid together with the spectrum it came from"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    delta_grid: np.ndarray
    input_rho: np.ndarray
    adjusted: np.ndarray
    theta_grid: np.ndarray
    spectrum: np.ndarray  # forward transform before clipping
    theta_weights: np.ndarray  # trapezoid weights of the inverse transform

    @property
    def clipped_spectrum(self) -> np.ndarray:
        return np.maximum(self.spectrum, 0.0)

    @property
    def normalized(self) -> np.ndarray:
        return self.adjusted / self.adjusted[0]

    @property
    def negative_mass(self) -> float:
        """Share of |spectrum| removed by clipping"""
        total = np.abs(self.spectrum).sum()
        return float(-self.spectrum[self.spectrum < 0].sum() / total) if total else 0.0

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({
            "delta": self.delta_grid,
            "rho": self.input_rho,
            "rho_adjusted": self.adjusted,
        })
        if self.adjusted[0] != 0:
            frame["rho_adjusted_normalized"] = self.normalized
        return frame

    def spectrum_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"theta": self.theta_grid, "spectrum": self.spectrum})
