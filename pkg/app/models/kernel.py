"""
Kernel and bandwidth models
"""

from enum import Enum
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field


class KernelFamily(str, Enum):
    """Symmetric densities supported on [-1, 1]"""
    EPANECHNIKOV = "epanechnikov"
    QUARTIC = "quartic"
    TRIANGULAR = "triangular"


class GlobalBandwidth(BaseModel):
    """One bandwidth for every lag"""
    model_config = ConfigDict(frozen=True)

    kind: Literal["global"] = "global"
    h: float = Field(..., gt=0)


class TwoRegimeBandwidth(BaseModel):
    """h_near for |delta| <= split_delta, h_far beyond (hard switch)"""
    model_config = ConfigDict(frozen=True)

    kind: Literal["two_regime"] = "two_regime"
    h_near: float = Field(..., gt=0)
    h_far: float = Field(..., gt=0)
    split_delta: float = Field(..., gt=0)


BandwidthPolicy = Annotated[
    Union[GlobalBandwidth, TwoRegimeBandwidth], Field(discriminator="kind")
]


class KernelSpec(BaseModel):
    """Kernel family plus bandwidth policy"""
    model_config = ConfigDict(frozen=True)

    family: KernelFamily = KernelFamily.EPANECHNIKOV
    bandwidth: BandwidthPolicy

    @classmethod
    def global_h(cls, h: float, family: KernelFamily = KernelFamily.EPANECHNIKOV) -> "KernelSpec":
        return cls(family=family, bandwidth=GlobalBandwidth(h=h))

    @classmethod
    def two_regime(
        cls,
        h_near: float,
        h_far: float,
        split_delta: float,
        family: KernelFamily = KernelFamily.EPANECHNIKOV,
    ) -> "KernelSpec":
        return cls(
            family=family,
            bandwidth=TwoRegimeBandwidth(h_near=h_near, h_far=h_far, split_delta=split_delta),
        )

    def bandwidth_at(self, delta: float) -> float:
        policy = self.bandwidth
        if isinstance(policy, GlobalBandwidth):
            return policy.h
        return policy.h_near if abs(delta) <= policy.split_delta else policy.h_far

    def bandwidths_at(self, deltas: np.ndarray) -> np.ndarray:
        deltas = np.asarray(deltas, dtype=float)
        policy = self.bandwidth
        if isinstance(policy, GlobalBandwidth):
            return np.full(deltas.shape, policy.h)
        return np.where(np.abs(deltas) <= policy.split_delta, policy.h_near, policy.h_far)

    @property
    def max_bandwidth(self) -> float:
        policy = self.bandwidth
        if isinstance(policy, GlobalBandwidth):
            return policy.h
        return max(policy.h_near, policy.h_far)

    def describe(self) -> dict:
        return self.model_dump(mode="json")
