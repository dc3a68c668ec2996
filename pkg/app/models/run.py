"""
Run configuration, input records and manifests
"""

from typing import List, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from app.models.cv import CvCriterion
from app.models.kernel import KernelFamily, KernelSpec
from app.models.psd import TaperWeight

SCHEMA_VERSION = 1


class InputRecord(BaseModel):
    """One response: subject, unit location, subunit location, value"""
    subject_id: str = Field(..., min_length=1)
    unit_location: float
    subunit: float = Field(..., ge=0, le=1)
    response: float


class RunConfig(BaseModel):
    """Options shared by the CLI (--config JSON plus flags) and the HTTP API"""
    schema_version: int = SCHEMA_VERSION
    kernel_family: KernelFamily = KernelFamily.EPANECHNIKOV
    bandwidth: Optional[float] = Field(None, gt=0)
    bandwidth_near: Optional[float] = Field(None, gt=0)
    bandwidth_far: Optional[float] = Field(None, gt=0)
    split: Optional[float] = Field(None, gt=0)
    delta_max: Optional[float] = Field(None, gt=0)
    delta_points: Optional[int] = Field(None, ge=2)
    delta0: Optional[float] = Field(None, gt=0)
    criterion: CvCriterion = CvCriterion.CV2
    candidates: Optional[List[float]] = None
    candidates_near: Optional[List[float]] = None
    candidates_far: Optional[List[float]] = None
    block_length: Optional[float] = Field(None, gt=0)
    replicates: Optional[int] = Field(None, ge=2)
    seed: Optional[int] = Field(None, ge=0, lt=2 ** 64)
    taper: Optional[TaperWeight] = None
    domain_length: Optional[float] = Field(None, gt=0)
    workers: Optional[int] = Field(None, ge=1)
    scenario: Optional[str] = None
    replications: Optional[int] = Field(None, ge=1)

    @field_validator("schema_version")
    @classmethod
    def _known_version(cls, v):
        if v != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {v}; expected {SCHEMA_VERSION}")
        return v

    @model_validator(mode="after")
    def _one_bandwidth_policy(self) -> "RunConfig":
        # split alone selects two-regime cross-validation
        if self.bandwidth_near is not None or self.bandwidth_far is not None:
            if None in (self.bandwidth_near, self.bandwidth_far, self.split):
                raise ValueError("two-regime bandwidth needs bandwidth_near, bandwidth_far and split")
            if self.bandwidth is not None:
                raise ValueError("give either bandwidth or the two-regime bandwidths, not both")
        return self

    def kernel(self) -> Optional[KernelSpec]:
        if self.bandwidth is not None:
            return KernelSpec.global_h(self.bandwidth, self.kernel_family)
        if self.bandwidth_near is not None:
            return KernelSpec.two_regime(
                self.bandwidth_near, self.bandwidth_far, self.split, self.kernel_family
            )
        return None

    def merged(self, overrides: dict) -> "RunConfig":
        """Copy with non-None overrides applied and re-validated"""
        data = self.model_dump()
        data.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig.model_validate(data)


class RunManifest(BaseModel):
    command: str
    config_hash: str
    seed: Optional[int] = None
    library_version: str
    input_digest: Optional[str] = None
    scenario_hash: Optional[str] = None  # resolved simulation scenarios
    kernel: Optional[dict] = None
    outputs: List[str] = Field(default_factory=list)
