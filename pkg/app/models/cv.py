"""
Cross-validation models
"""

from enum import Enum
from typing import List, Optional

import pandas as pd
from pydantic import BaseModel, Field, field_validator, model_validator


class CvCriterion(str, Enum):
    """CV1 predicts with V-tilde, CV2 with the separable product G-hat * rho-hat"""
    CV1 = "cv1"
    CV2 = "cv2"


def _positive_sorted(values: Optional[List[float]]) -> Optional[List[float]]:
    if values is None:
        return None
    if not values:
        raise ValueError("candidate list must not be empty")
    if any(v <= 0 for v in values):
        raise ValueError("candidate bandwidths must be positive")
    return sorted(set(float(v) for v in values))


class CvConfig(BaseModel):
    """Leave-one-subject-out settings"""
    delta_cap: float = Field(..., gt=0)  # only pairs with |lag| < delta_cap are scored
    candidate_bandwidths: Optional[List[float]] = None
    candidates_near: Optional[List[float]] = None
    candidates_far: Optional[List[float]] = None
    split_delta: Optional[float] = Field(None, gt=0)
    criterion: CvCriterion = CvCriterion.CV2

    @field_validator("candidate_bandwidths", "candidates_near", "candidates_far")
    @classmethod
    def _candidates(cls, v):
        return _positive_sorted(v)

    @model_validator(mode="after")
    def _paired_lists(self) -> "CvConfig":
        if (self.candidates_near is None) != (self.candidates_far is None):
            raise ValueError("candidates_near and candidates_far must be given together")
        return self

    @property
    def two_regime(self) -> bool:
        return self.split_delta is not None


class CvScore(BaseModel):
    """Score of one candidate; h_far is set only for two-regime candidates"""
    h: float
    h_far: Optional[float] = None
    score: float
    terms: int
    skipped: int
    reliable: bool

    @property
    def empty(self) -> bool:
        return self.terms == 0

    @property
    def skip_fraction(self) -> float:
        total = self.terms + self.skipped
        return self.skipped / total if total else 0.0


class CvReport(BaseModel):
    criterion: CvCriterion
    delta_cap: float
    split_delta: Optional[float] = None
    scores: List[CvScore]
    best: CvScore

    @property
    def min_score(self) -> float:
        return self.best.score

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for s in self.scores:
            row = {"h": s.h} if s.h_far is None else {"h_near": s.h, "h_far": s.h_far}
            row.update(
                score=s.score,
                terms=s.terms,
                skipped=s.skipped,
                skip_fraction=s.skip_fraction,
                reliable=s.reliable,
                selected=(s.h == self.best.h and s.h_far == self.best.h_far),
            )
            rows.append(row)
        return pd.DataFrame(rows)
