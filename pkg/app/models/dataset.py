"""
Hierarchical data models: subjects, units and the subunit grid
"""

from typing import List

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


def _frozen_array(value, ndim: int) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.size == 0:
        arr = arr.reshape((0,) * ndim if ndim == 1 else (0, 0))
    if arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-dimensional array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


class Subject(BaseModel):
    """One independent replicate: unit locations S_ri and responses Y_rij"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    id: str
    unit_locations: np.ndarray
    responses: np.ndarray
    # Left end of the subject's observation window; blocks cut by the
    # bootstrap keep their absolute locations and record the window here.
    origin: float = 0.0

    @field_validator("unit_locations", mode="before")
    @classmethod
    def _locations(cls, v):
        return _frozen_array(v, 1)

    @field_validator("responses", mode="before")
    @classmethod
    def _responses(cls, v):
        return _frozen_array(v, 2)

    @model_validator(mode="after")
    def _consistent(self) -> "Subject":
        locations = self.unit_locations
        if not np.all(np.isfinite(locations)):
            raise ValueError(f"subject {self.id}: unit locations must be finite")
        if not np.all(np.isfinite(self.responses)):
            raise ValueError(f"subject {self.id}: responses must be finite")
        if len(np.unique(locations)) != len(locations):
            raise ValueError(f"subject {self.id}: duplicate unit locations")
        if locations.size and self.responses.shape[0] != locations.size:
            raise ValueError(
                f"subject {self.id}: {self.responses.shape[0]} response rows "
                f"for {locations.size} units"
            )
        return self

    @property
    def n_units(self) -> int:
        return int(self.unit_locations.size)


class Dataset(BaseModel):
    """All subjects over a common subunit grid on [0, 1]"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    subjects: List[Subject]
    subunit_grid: np.ndarray
    # Window length L; h, delta, L and L* all share this distance unit.
    domain_length: float = Field(..., gt=0)

    @field_validator("subunit_grid", mode="before")
    @classmethod
    def _grid(cls, v):
        return _frozen_array(v, 1)

    @model_validator(mode="after")
    def _consistent(self) -> "Dataset":
        grid = self.subunit_grid
        if grid.size == 0:
            raise ValueError("subunit grid must not be empty")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("subunit grid must be strictly increasing")
        if grid[0] < 0 or grid[-1] > 1:
            raise ValueError("subunit grid must lie in [0, 1]")
        m = grid.size
        length = self.domain_length
        for subject in self.subjects:
            if subject.n_units == 0:
                if subject.responses.size:
                    raise ValueError(f"subject {subject.id}: responses without units")
                continue
            if subject.responses.shape != (subject.n_units, m):
                raise ValueError(
                    f"subject {subject.id}: response matrix {subject.responses.shape} "
                    f"does not match ({subject.n_units}, {m})"
                )
            lo, hi = subject.origin, subject.origin + length
            locations = subject.unit_locations
            if locations.min() < lo or locations.max() > hi:
                raise ValueError(
                    f"subject {subject.id}: unit locations outside [{lo:g}, {hi:g}]"
                )
        return self

    @property
    def m(self) -> int:
        return int(self.subunit_grid.size)

    @property
    def n_subjects(self) -> int:
        return len(self.subjects)

    @property
    def total_units(self) -> int:
        return sum(subject.n_units for subject in self.subjects)

    def responses_of(self, index: int) -> np.ndarray:
        """Response matrix of a subject, shaped (N_r, m) even when empty"""
        subject = self.subjects[index]
        if subject.n_units == 0:
            return np.zeros((0, self.m))
        return subject.responses


class ResidualSet(BaseModel):
    """Per-subject centered residuals e_rij = Y_rij - mean_i(Y_rij)"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    dataset: Dataset
    residuals: List[np.ndarray]
    means: List[np.ndarray]

    @property
    def m(self) -> int:
        return self.dataset.m
