"""
Block bootstrap models
"""

from typing import List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field


class BootstrapConfig(BaseModel):
    """Weighted block bootstrap settings; block_length shares the data's distance unit"""
    block_length: float = Field(..., gt=0)
    replicates: int = Field(..., ge=2)
    seed: int = Field(..., ge=0, lt=2 ** 64)
    delta_grid: List[float] = Field(..., min_length=1)
    # Test hook: draw subjects without replacement (a permutation)
    distinct_subjects: bool = False


class ReplicateDiagnostics(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    index: int
    subject_ids: List[str]
    block_starts: List[float]
    weight: np.ndarray  # A*_b on the delta grid
    rho: np.ndarray  # rho-hat*_b, NaN where undefined
    failure: Optional[str] = None


class BootstrapReport(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    delta_grid: np.ndarray
    sd: np.ndarray  # NaN where fewer than 2 replicates are usable
    usable: np.ndarray
    full_weight: np.ndarray  # A on the delta grid from the full data
    replicates: List[ReplicateDiagnostics]

    @property
    def skipped(self) -> np.ndarray:
        """Replicates excluded at each grid point"""
        return len(self.replicates) - self.usable

    @property
    def undefined(self) -> np.ndarray:
        return self.usable < 2

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "delta": self.delta_grid,
            "sd": self.sd,
            "usable_replicates": self.usable,
        })

    def to_dict(self) -> dict:
        def _list(values):
            return [None if not np.isfinite(v) else float(v) for v in values]

        return {
            "delta": _list(self.delta_grid),
            "sd": _list(self.sd),
            "usable_replicates": [int(u) for u in self.usable],
            "full_weight": _list(self.full_weight),
            "replicates": [
                {
                    "index": d.index,
                    "subject_ids": d.subject_ids,
                    "block_starts": d.block_starts,
                    "weight": _list(d.weight),
                    "rho": _list(d.rho),
                    "failure": d.failure,
                }
                for d in self.replicates
            ],
        }
