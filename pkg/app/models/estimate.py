"""
Estimate models: covariance surfaces and correlation curves
"""

from typing import Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict


class CovarianceSurface(BaseModel):
    """Symmetrized covariance on a lag grid, values[d, j, l]"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    delta_grid: np.ndarray
    values: np.ndarray
    effective_weight: np.ndarray

    @property
    def missing(self) -> np.ndarray:
        """Grid points without any pair inside the bandwidth"""
        return ~np.isfinite(self.values.reshape(len(self.delta_grid), -1)).all(axis=1)

    def to_frame(self, subunit_grid: np.ndarray) -> pd.DataFrame:
        m = len(subunit_grid)
        d_idx, j_idx, l_idx = np.meshgrid(
            np.arange(len(self.delta_grid)), np.arange(m), np.arange(m), indexing="ij"
        )
        return pd.DataFrame({
            "delta": self.delta_grid[d_idx.ravel()],
            "x1": subunit_grid[j_idx.ravel()],
            "x2": subunit_grid[l_idx.ravel()],
            "covariance": self.values.ravel(),
            "weight": self.effective_weight[d_idx.ravel()],
        })


class CorrelationCurve(BaseModel):
    """rho-hat on a lag grid with G-hat and optional sd band / adjusted curve"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    delta_grid: np.ndarray
    rho: np.ndarray
    g_hat: np.ndarray
    sd: Optional[np.ndarray] = None
    adjusted: Optional[np.ndarray] = None

    @property
    def adjusted_normalized(self) -> Optional[np.ndarray]:
        if self.adjusted is None or self.adjusted[0] == 0:
            return None
        return self.adjusted / self.adjusted[0]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"delta": self.delta_grid, "rho": self.rho})
        if self.sd is not None:
            frame["sd"] = self.sd
            frame["lower"] = self.rho - 2.0 * self.sd
            frame["upper"] = self.rho + 2.0 * self.sd
        if self.adjusted is not None:
            frame["rho_adjusted"] = self.adjusted
            normalized = self.adjusted_normalized
            if normalized is not None:
                frame["rho_adjusted_normalized"] = normalized
        return frame

    def to_dict(self) -> dict:
        def _list(values):
            return None if values is None else [None if not np.isfinite(v) else float(v) for v in values]

        return {
            "delta": _list(self.delta_grid),
            "rho": _list(self.rho),
            "g_hat": [_list(row) for row in self.g_hat],
            "sd": _list(self.sd),
            "rho_adjusted": _list(self.adjusted),
            "rho_adjusted_normalized": _list(self.adjusted_normalized),
        }
