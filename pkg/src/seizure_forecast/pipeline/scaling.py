"""Median/IQR scaling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError


@dataclass(frozen=True)
class RobustScale:
    median: float
    iqr: float
    degenerate: bool = False

    def apply(self, values: np.ndarray) -> np.ndarray:
        centred = np.asarray(values, dtype=np.float64) - self.median
        return centred if self.degenerate else centred / self.iqr


def fit_robust_scale(values) -> RobustScale:
    """Median and Q3 - Q1, using linear interpolation between order statistics.

    NaN entries are ignored.  A zero IQR yields a degenerate scale that only
    centres the data.
    """
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    v = v[np.isfinite(v)]
    if len(v) < 4:
        raise ContractError(f"robust scaling needs at least 4 values, got {len(v)}")
    q1, med, q3 = np.percentile(v, [25.0, 50.0, 75.0], method="linear")
    iqr = float(q3 - q1)
    return RobustScale(float(med), iqr, degenerate=iqr == 0.0)


def robust_scale(values) -> tuple[np.ndarray, RobustScale]:
    """Return ``((values - median) / IQR, fitted scale)``."""
    scale = fit_robust_scale(values)
    return scale.apply(values), scale
