"""Surplus vs spatial-organisation regression."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from ..metrics.equilibrium import InsufficientDataError

# full-scale reference values, reported next to desk-scale results for context
REFERENCE = {"slope": 2.34, "intercept": 3.18, "r": 0.53}


@dataclass
class RegressionResult:
    slope: float
    intercept: float
    r: float
    p_value: float
    n: int

    def to_dict(self) -> dict:
        return {**self.__dict__, "reference_full_scale": REFERENCE}


def lambda_regression(x, y) -> RegressionResult:
    """OLS of y on x, Pearson r and two-sided p from t = r sqrt((n-2)/(1-r^2))."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = np.isfinite(x) & np.isfinite(y)
    x, y = x[ok], y[ok]
    if len(x) < 3:
        raise InsufficientDataError(f"need at least 3 points, got {len(x)}")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise InsufficientDataError("a constant variable has no defined correlation")
    fit = stats.linregress(x, y)
    return RegressionResult(float(fit.slope), float(fit.intercept), float(fit.rvalue), float(fit.pvalue), len(x))
