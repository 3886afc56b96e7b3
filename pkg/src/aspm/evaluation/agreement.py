"""Predicted-vs-actual AHI agreement: Pearson r, OLS bands, Bland-Altman."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

NAN = float("nan")


@dataclass(frozen=True)
class AgreementStats:
    n: int
    pearson_r: float
    ols_slope: float          # actual = intercept + slope * predicted
    ols_intercept: float
    residual_sd: float
    x_mean: float
    sxx: float
    t_quantile: float
    ba_bias: float            # mean(predicted - actual)
    ba_sd: float
    ba_loa_low: float
    ba_loa_high: float

    def fitted(self, x) -> np.ndarray:
        return self.ols_intercept + self.ols_slope * np.asarray(x, dtype=np.float64)

    def confidence_half_width(self, x) -> np.ndarray:
        """95% band for the mean response at ``x``."""
        x = np.asarray(x, dtype=np.float64)
        return self.t_quantile * self.residual_sd * np.sqrt(1.0 / self.n + (x - self.x_mean) ** 2 / self.sxx)

    def prediction_half_width(self, x) -> np.ndarray:
        """95% band for an individual response at ``x``."""
        x = np.asarray(x, dtype=np.float64)
        return self.t_quantile * self.residual_sd * np.sqrt(1.0 + 1.0 / self.n + (x - self.x_mean) ** 2 / self.sxx)


def agreement(actual, predicted, level: float = 0.95, loa_z: float = 1.96) -> AgreementStats:
    """Regress ``actual`` on ``predicted`` and compute Bland-Altman limits.

    Undefined quantities (zero variance in either input) come back as NaN.
    """
    a = np.asarray(actual, dtype=np.float64)
    p = np.asarray(predicted, dtype=np.float64)
    n = a.size
    if n < 3 or p.size != n:
        raise ValueError("agreement needs at least 3 paired values")
    pm, am = p.mean(), a.mean()
    sxx = float(np.sum((p - pm) ** 2))
    syy = float(np.sum((a - am) ** 2))
    sxy = float(np.sum((p - pm) * (a - am)))
    r = sxy / np.sqrt(sxx * syy) if sxx > 0 and syy > 0 else NAN
    if not np.isnan(r):
        r = float(np.clip(r, -1.0, 1.0))
    if sxx > 0:
        slope = sxy / sxx
        intercept = am - slope * pm
        resid = a - (intercept + slope * p)
        s = float(np.sqrt(np.sum(resid**2) / (n - 2)))
    else:
        slope = intercept = s = NAN
    diff = p - a
    bias = float(diff.mean())
    sd = float(diff.std(ddof=1))
    return AgreementStats(
        n=n, pearson_r=r, ols_slope=slope, ols_intercept=intercept, residual_sd=s,
        x_mean=float(pm), sxx=sxx, t_quantile=float(stats.t.ppf(0.5 + level / 2.0, n - 2)),
        ba_bias=bias, ba_sd=sd, ba_loa_low=bias - loa_z * sd, ba_loa_high=bias + loa_z * sd,
    )
