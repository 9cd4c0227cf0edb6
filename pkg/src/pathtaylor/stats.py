"""Small estimators shared by tests and the experiment harness."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# errors at or below this level count as exact (rounding only)
EXACT_FLOOR = 1e-12


@dataclass(frozen=True)
class RefinementOrder:
    coarse: float
    fine: float
    factor: int
    order: float | None
    exact: bool

    def passes(self, minimum: float = 0.9) -> bool:
        return self.exact or (self.order is not None and self.order >= minimum)


def refinement_order(coarse: float, fine: float, factor: int, floor: float = EXACT_FLOOR) -> RefinementOrder:
    """Empirical convergence order ``log(coarse / fine) / log(factor)``.

    When both errors sit at or below ``floor`` the identity is reported as
    exact and no order is computed.
    """
    coarse = float(abs(coarse))
    fine = float(abs(fine))
    if coarse <= floor and fine <= floor:
        return RefinementOrder(coarse, fine, factor, None, True)
    if fine == 0.0:
        return RefinementOrder(coarse, fine, factor, float("inf"), False)
    return RefinementOrder(coarse, fine, factor, float(np.log(coarse / fine) / np.log(factor)), False)


def rms(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.sqrt(np.mean(x * x)))


@dataclass(frozen=True)
class LogLogFit:
    slope: float
    intercept: float
    r_squared: float


def loglog_fit(x, y) -> LogLogFit:
    """Ordinary least squares of ``log y`` on ``log x``."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    A = np.vstack([lx, np.ones_like(lx)]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return LogLogFit(float(slope), float(intercept), r2)


def moment_norm(x, p: float, axis=0):
    """``(E|x|^p)^(1/p)`` over ``axis`` with a delta-method standard error."""
    a = np.abs(np.asarray(x, dtype=float)) ** p
    m = a.mean(axis=axis)
    n = a.shape[axis]
    sd = a.std(axis=axis, ddof=1) if n > 1 else np.zeros_like(m)
    val = m ** (1.0 / p)
    with np.errstate(divide="ignore", invalid="ignore"):
        se = np.where(m > 0, (1.0 / p) * m ** (1.0 / p - 1.0) * sd / np.sqrt(n), 0.0)
    return val, se
