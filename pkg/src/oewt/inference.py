"""Inverse-probability-weighted means, plug-in variances and normal intervals."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg, stats

from .datamodel import BigSample, MeanEstimate, PropensityFit, ReferenceSample
from .errors import NumericalError, ValidationError

log = logging.getLogger(__name__)

VARIANTS = ("standard", "alt")


@dataclass(frozen=True)
class VarianceOptions:
    variant: str = "standard"
    level: float = 0.95
    design: str = "pps-wr"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValidationError(f"variant must be one of {VARIANTS}")
        if not 0.0 < self.level < 1.0:
            raise ValidationError("confidence level must lie in (0, 1)")
        if self.design not in ("pps-wr", "poisson"):
            raise ValidationError("design must be 'pps-wr' or 'poisson'")


@dataclass(frozen=True)
class PlugInVariance:
    residual: float
    design: float
    additional: float
    variant: str
    floored: bool = False

    @property
    def total(self) -> float:
        return max(0.0, self.residual + self.design + self.additional)

    def as_dict(self) -> dict:
        return {
            "residual_term": self.residual,
            "design_term": self.design,
            "third_term": self.additional,
            "variant": self.variant,
            "floored": self.floored,
            "total": self.total,
        }


def ipw_mean(B: BigSample, pi_hat) -> MeanEstimate:
    """Hajek-form IPW mean: sum(y/pi) / sum(1/pi)."""
    pi_hat = np.asarray(pi_hat, dtype=np.float64)
    if pi_hat.shape != (B.n,):
        raise ValidationError("need one propensity per big-sample unit")
    if not np.all(pi_hat > 0):
        raise ValidationError("propensities must be positive")
    w = 1.0 / pi_hat
    N_B_hat = float(np.sum(w))
    return MeanEstimate(mu_hat=float(np.sum(w * B.y)) / N_B_hat, N_B_hat=N_B_hat)


def naive_mean(B: BigSample) -> MeanEstimate:
    return MeanEstimate(mu_hat=float(np.mean(B.y)), N_B_hat=float(B.n))


def design_variance_pps(d, u) -> np.ndarray:
    """With-replacement variance of the weighted total sum(d_i u_i).

    n/(n-1) * sum (d_i u_i - tbar)(d_i u_i - tbar)'.
    """
    d = np.asarray(d, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if u.ndim == 1:
        u = u[:, None]
    n = d.shape[0]
    if n < 2:
        raise ValidationError("design variance needs at least two sampled units")
    t = d[:, None] * u
    r = t - t.mean(axis=0)
    return (n / (n - 1.0)) * (r.T @ r)


def design_variance_poisson(d, u) -> np.ndarray:
    """Poisson-design variance sum (1 - 1/d_i) d_i^2 u_i u_i'."""
    d = np.asarray(d, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if u.ndim == 1:
        u = u[:, None]
    c = (1.0 - 1.0 / d) * d**2
    return (u * c[:, None]).T @ u


def regression_coefficient(B: BigSample, pi_B, mu_hat: float) -> np.ndarray:
    """b = [sum_B (1-pi) x x']^{-1} sum_B (1/pi - 1)(y - mu) x."""
    q = 1.0 - pi_B
    M = (B.X * q[:, None]).T @ B.X
    rhs = B.X.T @ ((1.0 / pi_B - 1.0) * (B.y - mu_hat))
    if not np.any(rhs):
        return np.zeros(B.p)
    try:
        return linalg.solve(M, rhs, assume_a="sym")
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericalError("sum_B (1 - pi) x x' is singular") from exc


def plug_in_variance(
    fit: PropensityFit,
    A: ReferenceSample,
    B: BigSample,
    mu_hat: float,
    N: float,
    options: Optional[VarianceOptions] = None,
) -> PlugInVariance:
    """Plug-in variance of the IPW mean, split into its three components."""
    options = options or VarianceOptions()
    if not fit.converged:
        raise ValidationError("plug-in variance needs a converged propensity fit")
    if not N > 0:
        raise ValidationError("population size must be positive")
    if fit.method not in ("OE",):
        log.warning("plug-in variance formula was derived for OE; applying it to %s", fit.method)
    pi_B = np.asarray(fit.pi_hat_B)
    pi_A = np.asarray(fit.pi_hat_A)
    N2 = float(N) ** 2

    b = regression_coefficient(B, pi_B, mu_hat)
    bx_B = B.X @ b
    resid = (B.y - mu_hat) / pi_B - bx_B
    residual = float(np.sum((1.0 - pi_B) * resid**2)) / N2

    u = (pi_A * (1.0 - pi_A))[:, None] * A.X
    if options.design == "pps-wr":
        Vd = design_variance_pps(A.d, u)
    else:
        Vd = design_variance_poisson(A.d, u)
    design = float(b @ Vd @ b) / N2

    if options.variant == "standard":
        if B.dA is None:
            raise ValidationError("standard variant needs reference design weights on the big sample")
        third = float(np.sum(pi_B**2 * (1.0 - pi_B) * (B.dA - 1.0) * bx_B**2)) / N2
    else:
        bx_A = A.X @ b
        third = (
            float(np.sum(A.d**2 * pi_A**3 * (1.0 - pi_A) * bx_A**2))
            - float(np.sum(pi_B**2 * (1.0 - pi_B) * bx_B**2))
        ) / N2
    floored = residual + design + third < 0
    if floored:
        log.warning("plug-in variance negative (%.3g); floored at zero", residual + design + third)
    return PlugInVariance(residual, design, third, options.variant, floored)


def confidence_interval(mu_hat: float, variance: float, level: float = 0.95) -> tuple[float, float]:
    if variance < 0:
        raise ValidationError("variance must be nonnegative")
    if not 0.0 < level < 1.0:
        raise ValidationError("confidence level must lie in (0, 1)")
    half = float(stats.norm.ppf(0.5 + level / 2.0)) * float(np.sqrt(variance))
    return mu_hat - half, mu_hat + half


def estimate_mean(
    fit: PropensityFit,
    A: Optional[ReferenceSample],
    B: BigSample,
    N: Optional[float] = None,
    options: Optional[VarianceOptions] = None,
) -> tuple[MeanEstimate, Optional[PlugInVariance]]:
    """IPW mean with, when ``options`` is given, plug-in variance and interval."""
    est = ipw_mean(B, fit.pi_hat_B)
    if options is None:
        return est, None
    if A is None or N is None:
        raise ValidationError("variance needs the reference sample and population size")
    var = plug_in_variance(fit, A, B, est.mu_hat, N, options)
    lo, hi = confidence_interval(est.mu_hat, var.total, options.level)
    est = MeanEstimate(est.mu_hat, est.N_B_hat, var.total, lo, hi, options.variant)
    return est, var
