"""Propensity-score fitting by maximum pseudo-likelihood under a logistic link.

Every supported objective has the form

    sum_i a_i * log(pi_i) + b_i * log(1 - pi_i),   pi_i = expit(x_i' theta)

over rows drawn from the big sample B and/or the reference sample A, so one
accumulation kernel serves all of them:

    OE   B: (1, 0)            A with delta=0: (0, d)
    CLW  B: (1, -1)           A: (0, d)
    KW   A: (d*delta, d*(1-delta))
    VD   B: (1, 0)            A: (0, d*(Nhat-N_B)/Nhat)
    WVL  B: (1, 0)            A: (0, d)        [pi here is p; propensity is p/(1-p)]
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.special import expit as _expit

from . import kernels
from .datamodel import METHODS, BigSample, PropensityFit, ReferenceSample
from .errors import DegenerateConfigurationError, DimensionError, NumericalError, ValidationError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitOptions:
    method: str = "OE"
    tolerance: float = 1e-8
    max_iterations: int = 50
    step_halving_max: int = 20
    theta0: Optional[tuple] = None
    backend: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "method", normalize_method(self.method))
        if not self.tolerance > 0:
            raise ValidationError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be at least 1")


def normalize_method(method: str) -> str:
    m = str(method).upper()
    if m == "ALP":
        m = "WVL"
    if m not in METHODS:
        raise ValidationError(f"unknown method {method!r}; expected one of {METHODS}")
    return m


def expit(eta):
    """Logistic function exp(eta) / (1 + exp(eta)), overflow-free."""
    out = _expit(eta)
    return float(out) if np.ndim(out) == 0 else out


def _check_inputs(method: str, A: ReferenceSample, B: BigSample) -> None:
    if A.p != B.p:
        raise DimensionError(f"reference sample has {A.p} columns, big sample {B.p}")
    if method in ("OE", "KW") and not A.overlap_known:
        raise ValidationError(f"{method} requires overlap flags on the reference sample")


def vd_scaled_weights(A: ReferenceSample, B: BigSample) -> np.ndarray:
    Nhat = float(np.sum(A.d))
    return A.d * (Nhat - B.n) / Nhat


def objective_blocks(method: str, A: ReferenceSample, B: BigSample) -> list[tuple]:
    """Row blocks ``(X, a, b)`` whose accumulated terms give the pseudo-log-likelihood."""
    method = normalize_method(method)
    _check_inputs(method, A, B)
    ones_B = np.ones(B.n)
    zeros_B = np.zeros(B.n)
    zeros_A = np.zeros(A.n)
    if method == "OE":
        out = ~A.delta
        if not np.any(out):
            raise DegenerateConfigurationError("OE needs reference units outside the big sample")
        return [(B.X, ones_B, zeros_B), (A.X[out], np.zeros(int(out.sum())), A.d[out])]
    if method == "CLW":
        return [(B.X, ones_B, -ones_B), (A.X, zeros_A, A.d)]
    if method == "KW":
        if np.all(A.delta) or not np.any(A.delta):
            raise DegenerateConfigurationError("KW needs reference units both inside and outside the big sample")
        dl = A.delta.astype(np.float64)
        return [(A.X, A.d * dl, A.d * (1.0 - dl))]
    if method == "VD":
        w = vd_scaled_weights(A, B)
        if np.any(w <= 0):
            raise DegenerateConfigurationError("VD needs sum of reference weights to exceed N_B")
        return [(B.X, ones_B, zeros_B), (A.X, zeros_A, w)]
    return [(B.X, ones_B, zeros_B), (A.X, zeros_A, A.d)]


def _accumulate(blocks, theta, derivs=True, backend=None):
    p = blocks[0][0].shape[1]
    ll = 0.0
    S = np.zeros(p)
    H = np.zeros((p, p))
    for X, a, b in blocks:
        if X.shape[0] == 0:
            continue
        l, s, h = kernels.logistic_accumulate(X, theta, a, b, derivs=derivs, backend=backend)
        ll += l
        if derivs:
            S += s
            H += h
    return (ll, S, H) if derivs else (ll, None, None)


def _loglik_change(blocks, theta, dtheta) -> float:
    """Objective difference between ``theta + dtheta`` and ``theta``.

    Summed row by row from log1p(pi * expm1(d_eta)), so the result is accurate
    relative to the change itself rather than to the size of the objective.
    """
    total = 0.0
    for X, a, b in blocks:
        if X.shape[0] == 0:
            continue
        de = X @ dtheta
        pi0 = expit(X @ theta)
        total += float(np.sum(a * de - (a + b) * np.log1p(pi0 * np.expm1(de))))
    return total


def pseudo_loglik(method: str, theta, A: ReferenceSample, B: BigSample) -> float:
    blocks = objective_blocks(method, A, B)
    return _accumulate(blocks, np.asarray(theta, dtype=np.float64), derivs=False)[0]


def score(method: str, theta, A: ReferenceSample, B: BigSample) -> np.ndarray:
    blocks = objective_blocks(method, A, B)
    return _accumulate(blocks, np.asarray(theta, dtype=np.float64))[1]


def hessian_neg(method: str, theta, A: ReferenceSample, B: BigSample) -> np.ndarray:
    """Negative Hessian of the pseudo-log-likelihood (symmetric)."""
    blocks = objective_blocks(method, A, B)
    return _accumulate(blocks, np.asarray(theta, dtype=np.float64))[2]


def score_scale(A: ReferenceSample, B: BigSample) -> float:
    return B.n + float(np.sum(A.d))


def _newton_direction(H: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Solve H step = S; ridge lambda*I doubles from 1e-8 when H is not positive definite."""
    lam = 0.0
    eye = np.eye(H.shape[0])
    for _ in range(120):
        try:
            c = linalg.cho_factor(H + lam * eye, check_finite=True)
            step = linalg.cho_solve(c, S)
            if np.all(np.isfinite(step)):
                if lam:
                    log.debug("ridge %.3g added to negative Hessian", lam)
                return step
        except (linalg.LinAlgError, ValueError):
            pass
        lam = 1e-8 if lam == 0.0 else 2.0 * lam
    raise NumericalError("negative Hessian is not positive definite even with ridge")


def propensities_from_theta(method: str, theta, X) -> np.ndarray:
    """Fitted inclusion propensities; WVL maps p to p / (1 - p)."""
    eta = np.asarray(X, dtype=np.float64) @ np.asarray(theta, dtype=np.float64)
    if normalize_method(method) == "WVL":
        return np.exp(eta)  # p/(1-p) with p = expit(eta)
    return _expit(eta)


_ROUNDING = 1e-12


def fit(method: str, A: ReferenceSample, B: BigSample, options: Optional[FitOptions] = None) -> PropensityFit:
    """Maximize the chosen pseudo-likelihood by Newton-Raphson with step halving."""
    options = options or FitOptions(method=method)
    method = normalize_method(method)
    blocks = objective_blocks(method, A, B)
    p = A.p
    theta = np.zeros(p) if options.theta0 is None else np.array(options.theta0, dtype=np.float64)
    if theta.shape != (p,):
        raise DimensionError("initial theta has the wrong length")
    scale = score_scale(A, B)

    ll, S, H = _accumulate(blocks, theta, backend=options.backend)
    trace = [ll]
    norm = float(np.max(np.abs(S))) / scale
    it = 0
    converged = norm <= options.tolerance
    while not converged and it < options.max_iterations:
        step = _newton_direction(H, S)
        t = 1.0
        for _ in range(options.step_halving_max + 1):
            cand = theta + t * step
            ll_new, S_new, H_new = _accumulate(blocks, cand, backend=options.backend)
            if np.isfinite(ll_new) and abs(ll_new - ll) <= _ROUNDING * (1.0 + abs(ll)):
                # the two sums agree to rounding; decide on the exact change instead
                ll_new = ll + _loglik_change(blocks, theta, t * step)
            if np.isfinite(ll_new) and ll_new >= ll:
                break
            t *= 0.5
        else:
            log.debug("%s: step halving exhausted at iteration %d", method, it)
            break
        it += 1
        theta, ll, S, H = cand, ll_new, S_new, H_new
        trace.append(ll)
        norm = float(np.max(np.abs(S))) / scale
        converged = norm <= options.tolerance
    if not np.all(np.isfinite(theta)):
        raise NumericalError(f"{method} fit diverged")

    pi_B = propensities_from_theta(method, theta, B.X)
    pi_A = propensities_from_theta(method, theta, A.X)
    above = int(np.sum(pi_B > 1.0)) if method == "WVL" else 0
    if above:
        log.debug("WVL: %d big-sample units have fitted propensity above 1", above)
    return PropensityFit(
        method=method,
        theta_hat=theta,
        iterations=it,
        converged=converged,
        score_norm=norm,
        pi_hat_B=pi_B,
        pi_hat_A=pi_A,
        n_pi_above_one=above,
        loglik_trace=tuple(trace),
        tolerance=options.tolerance,
    )


def balance_residual(fit: PropensityFit, A: ReferenceSample, B: BigSample) -> float:
    """Signed gap in the intercept balance equation satisfied at a stationary point."""
    method = fit.method
    if method == "OE":
        out = ~A.delta
        return float(np.sum(1.0 - fit.pi_hat_B) - np.sum(A.d[out] * fit.pi_hat_A[out]))
    if method == "CLW":
        return float(B.n - np.sum(A.d * fit.pi_hat_A))
    if method == "KW":
        dl = A.delta
        return float(np.sum(A.d[dl] * (1.0 - fit.pi_hat_A[dl])) - np.sum(A.d[~dl] * fit.pi_hat_A[~dl]))
    if method == "VD":
        w = vd_scaled_weights(A, B)
        return float(np.sum(1.0 - fit.pi_hat_B) - np.sum(w * fit.pi_hat_A))
    # WVL balance is in p = pi/(1+pi)
    pB = fit.pi_hat_B / (1.0 + fit.pi_hat_B)
    pA = fit.pi_hat_A / (1.0 + fit.pi_hat_A)
    return float(np.sum(1.0 - pB) - np.sum(A.d * pA))


def check_balance(fit: PropensityFit, A: ReferenceSample, B: BigSample, rel_tol: float = 1e-6) -> bool:
    return abs(balance_residual(fit, A, B)) <= rel_tol * B.n
