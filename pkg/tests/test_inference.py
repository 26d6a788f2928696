import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oewt import inference, propensity
from oewt.datamodel import BigSample, PropensityFit
from oewt.errors import ValidationError

from conftest import make_samples


def _fit_with(pi_B, pi_A, method="OE"):
    return PropensityFit(method=method, theta_hat=np.zeros(2), iterations=1, converged=True,
                         score_norm=0.0, pi_hat_B=pi_B, pi_hat_A=pi_A)


def test_ipw_hand_computed():
    B = BigSample(ids=[1, 2], X=[[1.0], [1.0]], y=[2.0, 4.0])
    est = inference.ipw_mean(B, [0.5, 0.25])
    assert est.N_B_hat == 6.0
    assert est.mu_hat == pytest.approx(10 / 3, rel=1e-15)


def test_ipw_census():
    y = np.random.default_rng(0).normal(size=50)
    B = BigSample(ids=np.arange(50), X=np.ones((50, 1)), y=y)
    assert inference.ipw_mean(B, np.ones(50)).mu_hat == pytest.approx(y.mean(), rel=1e-14)


def test_ipw_constant_weights_equal_naive(samples):
    _, B = samples
    assert inference.ipw_mean(B, np.full(B.n, 0.3)).mu_hat == pytest.approx(inference.naive_mean(B).mu_hat, rel=1e-13)


def test_ipw_rejects_nonpositive(samples):
    _, B = samples
    pi = np.full(B.n, 0.5)
    pi[0] = 0.0
    with pytest.raises(ValidationError):
        inference.ipw_mean(B, pi)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 1e3), st.integers(0, 10_000))
def test_hajek_scale_invariance(k, seed):
    rng = np.random.default_rng(seed)
    B = BigSample(ids=np.arange(20), X=np.ones((20, 1)), y=rng.normal(size=20))
    pi = rng.uniform(0.05, 0.9, size=20)
    assert inference.ipw_mean(B, k * pi).mu_hat == pytest.approx(inference.ipw_mean(B, pi).mu_hat, rel=1e-10, abs=1e-12)


@pytest.mark.parametrize("y, expected", [([1.0, 2.0, 3.0], 2.0), ([7.5], 7.5)])
def test_naive_mean(y, expected):
    B = BigSample(ids=np.arange(len(y)), X=np.ones((len(y), 1)), y=y)
    assert inference.naive_mean(B).mu_hat == expected
    assert inference.naive_mean(B).variance is None


def test_design_variance_cases():
    V = inference.design_variance_pps([1.0, 1.0], [1.0, 3.0])
    assert V.shape == (1, 1) and V[0, 0] == pytest.approx(4.0)
    assert np.all(inference.design_variance_pps([2.0, 4.0, 1.0], [[1.0, 2.0], [0.5, 1.0], [2.0, 4.0]]) == 0)
    rng = np.random.default_rng(1)
    V = inference.design_variance_pps(rng.uniform(1, 5, 30), rng.normal(size=(30, 4)))
    assert np.allclose(V, V.T) and np.linalg.eigvalsh(V).min() > -1e-12
    with pytest.raises(ValidationError):
        inference.design_variance_pps([1.0], [1.0])


def test_confidence_interval():
    assert inference.confidence_interval(3.0, 0.0) == (3.0, 3.0)
    lo, hi = inference.confidence_interval(0.0, 1.0, 0.95)
    assert lo == pytest.approx(-1.959964, abs=1e-6) and hi == pytest.approx(1.959964, abs=1e-6)
    w90 = np.diff(inference.confidence_interval(0.0, 2.0, 0.90))[0]
    w99 = np.diff(inference.confidence_interval(0.0, 2.0, 0.99))[0]
    assert w99 > w90
    with pytest.raises(ValidationError):
        inference.confidence_interval(0.0, -1.0)


def _variance_by_loops(fit, A, B, mu, N, variant):
    """Direct per-unit evaluation of the three plug-in components."""
    p = B.p
    M = np.zeros((p, p))
    r = np.zeros(p)
    for x, y, pi in zip(B.X, B.y, fit.pi_hat_B):
        M += (1 - pi) * np.outer(x, x)
        r += (1 / pi - 1) * (y - mu) * x
    b = np.linalg.solve(M, r)
    t1 = sum((1 - pi) * ((y - mu) / pi - b @ x) ** 2 for x, y, pi in zip(B.X, B.y, fit.pi_hat_B)) / N**2
    t = np.array([d * pi * (1 - pi) * x for x, d, pi in zip(A.X, A.d, fit.pi_hat_A)])
    n = len(t)
    V = n / (n - 1) * sum(np.outer(ti - t.mean(0), ti - t.mean(0)) for ti in t) / N**2
    t2 = b @ V @ b
    if variant == "standard":
        t3 = sum(pi**2 * (1 - pi) * (dA - 1) * (b @ x) ** 2 for x, pi, dA in zip(B.X, fit.pi_hat_B, B.dA)) / N**2
    else:
        t3 = (sum(d**2 * pi**3 * (1 - pi) * (b @ x) ** 2 for x, d, pi in zip(A.X, A.d, fit.pi_hat_A))
              - sum(pi**2 * (1 - pi) * (b @ x) ** 2 for x, pi in zip(B.X, fit.pi_hat_B))) / N**2
    return t1, t2, t3


@pytest.mark.parametrize("variant", ["standard", "alt"])
def test_plug_in_matches_loop_evaluation(variant):
    A, B = make_samples(np.random.default_rng(5), n_A=200, n_B=120)
    f = propensity.fit("OE", A, B)
    mu = inference.ipw_mean(B, f.pi_hat_B).mu_hat
    v = inference.plug_in_variance(f, A, B, mu, 1000, inference.VarianceOptions(variant))
    t1, t2, t3 = _variance_by_loops(f, A, B, mu, 1000, variant)
    assert v.residual == pytest.approx(t1, rel=1e-10)
    assert v.design == pytest.approx(t2, rel=1e-10)
    assert v.additional == pytest.approx(t3, rel=1e-10)


def test_plug_in_census_is_zero():
    rng = np.random.default_rng(2)
    A, B = make_samples(rng)
    f = _fit_with(np.ones(B.n), np.ones(A.n))
    B3 = BigSample(ids=B.ids, X=B.X, y=B.y, dA=B.dA)
    v = inference.plug_in_variance(f, A, B3, inference.ipw_mean(B3, f.pi_hat_B).mu_hat, 100)
    assert v.total == 0.0


def test_plug_in_constant_outcome_is_zero(samples):
    A, B = samples
    B = dataclasses.replace(B, y=np.full(B.n, 4.2))
    f = propensity.fit("OE", A, B)
    mu = inference.ipw_mean(B, f.pi_hat_B).mu_hat
    assert mu == pytest.approx(4.2, rel=1e-14)
    v = inference.plug_in_variance(f, A, B, mu, 500)
    assert v.total == pytest.approx(0.0, abs=1e-20)


def test_plug_in_location_equivariance(samples):
    A, B = samples
    f = propensity.fit("OE", A, B)
    mu = inference.ipw_mean(B, f.pi_hat_B).mu_hat
    shifted = dataclasses.replace(B, y=B.y + 10.0)
    mu2 = inference.ipw_mean(shifted, f.pi_hat_B).mu_hat
    assert mu2 == pytest.approx(mu + 10.0, rel=1e-12)
    v1 = inference.plug_in_variance(f, A, B, mu, 500).total
    v2 = inference.plug_in_variance(f, A, shifted, mu2, 500).total
    assert v2 == pytest.approx(v1, rel=1e-8)


def test_standard_components_nonnegative(samples):
    A, B = samples
    f = propensity.fit("OE", A, B)
    v = inference.plug_in_variance(f, A, B, inference.ipw_mean(B, f.pi_hat_B).mu_hat, 500)
    assert v.residual >= 0 and v.design >= 0 and v.additional >= 0


def test_standard_needs_design_weights_on_b(samples):
    A, B = samples
    B = dataclasses.replace(B, dA=None)
    f = propensity.fit("OE", A, B)
    with pytest.raises(ValidationError):
        inference.plug_in_variance(f, A, B, 0.0, 500)
    inference.plug_in_variance(f, A, B, 0.0, 500, inference.VarianceOptions("alt"))


def test_alt_negative_total_is_floored():
    rng = np.random.default_rng(0)
    A, B = make_samples(rng, n_A=5, n_B=60)
    A = dataclasses.replace(A, d=np.ones(A.n))
    B = dataclasses.replace(B, y=B.X[:, 1] * 50 + 0.01 * rng.normal(size=B.n))
    f = _fit_with(np.full(B.n, 0.6), np.full(A.n, 0.6))
    f = dataclasses.replace(f, theta_hat=np.zeros(3))
    v = inference.plug_in_variance(f, A, B, inference.ipw_mean(B, f.pi_hat_B).mu_hat, 1000,
                                   inference.VarianceOptions("alt"))
    assert v.additional < 0
    assert v.total >= 0
    if v.residual + v.design + v.additional < 0:
        assert v.floored and v.total == 0.0


def test_unconverged_fit_rejected(samples):
    A, B = samples
    f = propensity.fit("OE", A, B, propensity.FitOptions(max_iterations=1))
    with pytest.raises(ValidationError):
        inference.plug_in_variance(f, A, B, 0.0, 500)


def test_estimate_mean_with_interval(samples):
    A, B = samples
    f = propensity.fit("OE", A, B)
    est, var = inference.estimate_mean(f, A, B, 500, inference.VarianceOptions())
    assert est.ci_lower < est.mu_hat < est.ci_upper
    assert est.variance == var.total
    assert est.variance_variant == "standard"
