import numpy as np
import pytest

from oewt.popgen import (
    DegeneratePopulationError,
    PopulationSpec,
    calibrate_sigma,
    generate_population,
)
from oewt.errors import ValidationError


def _corr(pop):
    xb = pop.X[:, 1:].sum(axis=1)
    return np.corrcoef(pop.y, xb)[0, 1]


@pytest.fixture(scope="module")
def big_pop():
    return generate_population(PopulationSpec(N=200_000, rho=0.3, seed=5))


def test_calibrate_sigma_closed_form():
    # sd([-1, 1]) = 1, so sigma = sqrt(1/0.25 - 1) = sqrt(3)
    assert calibrate_sigma([-1.0, 1.0], 0.5) == pytest.approx(1.7320508, abs=1e-7)
    assert calibrate_sigma([-2.0, 2.0], 0.7071068) == pytest.approx(2.0, abs=1e-6)
    assert calibrate_sigma([-2.0, 2.0], 1.0) == 0.0


def test_calibrate_sigma_identity():
    xb = np.random.default_rng(1).normal(size=100)
    for rho in (0.2, 0.5, 0.9):
        s = calibrate_sigma(xb, rho)
        assert np.std(xb) / np.sqrt(np.var(xb) + s**2) == pytest.approx(rho, rel=1e-12)


def test_calibrate_sigma_degenerate():
    with pytest.raises(DegeneratePopulationError):
        calibrate_sigma(np.ones(10), 0.5)


def test_spec_validation():
    with pytest.raises(ValidationError):
        PopulationSpec(N=1)
    with pytest.raises(ValidationError):
        PopulationSpec(rho=1.0)


def test_paper_scale_correlation(big_pop):
    assert abs(_corr(big_pop) - 0.3) < 0.01


def test_marginals(big_pop):
    X = big_pop.X
    z1 = X[:, 1]
    z2 = X[:, 2] - 0.3 * X[:, 1]
    z3 = X[:, 3] - 0.2 * (X[:, 1] + X[:, 2])
    z4 = X[:, 4] - 0.1 * (X[:, 1] + X[:, 2] + X[:, 3])
    assert abs(z1.mean() - 0.5) < 0.01
    assert z2.min() >= 0 and z2.max() <= 2 and abs(z2.mean() - 1) < 0.01
    assert abs(z3.mean() - 1) < 0.02
    assert abs(z4.mean() - 4) < 0.06


def test_desk_scale_correlation():
    pop = generate_population(PopulationSpec(N=10_000, rho=0.7, seed=2))
    assert abs(_corr(pop) - 0.7) < 0.02


def test_noiseless_limit():
    spec = PopulationSpec(N=1000, rho=0.5, seed=3)
    pop = generate_population(spec, rho=1.0)
    np.testing.assert_allclose(pop.y - 2.0, pop.X[:, 1:].sum(axis=1), rtol=0, atol=1e-12)


def test_reproducible():
    a = generate_population(PopulationSpec(N=5000, rho=0.3, seed=9))
    b = generate_population(PopulationSpec(N=5000, rho=0.3, seed=9))
    c = generate_population(PopulationSpec(N=5000, rho=0.3, seed=10))
    assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)
    assert not np.array_equal(a.X, c.X)


def test_rho_only_changes_noise_scale():
    a = generate_population(PopulationSpec(N=2000, rho=0.3, seed=4))
    b = generate_population(PopulationSpec(N=2000, rho=0.7, seed=4))
    assert np.array_equal(a.X, b.X)
    assert np.var(a.y) > np.var(b.y)
