import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.optimize import minimize
from scipy.stats import norm

from badvamp.denoisers import (DenoiseOutput, PriorParams, denoise, em_update_prior,
                               expected_log_prior, retune_gamma1)


def quad_posterior(lam, mean, var, gamma, r):
    """Posterior mean of x under the spike-and-slab prior, by numerical integration."""
    sd = 1 / np.sqrt(gamma)
    spike = (1 - lam) * norm.pdf(r, 0, sd)
    slab = lambda x: lam * norm.pdf(x, mean, np.sqrt(var)) * norm.pdf(r, x, sd)
    # integrate over a window around the slab posterior mode, wide enough for both widths
    v = var / (1 + gamma * var)
    m = v * (gamma * r + mean / var)
    lo, hi = m - 40 * np.sqrt(v), m + 40 * np.sqrt(v)
    z_slab = quad(slab, lo, hi, epsabs=0, epsrel=1e-13, limit=200)[0]
    first = quad(lambda x: x * slab(x), lo, hi, epsabs=0, epsrel=1e-13, limit=200)[0]
    return first / (spike + z_slab)


def test_gaussian_shrinkage():
    out = denoise(PriorParams(lam=1.0, var=1.0), np.array([2.0]), 1.0)
    np.testing.assert_allclose(out.xhat, [1.0])
    np.testing.assert_allclose(out.alpha, 0.5)


def test_inactive_limit():
    out = denoise(PriorParams(lam=1e-300, var=1.0), np.array([[1.5]]), np.array([1.0]))
    assert abs(out.xhat[0, 0]) < 1e-12
    assert out.alpha[0] < 1e-12


def test_matches_quadrature_single_point():
    out = denoise(PriorParams(lam=0.2, var=1.0), np.array([1.5]), 4.0)
    assert abs(out.xhat[0] - quad_posterior(0.2, 0.0, 1.0, 4.0, 1.5)) <= 1e-8


def test_large_precision_does_not_overflow():
    out = denoise(PriorParams(lam=0.1, var=1.0), np.array([0.0, 3.0]), 1e11)
    assert np.all(np.isfinite(out.xhat))
    assert abs(out.xhat[1] - 3.0) < 1e-9


def test_alpha_is_mean_derivative():
    prior = PriorParams(lam=0.3, var=2.0)
    r = np.linspace(-3, 3, 7)[:, None]
    g = np.array([1.7])
    h = 1e-6
    fd = (denoise(prior, r + h, g).xhat - denoise(prior, r - h, g).xhat) / (2 * h)
    np.testing.assert_allclose(denoise(prior, r, g).alpha, fd.mean(axis=0), atol=1e-8)


def test_nonpositive_precision_rejected():
    with pytest.raises(ValueError):
        denoise(PriorParams(), np.ones(3), 0.0)


@settings(max_examples=60, deadline=None)
@given(lam=st.floats(0.01, 0.99), var=st.floats(0.1, 10), gamma=st.floats(0.01, 1e4),
       r=st.floats(-10, 10))
def test_posterior_moments_are_sane(lam, var, gamma, r):
    out = denoise(PriorParams(lam=lam, var=var), np.array([r]), gamma)
    assert 0 <= out.responsibilities[0] <= 1
    assert out.xvar[0] >= 0
    # shrinkage never overshoots the observation
    assert abs(out.xhat[0]) <= abs(r) + 1e-12
    assert out.xhat[0] * r >= 0


def test_em_fully_active():
    prior = PriorParams(lam=0.3, var=1.0, learn_var=False)
    out = denoise(prior, np.full((4, 2), 50.0), np.array([1e4, 1e4]))
    assert em_update_prior(prior, out).lam == pytest.approx(1.0, abs=1e-12)


def test_em_average_of_responsibilities():
    prior = PriorParams(lam=0.9, var=1.0, learn_var=False)
    out = DenoiseOutput(xhat=np.zeros((2, 1)), alpha=np.zeros(1), xvar=np.zeros((2, 1)),
                        responsibilities=np.array([[1.0], [0.0]]),
                        active_mean=np.zeros((2, 1)), active_var=np.full((2, 1), 0.5))
    assert em_update_prior(prior, out).lam == 0.5


def test_em_maximizes_expected_log_prior():
    rng = np.random.default_rng(5)
    prior = PriorParams(lam=0.3, var=1.5)
    out = denoise(prior, rng.standard_normal((4, 3)) * 2, np.array([2.0, 3.0, 5.0]))
    new = em_update_prior(prior, out)

    def neg(p):
        return -expected_log_prior(PriorParams(lam=p[0], var=p[1]), out)

    # coarse grid, then a local refinement
    lams = np.linspace(0.01, 0.99, 99)
    vars_ = np.linspace(0.05, 10, 200)
    grid = np.array([[neg((a, b)) for b in vars_] for a in lams])
    i, j = np.unravel_index(np.argmin(grid), grid.shape)
    ref = minimize(neg, [lams[i], vars_[j]], method="Nelder-Mead",
                   bounds=[(1e-6, 1 - 1e-9), (1e-6, 100)],
                   options=dict(xatol=1e-10, fatol=1e-14, maxiter=5000)).x
    assert new.lam == pytest.approx(ref[0], rel=1e-4)
    assert new.var == pytest.approx(ref[1], rel=1e-4)


def test_frozen_prior_untouched():
    prior = PriorParams(lam=0.3).frozen()
    out = denoise(prior, np.ones((3, 1)), np.array([1.0]))
    assert em_update_prior(prior, out) is prior


def test_retune_zero_residual():
    x = np.arange(4.0)[:, None]
    assert retune_gamma1(x, x, np.array([5.0]))[0] == pytest.approx(5.0)


def test_retune_substitution():
    r = np.zeros((2, 1))
    assert retune_gamma1(r + 1, r, np.array([1.0]))[0] == pytest.approx(0.5)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), eta=st.floats(1e-3, 1e6))
def test_retune_never_exceeds_posterior_precision(seed, eta):
    rng = np.random.default_rng(seed)
    g = retune_gamma1(rng.standard_normal((6, 1)), rng.standard_normal((6, 1)), np.array([eta]))
    assert g[0] <= eta * (1 + 1e-12)
