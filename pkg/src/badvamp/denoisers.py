"""Separable Bernoulli-Gaussian denoiser, its EM prior update and precision re-estimation.

All routines broadcast over columns: ``r`` may be a vector (N,) or a matrix
(N, L) with one precision per column.
"""
import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.special import expit

GAUSSIAN = "gaussian"
BERNOULLI_GAUSSIAN = "bernoulli_gaussian"

LAMBDA_FLOOR = 1e-300


class DegenerateUpdateWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class PriorParams:
    """Spike-and-slab prior (1 - lam) delta_0 + lam N(mean, var) on each entry."""

    family: str = BERNOULLI_GAUSSIAN
    lam: float = 0.1
    mean: float = 0.0
    var: float = 1.0
    learn_lam: bool = True
    learn_mean: bool = False
    learn_var: bool = True

    def __post_init__(self):
        if self.family not in (GAUSSIAN, BERNOULLI_GAUSSIAN):
            raise ValueError(f"unknown prior family {self.family!r}")
        if self.family == GAUSSIAN:
            object.__setattr__(self, "lam", 1.0)
            object.__setattr__(self, "learn_lam", False)
        if not self.var > 0:
            raise ValueError("prior variance must be positive")
        if not 0 < self.lam <= 1:
            raise ValueError("activity rate must lie in (0, 1]")

    @classmethod
    def gaussian(cls, var=1.0, mean=0.0, learn_var=False, learn_mean=False):
        return cls(GAUSSIAN, 1.0, mean, var, False, learn_mean, learn_var)

    def frozen(self):
        return replace(self, learn_lam=False, learn_mean=False, learn_var=False)

    @property
    def learns_anything(self):
        return self.learn_lam or self.learn_mean or self.learn_var


@dataclass
class DenoiseOutput:
    xhat: np.ndarray
    alpha: np.ndarray  # average derivative, one per column
    xvar: np.ndarray   # coordinatewise posterior variance
    responsibilities: Optional[np.ndarray]
    active_mean: np.ndarray  # posterior mean given the entry is active
    active_var: np.ndarray   # posterior variance given active (depends only on gamma)


def _as_columns(r, gamma):
    r = np.asarray(r, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if r.ndim == 2 and gamma.ndim == 1:
        gamma = gamma[None, :]
    return r, gamma


def denoise(prior: PriorParams, r, gamma) -> DenoiseOutput:
    """Posterior mean/variance of x given r = x + N(0, 1/gamma), entrywise.

    The activity posterior is formed from a log-likelihood ratio so that very
    large precisions cannot overflow.
    """
    r, g = _as_columns(r, gamma)
    if np.any(g <= 0):
        raise ValueError("denoiser precision must be positive")
    s2 = prior.var
    v = s2 / (1.0 + g * s2)
    m = v * (g * r + prior.mean / s2)
    if prior.family == GAUSSIAN or prior.lam >= 1.0:
        pi = None
        xhat = m
        xvar = np.broadcast_to(v, r.shape).copy()
    else:
        lam = max(prior.lam, LAMBDA_FLOOR)
        tot = s2 + 1.0 / g
        # ln N(r; mean, s2 + 1/g) - ln N(r; 0, 1/g)
        llr = (np.log(lam) - np.log1p(-lam)
               - 0.5 * np.log(g * tot)
               - 0.5 * (r - prior.mean) ** 2 / tot
               + 0.5 * g * r ** 2)
        pi = expit(llr)
        xhat = pi * m
        xvar = pi * v + pi * expit(-llr) * m ** 2
    alpha = np.mean(g * xvar, axis=0)
    return DenoiseOutput(xhat=xhat, alpha=alpha, xvar=xvar, responsibilities=pi,
                         active_mean=m, active_var=np.broadcast_to(v, r.shape))


def expected_log_prior(prior: PriorParams, out: DenoiseOutput) -> float:
    """E[ln p(x, s; prior)] under the posterior summarized by ``out``.

    The delta-function term is parameter independent and dropped.
    """
    m, v = out.active_mean, out.active_var
    pi = np.ones_like(m) if out.responsibilities is None else out.responsibilities
    sq = v + (m - prior.mean) ** 2
    slab = -0.5 * np.log(2 * np.pi * prior.var) - 0.5 * sq / prior.var
    total = np.sum(pi * slab)
    if prior.family == BERNOULLI_GAUSSIAN and prior.lam < 1:
        total += np.sum(pi) * np.log(prior.lam) + np.sum(1 - pi) * np.log1p(-prior.lam)
    elif prior.family == BERNOULLI_GAUSSIAN and np.any(pi < 1):
        return -np.inf
    return float(total)


def em_update_prior(prior: PriorParams, out: DenoiseOutput) -> PriorParams:
    """One M-step over the enabled prior fields, given posterior moments ``out``."""
    if not prior.learns_anything:
        return prior
    m, v = out.active_mean, out.active_var
    pi = np.ones_like(m) if out.responsibilities is None else out.responsibilities
    wsum = float(np.sum(pi))
    if wsum <= 0 and (prior.learn_var or prior.learn_mean):
        warnings.warn("all activity responsibilities vanished; prior left unchanged",
                      DegenerateUpdateWarning, stacklevel=2)
        return prior
    lam, mean, var = prior.lam, prior.mean, prior.var
    if prior.learn_lam and prior.family == BERNOULLI_GAUSSIAN:
        lam = min(max(wsum / pi.size, LAMBDA_FLOOR), 1.0)
    if prior.learn_mean:
        mean = float(np.sum(pi * m) / wsum)
    if prior.learn_var:
        var = float(np.sum(pi * (v + (m - mean) ** 2)) / wsum)
        if not var > 0:
            warnings.warn("variance update collapsed; prior left unchanged",
                          DegenerateUpdateWarning, stacklevel=2)
            return prior
    return replace(prior, lam=lam, mean=mean, var=var)


def retune_precision(xhat, r, eta, gamma_min=1e-6, gamma_max=1e11):
    """Re-estimate a message precision from its posterior:
    (||xhat - r||^2 / N + 1/eta)^-1, clamped."""
    xhat = np.asarray(xhat, dtype=float)
    r = np.asarray(r, dtype=float)
    eta = np.asarray(eta, dtype=float)
    resid = np.mean((xhat - r) ** 2, axis=0)
    with np.errstate(divide="ignore"):
        gamma = 1.0 / (resid + 1.0 / eta)
    return np.clip(gamma, gamma_min, gamma_max)


def retune_gamma1(x1, r1, eta1, gamma_min=1e-6, gamma_max=1e11):
    return retune_precision(x1, r1, eta1, gamma_min, gamma_max)
