"""Bilinear adaptive VAMP: joint recovery of theta_A and X from Y = A(theta_A) X + W."""
import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from ._linalg import sym_solve
from .denoisers import PriorParams, denoise, em_update_prior, retune_precision
from .operators import AffineOperator, GramTables, eig_gram, evaluate, precompute_grams
from .vamp import (ColumnState, History, SolverConfig, extrinsic, lmmse_denoise,
                   posterior_precision, relative_change)

log = logging.getLogger(__name__)

# a carried-over restart must lower the best residual by this much to keep carrying
RESTART_GAIN_DB = 1.0

class SingularSystemWarning(RuntimeWarning):
    pass


class NonFiniteState(FloatingPointError):
    pass


class SolverAbort(RuntimeError):
    pass


@dataclass
class EmWorkspace:
    Csum: np.ndarray
    X2: np.ndarray
    trace_Cl: np.ndarray = None
    H: np.ndarray = None
    beta: np.ndarray = None

    @property
    def second_moment(self):
        """E[X X^T] under the measurement-side beliefs: C + X2 X2^T."""
        return self.Csum + self.X2 @ self.X2.T


@dataclass(frozen=True)
class Hyperparams:
    theta_A: np.ndarray
    prior: PriorParams
    gamma_w: float


@dataclass
class RunResult:
    theta_A_hat: np.ndarray
    A_hat: np.ndarray
    X_hat: np.ndarray
    prior_hat: PriorParams
    gamma_w_hat: float
    iterations: int
    restarts_used: int
    converged: bool
    residual_db: float
    history: History = field(default_factory=History)


def build_workspace(eig, gamma2, gamma_w, X2) -> EmWorkspace:
    """C = sum_l (gamma2_l I + gamma_w A^T A)^-1 through the shared eigenbasis."""
    d = 1.0 / (np.asarray(gamma2)[None, :] + gamma_w * eig.s[:, None])
    Csum = (eig.u * d.sum(axis=1)) @ eig.u.T
    Csum = 0.5 * (Csum + Csum.T)
    return EmWorkspace(Csum=Csum, X2=X2, trace_Cl=d.mean(axis=0))


def em_update_thetaA(grams: GramTables, ws: EmWorkspace, theta_prev=None):
    """theta = H^-1 beta with H_ij = tr{A_j^T A_i S}, beta_i = tr{Y^T A_i X2} - tr{A0^T A_i S}."""
    S = ws.second_moment
    ws.H = np.einsum("ijab,ba->ij", grams.gram, S)
    ws.H = 0.5 * (ws.H + ws.H.T)
    ws.beta = (np.einsum("ila,al->i", grams.ygram, ws.X2)
               - np.einsum("iba,ab->i", grams.a0gram, S))
    theta = sym_solve(ws.H, ws.beta)
    if theta is None:
        warnings.warn("theta_A normal equations singular; keeping previous estimate",
                      SingularSystemWarning, stacklevel=2)
        return None if theta_prev is None else np.array(theta_prev, dtype=float)
    return theta


def em_update_A_unstructured(Y, ws: EmWorkspace, A_prev=None):
    """A = Y X2^T (C + X2 X2^T)^-1."""
    Y = np.asarray(Y, dtype=float)
    At = sym_solve(ws.second_moment, ws.X2 @ Y.T)
    if At is None:
        warnings.warn("dictionary normal equations singular; keeping previous estimate",
                      SingularSystemWarning, stacklevel=2)
        return None if A_prev is None else np.array(A_prev, dtype=float)
    return At.T


def em_update_gamma_w(Y, A_eval, ws: EmWorkspace, gamma_min=1e-6, gamma_max=1e11):
    Y = np.asarray(Y, dtype=float)
    M, L = Y.shape
    resid = np.sum((Y - A_eval @ ws.X2) ** 2)
    spread = np.sum((A_eval @ ws.Csum) * A_eval)
    v = (resid + spread) / (M * L)
    if v <= 0:
        return gamma_max
    return float(np.clip(1.0 / v, gamma_min, gamma_max))


def expected_loglik(Y, A_eval, ws: EmWorkspace, gamma_w):
    """E[ln p(Y | X; A, gamma_w)] under the measurement-side beliefs, up to a constant."""
    M, L = Y.shape
    resid = np.sum((Y - A_eval @ ws.X2) ** 2)
    spread = np.sum((A_eval @ ws.Csum) * A_eval)
    return 0.5 * M * L * np.log(gamma_w) - 0.5 * gamma_w * (resid + spread)


def retune_gamma2(x2, r2, eta2, gamma_min=1e-6, gamma_max=1e11):
    return retune_precision(x2, r2, eta2, gamma_min, gamma_max)


def residual_db(Y, A, X):
    num = np.sum((Y - A @ X) ** 2)
    den = np.sum(Y ** 2)
    if den == 0:
        return -100.0
    return float(10 * np.log10(max(num / den, 1e-10)))


def default_init(Y, op: AffineOperator, rng, sparsity_hint=None,
                 prior: Optional[PriorParams] = None, snr_db=20.0) -> Hyperparams:
    """Generic starting point: random theta_A, an SNR guess for gamma_w, variance matched to ||Y||."""
    Y = np.asarray(Y, dtype=float)
    M, L = Y.shape
    theta = rng.standard_normal(op.Q)
    A = evaluate(op, theta)
    energy = float(np.sum(Y ** 2))
    gamma_w = M * L / max(energy, 1e-300) * 10 ** (snr_db / 10)
    if prior is None:
        prior = PriorParams()
    lam = prior.lam
    if prior.family != "gaussian":
        lam = 0.5 * min(1.0, sparsity_hint / op.N) if sparsity_hint else 0.1
    afro = max(float(np.sum(A ** 2)), 1e-300)
    var = energy / (L * lam * afro) if energy > 0 else 1.0
    return Hyperparams(theta_A=theta, prior=replace(prior, lam=lam, var=var), gamma_w=gamma_w)


def _check(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteState("non-finite value in solver state")


def _single_run(Y, op, grams, hp: Hyperparams, r1, gamma1, cfg: SolverConfig, callback):
    M, L = Y.shape
    lo, hi = cfg.gamma_min, cfg.gamma_max
    theta, prior, gw = np.array(hp.theta_A, dtype=float), hp.prior, float(hp.gamma_w)
    learn_A = cfg.learn_theta_A and op.Q > 0
    A = evaluate(op, theta)
    eig = eig_gram(A, theta)
    AtY = A.T @ Y
    st = ColumnState(r1=np.array(r1, dtype=float), gamma1=np.array(gamma1, dtype=float))
    hist = History()
    x_prev = None
    converged = False
    t = 0
    for t in range(cfg.t_max):
        # r1 carries no information before the first measurement-side pass
        adapt = t >= cfg.warmup
        for tau in range(cfg.tau1_max + 1):
            d = denoise(prior, st.r1, st.gamma1)
            st.x1 = d.xhat
            st.eta1 = posterior_precision(st.gamma1, d.alpha, lo, hi)
            if not adapt:
                break
            if tau < cfg.tau1_max:
                st.gamma1 = retune_precision(st.x1, st.r1, st.eta1, lo, hi)
            prior = em_update_prior(prior, d)
        prev2 = (st.gamma2, st.r2) if cfg.damp_both and st.r2 is not None else None
        st.gamma2, st.r2 = extrinsic(st.eta1, st.x1, st.gamma1, st.r1, cfg.zeta, prev=prev2,
                                     gamma_min=lo, gamma_max=hi)
        for tau in range(cfg.tau2_max + 1):
            st.x2, st.eta2 = lmmse_denoise(eig, AtY, st.r2, st.gamma2, gw, theta=theta)
            st.eta2 = np.clip(st.eta2, lo, hi)
            ws = build_workspace(eig, st.gamma2, gw, st.x2)
            if tau < cfg.tau2_max:
                st.gamma2 = retune_precision(st.x2, st.r2, st.eta2, lo, hi)
            changed = False
            if learn_A:
                if op.unstructured:
                    A_new = em_update_A_unstructured(Y, ws, A)
                    theta = (A_new - op.a0).ravel()
                else:
                    theta = em_update_thetaA(grams, ws, theta)
                changed = True
                A = evaluate(op, theta)
            if cfg.learn_gamma_w:
                gw_em = em_update_gamma_w(Y, A, ws, lo, hi)
                if cfg.zeta_w == 1.0:
                    gw = gw_em
                else:
                    # geometric damping keeps gamma_w from outrunning theta_A
                    gw = float(gw ** (1 - cfg.zeta_w) * gw_em ** cfg.zeta_w)
            if changed:
                _check(A)
                eig = eig_gram(A, theta)
                AtY = A.T @ Y
        _check(st.x1, st.x2, st.eta1, st.eta2)
        hist.log(st, gw)
        if callback is not None:
            callback(t, st)
        st.gamma1, st.r1 = extrinsic(st.eta2, st.x2, st.gamma2, st.r2, cfg.zeta,
                                     prev=(st.gamma1, st.r1), gamma_min=lo, gamma_max=hi)
        _check(st.r1, st.gamma1)
        if x_prev is not None and relative_change(st.x1, x_prev) <= cfg.tol:
            converged = True
            break
        x_prev = st.x1
    res = residual_db(Y, A, st.x1)
    return RunResult(theta_A_hat=theta, A_hat=A, X_hat=st.x1, prior_hat=prior,
                     gamma_w_hat=gw, iterations=t + 1, restarts_used=0,
                     converged=converged, residual_db=res, history=hist)


def run_badvamp(Y, op: AffineOperator, prior: Optional[PriorParams] = None,
                cfg: SolverConfig = SolverConfig(), init: Optional[Hyperparams] = None,
                r1=None, gamma1=1e-2, seed=0, sparsity_hint=None,
                callback: Optional[Callable[[int, ColumnState], None]] = None) -> RunResult:
    """Run BAd-VAMP with restarts and return the lowest-residual run.

    ``init`` overrides the generic starting point. A restart re-initializes
    everything except theta_A, which depends on ``cfg.restart_mode``:
    "carry" starts from the previous run's estimate, "fresh" draws a new
    random theta_A, and "hybrid" carries it until a carried run fails to
    improve the best residual by ``RESTART_GAIN_DB``, then draws fresh ones.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    M, L = Y.shape
    if M != op.M:
        raise ValueError(f"Y has {M} rows, operator has M={op.M}")
    N = op.N
    grams = None if op.unstructured or op.Q == 0 else precompute_grams(op, Y)
    streams = np.random.SeedSequence(seed).spawn(cfg.restarts + 1)
    generic = init is None
    if generic:
        init = default_init(Y, op, np.random.default_rng(streams[0]), sparsity_hint, prior,
                            snr_db=cfg.init_snr_db)
    elif prior is not None and init.prior is None:
        init = replace(init, prior=prior)
    r1_0 = np.zeros((N, L)) if r1 is None else np.asarray(r1, dtype=float).reshape(N, L)
    g1_0 = np.broadcast_to(np.asarray(gamma1, dtype=float), (L,)).copy()

    best = None
    restarts_used = 0
    hp = init
    carry = cfg.restart_mode != "fresh"
    for attempt in range(cfg.restarts + 1):
        best_before = np.inf if best is None else best.residual_db
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                res = _single_run(Y, op, grams, hp, r1_0, g1_0, cfg, callback)
        except NonFiniteState:
            log.debug("run %d aborted on non-finite state", attempt)
            res = None
        if res is not None and (best is None or res.residual_db < best.residual_db):
            best = res
        restarts_used = attempt
        if best is not None and best.residual_db <= cfg.restart_db:
            break
        if attempt == cfg.restarts:
            break
        if (cfg.restart_mode == "hybrid" and attempt > 0
                and (best is None or best.residual_db > best_before - RESTART_GAIN_DB)):
            carry = False
        if carry and res is not None:
            hp = replace(init, theta_A=res.theta_A_hat)
        else:
            rng = np.random.default_rng(streams[attempt + 1])
            if generic:
                hp = default_init(Y, op, rng, sparsity_hint, prior, snr_db=cfg.init_snr_db)
            else:
                hp = replace(init, theta_A=rng.standard_normal(op.Q))
    if best is None:
        raise SolverAbort("every BAd-VAMP run produced a non-finite state")
    best.restarts_used = restarts_used
    return best
