"""LMMSE measurement denoiser, extrinsic message exchange and plain VAMP for a known operator."""
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .denoisers import PriorParams, denoise
from .operators import OperatorEig, eig_gram


class StaleEigenError(RuntimeError):
    pass


RESTART_MODES = ("carry", "fresh", "hybrid")

@dataclass(frozen=True)
class SolverConfig:
    t_max: int = 200
    tau1_max: int = 1
    tau2_max: int = 0
    zeta: float = 0.8
    gamma_min: float = 1e-6
    gamma_max: float = 1e11
    tol: float = 1e-8
    restarts: int = 5
    restart_db: float = -30.0
    damp_both: bool = False
    learn_theta_A: bool = True
    learn_gamma_w: bool = True
    warmup: int = 1
    zeta_w: float = 1.0        # log-domain damping of the gamma_w update; 1 = none
    init_snr_db: float = 20.0  # SNR guess behind the default gamma_w starting value
    restart_mode: str = "hybrid"  # how a restart picks theta_A, see run_badvamp

    def __post_init__(self):
        if not 0 < self.zeta <= 1 or not 0 < self.zeta_w <= 1:
            raise ValueError("damping factors must lie in (0, 1]")
        if not 0 < self.gamma_min < self.gamma_max:
            raise ValueError("need 0 < gamma_min < gamma_max")
        if self.t_max < 1:
            raise ValueError("t_max must be at least 1")
        if self.restart_mode not in RESTART_MODES:
            raise ValueError(f"restart_mode must be one of {RESTART_MODES}")
        if min(self.tau1_max, self.tau2_max, self.restarts, self.warmup) < 0:
            raise ValueError("inner loop and restart counts must be nonnegative")


@dataclass
class ColumnState:
    """Per-column VAMP messages; vectors are stored as (N, L) matrices."""

    r1: np.ndarray
    gamma1: np.ndarray
    r2: np.ndarray = None
    gamma2: np.ndarray = None
    x1: np.ndarray = None
    eta1: np.ndarray = None
    x2: np.ndarray = None
    eta2: np.ndarray = None

    def copy(self):
        return ColumnState(*(None if v is None else np.array(v, copy=True)
                             for v in (self.r1, self.gamma1, self.r2, self.gamma2,
                                       self.x1, self.eta1, self.x2, self.eta2)))


@dataclass
class History:
    """Scalar per-iteration summaries (column averages)."""

    gamma1: list = field(default_factory=list)
    gamma2: list = field(default_factory=list)
    eta1: list = field(default_factory=list)
    eta2: list = field(default_factory=list)
    gamma_w: list = field(default_factory=list)
    nmse: list = field(default_factory=list)

    def log(self, st: ColumnState, gamma_w, nmse=None):
        self.gamma1.append(float(np.mean(st.gamma1)))
        self.gamma2.append(float(np.mean(st.gamma2)))
        self.eta1.append(float(np.mean(st.eta1)))
        self.eta2.append(float(np.mean(st.eta2)))
        self.gamma_w.append(float(gamma_w))
        if nmse is not None:
            self.nmse.append(float(nmse))


def lmmse_denoise(eig: OperatorEig, Aty, r2, gamma2, gamma_w, theta=None):
    """x2 = (gamma2 I + gamma_w A^T A)^-1 (gamma2 r2 + gamma_w A^T y) via the cached eigenbasis.

    Works column-wise on (N, L) inputs with one gamma2 per column. Returns
    (x2, eta2) with 1/eta2 = mean_n 1/(gamma2 + gamma_w s_n).
    """
    if theta is not None and eig.source_theta is not None:
        if not np.array_equal(np.ravel(theta), np.ravel(eig.source_theta)):
            raise StaleEigenError("eigendecomposition was computed for a different theta_A")
    Aty = np.asarray(Aty, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    vec = r2.ndim == 1
    if vec:
        Aty, r2 = Aty[:, None], r2[:, None]
    g2 = np.broadcast_to(np.asarray(gamma2, dtype=float), (r2.shape[1],))
    d = 1.0 / (g2[None, :] + gamma_w * eig.s[:, None])
    z = eig.u.T @ (g2[None, :] * r2 + gamma_w * Aty)
    x2 = eig.u @ (d * z)
    eta2 = 1.0 / np.mean(d, axis=0)
    if vec:
        return x2[:, 0], float(eta2[0])
    return x2, eta2


def extrinsic(eta, xhat, gamma, r, zeta=1.0, prev=None, gamma_min=1e-6, gamma_max=1e11):
    """Extrinsic message (gamma_new, r_new) from a posterior (xhat, eta) and its input (r, gamma).

    Precision is clamped to [gamma_min, gamma_max]. The mean uses the unclamped
    difference eta - gamma, except where the lower clamp fires: there r_new = xhat.
    With ``prev`` = (gamma_prev, r_prev) the result is damped by ``zeta``.
    """
    eta = np.asarray(eta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    xhat = np.asarray(xhat, dtype=float)
    r = np.asarray(r, dtype=float)
    diff = eta - gamma
    g_new = np.clip(diff, gamma_min, gamma_max)
    # below the floor the message carries no usable mean; dividing by a tiny or
    # negative difference would blow r up
    ok = diff >= gamma_min
    safe = np.where(ok, diff, 1.0)
    r_new = np.where(ok, (eta * xhat - gamma * r) / safe, xhat)
    if prev is not None and zeta != 1.0:
        g_prev, r_prev = prev
        g_new = (1 - zeta) * np.asarray(g_prev) + zeta * g_new
        r_new = (1 - zeta) * np.asarray(r_prev) + zeta * r_new
    if g_new.ndim == 0:
        g_new = float(g_new)
    return g_new, r_new


def posterior_precision(gamma, alpha, gamma_min, gamma_max):
    """eta from gamma / <g'>, clamped into the precision range."""
    with np.errstate(divide="ignore"):
        eta = np.asarray(gamma, dtype=float) / np.asarray(alpha, dtype=float)
    return np.clip(eta, gamma_min, gamma_max)


def relative_change(new, old):
    den = np.linalg.norm(old)
    if den == 0:
        return np.inf if np.linalg.norm(new) > 0 else 0.0
    return np.linalg.norm(new - old) / den


def run_vamp(A, y, prior: PriorParams, gamma_w, cfg: SolverConfig = SolverConfig(),
             r1=None, gamma1=1e-2, x_true=None,
             callback: Optional[Callable[[int, ColumnState], None]] = None):
    """Plain VAMP for y = A x + w with known A, prior and noise precision.

    ``y`` may hold several columns; each has its own messages. Returns
    (xhat, history) where xhat is the prior-side posterior mean.
    """
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float)
    vec = y.ndim == 1
    Y = y[:, None] if vec else y
    N, L = A.shape[1], Y.shape[1]
    lo, hi = cfg.gamma_min, cfg.gamma_max
    eig = eig_gram(A)
    AtY = A.T @ Y
    st = ColumnState(r1=np.zeros((N, L)) if r1 is None else np.array(r1, dtype=float).reshape(N, L),
                     gamma1=np.broadcast_to(np.asarray(gamma1, dtype=float), (L,)).copy())
    hist = History()
    x_prev = None
    for t in range(cfg.t_max):
        d = denoise(prior, st.r1, st.gamma1)
        st.x1 = d.xhat
        st.eta1 = posterior_precision(st.gamma1, d.alpha, lo, hi)
        prev2 = (st.gamma2, st.r2) if cfg.damp_both and st.r2 is not None else None
        st.gamma2, st.r2 = extrinsic(st.eta1, st.x1, st.gamma1, st.r1, cfg.zeta, prev=prev2,
                                     gamma_min=lo, gamma_max=hi)
        st.x2, st.eta2 = lmmse_denoise(eig, AtY, st.r2, st.gamma2, gamma_w)
        st.eta2 = np.clip(st.eta2, lo, hi)
        nmse = None
        if x_true is not None:
            xt = np.reshape(x_true, (N, L))
            nmse = np.sum((st.x1 - xt) ** 2) / max(np.sum(xt ** 2), 1e-300)
        hist.log(st, gamma_w, nmse)
        if callback is not None:
            callback(t, st)
        st.gamma1, st.r1 = extrinsic(st.eta2, st.x2, st.gamma2, st.r2, cfg.zeta,
                                     prev=(st.gamma1, st.r1), gamma_min=lo, gamma_max=hi)
        if x_prev is not None and relative_change(st.x1, x_prev) <= cfg.tol:
            break
        x_prev = st.x1
    xhat = st.x1[:, 0] if vec else st.x1
    return xhat, hist
