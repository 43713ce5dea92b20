"""Synthetic bilinear problems (CS with matrix uncertainty, self-calibration, dictionary learning) and oracles."""
import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import hadamard

from ._linalg import sym_solve
from .operators import AffineOperator, evaluate

log = logging.getLogger(__name__)

STRUCTURED = "structured"
UNSTRUCTURED = "unstructured"
ILL_CONDITIONED = "ill_conditioned"


@dataclass
class ProblemInstance:
    Y: np.ndarray
    op: AffineOperator
    theta_true: Optional[np.ndarray]
    A_true: np.ndarray
    X_true: np.ndarray
    support_true: np.ndarray
    gamma_w_true: float  # inf when noiseless
    meta: dict = field(default_factory=dict)

    @property
    def noiseless(self):
        return not np.isfinite(self.gamma_w_true)

    def to_json(self):
        """JSON container; matrices are nested row-major lists, the basis a list of them."""
        op = self.op
        doc = {
            "format": "badvamp-instance/1",
            "meta": self.meta,
            "dims": {"M": op.M, "N": op.N, "Q": op.Q, "L": int(self.Y.shape[1])},
            "unstructured": bool(op.unstructured),
            "Y": self.Y.tolist(),
            "A0": op.a0.tolist(),
            "basis": [] if op.unstructured else op.basis.tolist(),
            "theta_true": None if self.theta_true is None or op.unstructured
            else np.asarray(self.theta_true).tolist(),
            "A_true": self.A_true.tolist(),
            "X_true": self.X_true.tolist(),
            "support_true": self.support_true.astype(int).tolist(),
            "gamma_w_true": None if self.noiseless else float(self.gamma_w_true),
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        M, N = doc["dims"]["M"], doc["dims"]["N"]
        if doc["unstructured"]:
            op = AffineOperator.free(M, N)
        else:
            basis = np.asarray(doc["basis"], dtype=float).reshape(-1, M, N)
            op = AffineOperator(a0=np.asarray(doc["A0"], dtype=float), basis=basis)
        theta = doc["theta_true"]
        gw = doc["gamma_w_true"]
        return cls(Y=np.asarray(doc["Y"], dtype=float), op=op,
                   theta_true=None if theta is None else np.asarray(theta, dtype=float),
                   A_true=np.asarray(doc["A_true"], dtype=float),
                   X_true=np.asarray(doc["X_true"], dtype=float),
                   support_true=np.asarray(doc["support_true"], dtype=bool),
                   gamma_w_true=np.inf if gw is None else float(gw), meta=doc["meta"])


def sparse_columns(rng, N, L, K):
    """N x L matrix whose columns have exactly K N(0,1) nonzeros on uniform random supports."""
    X = np.zeros((N, L))
    supp = np.zeros((N, L), dtype=bool)
    for l in range(L):
        idx = rng.choice(N, size=K, replace=False)
        supp[idx, l] = True
        X[idx, l] = rng.standard_normal(K)
    return X, supp


def add_noise(rng, Z, snr_db):
    """Noise precision from the realized signal power of Z, plus a noise draw."""
    if snr_db is None:
        return Z.copy(), np.inf
    M, L = Z.shape
    power = np.sum(Z ** 2)
    gamma_w = M * L * 10 ** (snr_db / 10) / power
    W = rng.standard_normal(Z.shape) / np.sqrt(gamma_w)
    return Z + W, gamma_w


def _check_snr(Y, Z, snr_db, meta):
    if snr_db is None:
        return
    noise = np.sum((Y - Z) ** 2)
    realized = 10 * np.log10(np.sum(Z ** 2) / noise)
    meta["snr_realized_db"] = float(realized)
    if Y.size >= 1000 and abs(realized - snr_db) > 0.5:
        log.warning("realized SNR %.2f dB misses target %.2f dB", realized, snr_db)


def gen_csmu(M, N, Q, K, snr_db=40.0, mu=0.0, seed=0) -> ProblemInstance:
    if not (0 < K <= N and Q >= 1 and M >= 1):
        raise ValueError("need 0 < K <= N, Q >= 1, M >= 1")
    rng = np.random.default_rng(seed)
    a0 = mu + np.sqrt(20.0) * rng.standard_normal((M, N))
    basis = mu + rng.standard_normal((Q, M, N))
    op = AffineOperator(a0=a0, basis=basis)
    b = rng.standard_normal(Q)
    c, supp = sparse_columns(rng, N, 1, K)
    A = evaluate(op, b)
    Z = A @ c
    Y, gw = add_noise(rng, Z, snr_db)
    meta = dict(problem="csmu", M=M, N=N, Q=Q, K=K, snr_db=snr_db, mu=mu, seed=seed)
    _check_snr(Y, Z, snr_db, meta)
    return ProblemInstance(Y=Y, op=op, theta_true=b, A_true=A, X_true=c,
                           support_true=supp, gamma_w_true=gw, meta=meta)


def gen_selfcal(M, N, Q, K, seed=0, columns=None) -> ProblemInstance:
    """y = Diag(H b) Psi c with H made of Q distinct Sylvester-Hadamard columns (M a power of two)."""
    if M < 1 or M & (M - 1):
        raise ValueError("self-calibration needs M to be a power of two")
    if not (1 <= Q <= M and 0 < K <= N):
        raise ValueError("need 1 <= Q <= M and 0 < K <= N")
    rng = np.random.default_rng(seed)
    psi = rng.standard_normal((M, N))
    if columns is None:
        columns = np.sort(rng.choice(M, size=Q, replace=False))
    columns = np.asarray(columns)
    if len(columns) != Q or len(set(columns.tolist())) != Q:
        raise ValueError("need Q distinct Hadamard columns")
    H = hadamard(M).astype(float)[:, columns]
    basis = H.T[:, :, None] * psi[None, :, :]
    op = AffineOperator(a0=np.zeros((M, N)), basis=basis)
    b = rng.standard_normal(Q)
    c, supp = sparse_columns(rng, N, 1, K)
    A = evaluate(op, b)
    meta = dict(problem="selfcal", M=M, N=N, Q=Q, K=K, seed=seed,
                columns=[int(j) for j in columns])
    return ProblemInstance(Y=A @ c, op=op, theta_true=b, A_true=A, X_true=c,
                           support_true=supp, gamma_w_true=np.inf,
                           meta=meta)


def haar_orthogonal(rng, n):
    """Haar-distributed orthogonal matrix: QR of a Gaussian with the diagonal sign fix."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))[None, :]


def geometric_spectrum(N, kappa):
    """Singular values s_i = s_0 rho^i with rho = kappa^(1/(N-1)) and sum s_i^2 = N, largest first."""
    if kappa < 1:
        raise ValueError("condition number must be >= 1")
    if N == 1:
        return np.ones(1)
    rho = kappa ** (1.0 / (N - 1))
    s = rho ** -np.arange(N, dtype=float)
    return s * np.sqrt(N / np.sum(s ** 2))


def dl_training_length(N):
    return int(np.ceil(5 * N * np.log(N)))


def gen_dl(N, L=None, K=None, mode=UNSTRUCTURED, snr_db=None, seed=0, kappa=1.0,
           Q=None) -> ProblemInstance:
    """Square dictionary learning Y = A X (+ W) with K-sparse columns of X."""
    if L is None:
        L = dl_training_length(N)
    if K is None:
        K = max(1, int(round(0.2 * N)))
    if not 0 < K <= N:
        raise ValueError("need 0 < K <= N")
    rng = np.random.default_rng(seed)
    theta = None
    if mode == STRUCTURED:
        Q = N if Q is None else Q
        basis = rng.standard_normal((Q, N, N))
        op = AffineOperator(a0=np.zeros((N, N)), basis=basis)
        theta = rng.standard_normal(Q)
        A = evaluate(op, theta)
    elif mode == UNSTRUCTURED:
        op = AffineOperator.free(N, N)
        A = rng.standard_normal((N, N))
        theta = A.ravel().copy()
    elif mode == ILL_CONDITIONED:
        s = geometric_spectrum(N, kappa)
        U = haar_orthogonal(rng, N)
        V = haar_orthogonal(rng, N)
        A = (U * s[None, :]) @ V.T
        op = AffineOperator.free(N, N)
        theta = A.ravel().copy()
    else:
        raise ValueError(f"unknown dictionary mode {mode!r}")
    X, supp = sparse_columns(rng, N, L, K)
    Z = A @ X
    Y, gw = add_noise(rng, Z, snr_db)
    meta = dict(problem="dl", mode=mode, N=N, L=L, K=K, snr_db=snr_db, kappa=kappa,
                Q=op.Q, seed=seed)
    _check_snr(Y, Z, snr_db, meta)
    return ProblemInstance(Y=Y, op=op, theta_true=theta, A_true=A, X_true=X,
                           support_true=supp, gamma_w_true=gw, meta=meta)


def _gauss_posterior_mean(G, z, gamma_w, prior_var=1.0):
    """Mean of N(0, prior_var I) prior through z = G v + N(0, I/gamma_w); least squares if noiseless."""
    if np.isfinite(gamma_w):
        S = gamma_w * G.T @ G + np.eye(G.shape[1]) / prior_var
        rhs = gamma_w * G.T @ z
    else:
        S = G.T @ G
        rhs = G.T @ z
    v = sym_solve(S, rhs)
    if v is None:
        v = np.linalg.lstsq(G, z, rcond=None)[0]
    return v


def oracle_b_given_c(inst: ProblemInstance):
    op = inst.op
    c = inst.X_true[:, 0]
    G = np.stack([Ai @ c for Ai in op.basis], axis=1)
    z = inst.Y[:, 0] - op.a0 @ c
    return _gauss_posterior_mean(G, z, inst.gamma_w_true)


def oracle_X_given_A_support(inst: ProblemInstance, A=None):
    A = inst.A_true if A is None else A
    Xh = np.zeros_like(inst.X_true)
    for l in range(Xh.shape[1]):
        s = inst.support_true[:, l]
        if s.any():
            Xh[s, l] = _gauss_posterior_mean(A[:, s], inst.Y[:, l], inst.gamma_w_true)
    return Xh


def oracle_c_given_b_support(inst: ProblemInstance):
    return oracle_X_given_A_support(inst)


def oracle_A_given_X(inst: ProblemInstance):
    X = inst.X_true
    At = sym_solve(X @ X.T, X @ inst.Y.T)
    if At is None:
        At = np.linalg.lstsq(X.T, inst.Y.T, rcond=None)[0]
    return At.T


ORACLES = {
    "b_given_c": oracle_b_given_c,
    "c_given_b_support": oracle_c_given_b_support,
    "A_given_X": oracle_A_given_X,
    "X_given_A_support": oracle_X_given_A_support,
}


def oracles(inst: ProblemInstance, which: str):
    try:
        fn = ORACLES[which]
    except KeyError:
        raise ValueError(f"unknown oracle {which!r}; choose from {sorted(ORACLES)}") from None
    return fn(inst)
