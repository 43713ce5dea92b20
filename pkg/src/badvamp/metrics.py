"""NMSE metrics in dB, with the scalar and generalized-permutation ambiguities minimized out."""
import numpy as np
from scipy.optimize import linear_sum_assignment

FLOOR_DB = -100.0


def to_db(ratio):
    ratio = float(ratio)
    if np.isnan(ratio):
        return float("nan")
    return float(10 * np.log10(max(ratio, 10 ** (FLOOR_DB / 10))))


def nmse_db(x_true, x_hat):
    x_true = np.asarray(x_true, dtype=float)
    x_hat = np.asarray(x_hat, dtype=float)
    den = np.sum(x_true ** 2)
    if den == 0:
        raise ValueError("reference has zero energy")
    return to_db(np.sum((x_true - x_hat) ** 2) / den)


def best_scale(a, a_hat):
    """argmin_lambda ||a - lambda a_hat||^2 (0 when a_hat vanishes)."""
    den = np.sum(a_hat ** 2)
    return 0.0 if den == 0 else float(np.sum(a * a_hat) / den)


def nmse_scalar_ambiguity(A_true, A_hat):
    A = np.asarray(A_true, dtype=float)
    Ah = np.asarray(A_hat, dtype=float)
    if A.shape != Ah.shape:
        raise ValueError("shape mismatch")
    lam = best_scale(A, Ah)
    return to_db(np.sum((A - lam * Ah) ** 2) / np.sum(A ** 2))


def genperm_match(A_true, A_hat):
    """Optimal column assignment and scales: column perm[j] of A_hat, times scale[j], matches column j of A."""
    A = np.asarray(A_true, dtype=float)
    Ah = np.asarray(A_hat, dtype=float)
    if A.shape != Ah.shape:
        raise ValueError("shape mismatch")
    norm_a = np.sum(A ** 2, axis=0)          # (N,)
    norm_h = np.sum(Ah ** 2, axis=0)         # (N,)
    cross = A.T @ Ah                          # cross[i, j] = <a_i, ahat_j>
    safe = np.where(norm_h > 0, norm_h, 1.0)
    gain = np.where(norm_h[None, :] > 0, cross ** 2 / safe[None, :], 0.0)
    cost = np.maximum(norm_a[:, None] - gain, 0.0)
    rows, cols = linear_sum_assignment(cost)
    scale = np.where(norm_h[cols] > 0, cross[rows, cols] / safe[cols], 0.0)
    return cols, scale


def nmse_genperm_ambiguity(A_true, A_hat):
    A = np.asarray(A_true, dtype=float)
    Ah = np.asarray(A_hat, dtype=float)
    perm, scale = genperm_match(A, Ah)
    err = np.sum((A - Ah[:, perm] * scale[None, :]) ** 2)
    return to_db(err / np.sum(A ** 2))


def rank1_nmse(b_true, c_true, b_hat, c_hat):
    ref = np.outer(b_true, c_true)
    den = np.sum(ref ** 2)
    if den == 0:
        raise ValueError("true outer product is zero")
    return to_db(np.sum((np.outer(b_hat, c_hat) - ref) ** 2) / den)
