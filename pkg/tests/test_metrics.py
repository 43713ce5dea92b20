import itertools

import numpy as np
import pytest

from badvamp.metrics import (FLOOR_DB, best_scale, nmse_db, nmse_genperm_ambiguity,
                             nmse_scalar_ambiguity, rank1_nmse, to_db)


def exhaustive_genperm(A, Ah):
    best = np.inf
    for perm in itertools.permutations(range(A.shape[1])):
        P = Ah[:, list(perm)]
        err = 0.0
        for j in range(A.shape[1]):
            lam = P[:, j] @ A[:, j] / (P[:, j] @ P[:, j])
            err += np.sum((A[:, j] - lam * P[:, j]) ** 2)
        best = min(best, err)
    return to_db(best / np.sum(A ** 2))


def test_floor():
    assert to_db(0.0) == FLOOR_DB
    assert np.isnan(to_db(np.nan))


def test_plain_nmse():
    assert nmse_db([1.0, 0.0], [1.0, 0.1]) == pytest.approx(-20.0)
    with pytest.raises(ValueError):
        nmse_db([0.0], [1.0])


@pytest.mark.parametrize("scale", [2.0, -1.0, 0.3])
def test_scalar_ambiguity_removed(scale):
    A = np.random.default_rng(0).standard_normal((4, 3))
    assert nmse_scalar_ambiguity(A, scale * A) == FLOOR_DB


def test_scalar_beats_scan():
    rng = np.random.default_rng(1)
    A, Ah = rng.standard_normal((5, 4)), rng.standard_normal((5, 4))
    lam = best_scale(A, Ah)
    scan = np.linspace(lam - 5, lam + 5, 100_001)
    errs = [np.sum((A - s * Ah) ** 2) for s in scan]
    assert np.sum((A - lam * Ah) ** 2) <= min(errs)
    assert nmse_scalar_ambiguity(A, Ah) == pytest.approx(to_db(min(errs) / np.sum(A ** 2)),
                                                         abs=1e-6)


def test_genperm_ambiguity_removed():
    rng = np.random.default_rng(2)
    for _ in range(20):
        A = rng.standard_normal((6, 5))
        perm = rng.permutation(5)
        D = rng.choice([2.0, -2.0, 0.5, -0.5], size=5)
        Ah = (A * D[None, :])[:, perm]
        assert nmse_genperm_ambiguity(A, Ah) == FLOOR_DB
    assert nmse_genperm_ambiguity(A, A) == FLOOR_DB


def test_genperm_equals_exhaustive_search():
    rng = np.random.default_rng(3)
    for _ in range(200):
        A, Ah = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
        assert nmse_genperm_ambiguity(A, Ah) == pytest.approx(exhaustive_genperm(A, Ah),
                                                              abs=1e-12)


def test_genperm_zero_column_estimate():
    A = np.eye(3)
    Ah = np.eye(3)
    Ah[:, 1] = 0
    assert nmse_genperm_ambiguity(A, Ah) == pytest.approx(to_db(1 / 3))


def test_rank1_scale_invariant():
    rng = np.random.default_rng(4)
    b, c = rng.standard_normal(3), rng.standard_normal(5)
    assert rank1_nmse(b, c, 2 * b, c / 2) == FLOOR_DB
    assert rank1_nmse(b, c, b, c) == FLOOR_DB


def test_rank1_small_perturbation():
    rng = np.random.default_rng(5)
    vals = []
    for _ in range(100):
        b, c = rng.standard_normal(8), rng.standard_normal(16)
        db = 1e-3 * np.linalg.norm(b) * rng.standard_normal(8) / np.sqrt(8)
        dc = 1e-3 * np.linalg.norm(c) * rng.standard_normal(16) / np.sqrt(16)
        vals.append(rank1_nmse(b, c, b + db, c + dc))
    assert abs(np.mean(vals) - (-60.0)) <= 3.0
