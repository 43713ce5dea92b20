import numpy as np
import pytest

from badvamp.denoisers import PriorParams
from badvamp.operators import AffineOperator, evaluate, precompute_grams
from badvamp.problems import gen_csmu
from badvamp.solver import (EmWorkspace, Hyperparams, em_update_A_unstructured,
                            em_update_gamma_w, em_update_thetaA, expected_loglik,
                            retune_gamma2, run_badvamp)
from badvamp.vamp import SolverConfig, run_vamp


def objective(op, theta, Y, X2, C):
    """||Y - A X2||^2 + tr(A C A^T), the quadratic the theta_A update minimizes."""
    A = evaluate(op, theta)
    return np.sum((Y - A @ X2) ** 2) + np.sum((A @ C) * A)


def random_psd(rng, n):
    B = rng.standard_normal((n, n))
    return B @ B.T / n


def test_theta_scalar_ratio():
    rng = np.random.default_rng(0)
    X2 = rng.standard_normal((3, 4))
    op = AffineOperator(a0=np.zeros((3, 3)), basis=np.eye(3)[None])
    Y = 2 * X2
    theta = em_update_thetaA(precompute_grams(op, Y), EmWorkspace(Csum=np.zeros((3, 3)), X2=X2))
    ratio = np.trace(Y.T @ X2) / np.trace(X2 @ X2.T)
    assert theta[0] == pytest.approx(ratio)
    assert theta[0] == pytest.approx(2.0)


def test_theta_exact_interpolation():
    rng = np.random.default_rng(1)
    op = AffineOperator(a0=rng.standard_normal((6, 5)), basis=rng.standard_normal((3, 6, 5)))
    theta_star = rng.standard_normal(3)
    X2 = rng.standard_normal((5, 8))
    Y = evaluate(op, theta_star) @ X2
    theta = em_update_thetaA(precompute_grams(op, Y), EmWorkspace(Csum=np.zeros((5, 5)), X2=X2))
    assert np.max(np.abs(theta - theta_star)) <= 1e-9


@pytest.mark.parametrize("seed", range(10))
def test_theta_is_stationary(seed):
    rng = np.random.default_rng(seed)
    Q = int(rng.integers(1, 6))
    op = AffineOperator(a0=rng.standard_normal((6, 5)), basis=rng.standard_normal((Q, 6, 5)))
    X2, Y, C = rng.standard_normal((5, 3)), rng.standard_normal((6, 3)), random_psd(rng, 5)
    ws = EmWorkspace(Csum=C, X2=X2)
    theta = em_update_thetaA(precompute_grams(op, Y), ws)
    h = 1e-5
    grad = np.array([(objective(op, theta + h * e, Y, X2, C)
                      - objective(op, theta - h * e, Y, X2, C)) / (2 * h) for e in np.eye(Q)])
    assert np.linalg.norm(grad) <= 1e-6 * np.linalg.norm(ws.beta)


def test_unstructured_recovers_exact_dictionary():
    rng = np.random.default_rng(2)
    A0 = rng.standard_normal((4, 4))
    X2 = rng.standard_normal((4, 4))
    A = em_update_A_unstructured(A0 @ X2, EmWorkspace(Csum=np.zeros((4, 4)), X2=X2))
    assert np.max(np.abs(A - A0)) <= 1e-9


def test_unstructured_scalar():
    ws = EmWorkspace(Csum=np.ones((1, 1)), X2=np.ones((1, 1)))
    assert em_update_A_unstructured(np.ones((1, 1)), ws)[0, 0] == pytest.approx(0.5)


@pytest.mark.parametrize("seed", range(3))
def test_unstructured_equals_elementary_basis(seed):
    rng = np.random.default_rng(seed)
    M, N, L = 3, 4, 6
    X2, Y, C = rng.standard_normal((N, L)), rng.standard_normal((M, L)), random_psd(rng, N)
    A_free = em_update_A_unstructured(Y, EmWorkspace(Csum=C, X2=X2))
    basis = np.eye(M * N).reshape(M * N, M, N)
    op = AffineOperator(a0=np.zeros((M, N)), basis=basis)
    theta = em_update_thetaA(precompute_grams(op, Y), EmWorkspace(Csum=C, X2=X2))
    assert np.max(np.abs(A_free - theta.reshape(M, N))) <= 1e-9


def test_gamma_w_zero_residual_clamps():
    rng = np.random.default_rng(3)
    A, X2 = rng.standard_normal((4, 3)), rng.standard_normal((3, 5))
    ws = EmWorkspace(Csum=np.zeros((3, 3)), X2=X2)
    assert em_update_gamma_w(A @ X2, A, ws, gamma_max=1e11) == 1e11


def test_gamma_w_pure_noise():
    Y = np.random.default_rng(4).standard_normal((4, 5))
    ws = EmWorkspace(Csum=np.zeros((3, 3)), X2=np.ones((3, 5)))
    assert em_update_gamma_w(Y, np.zeros((4, 3)), ws) == pytest.approx(20 / np.sum(Y ** 2))


def test_gamma_w_maximizes_expected_loglik():
    rng = np.random.default_rng(5)
    A, X2, Y, C = (rng.standard_normal((4, 3)), rng.standard_normal((3, 5)),
                   rng.standard_normal((4, 5)), random_psd(rng, 3))
    ws = EmWorkspace(Csum=C, X2=X2)
    gw = em_update_gamma_w(Y, A, ws)
    grid = np.logspace(-6, 6, 10_000)
    vals = [expected_loglik(Y, A, ws, g) for g in grid]
    k = int(np.argmax(vals))
    assert grid[max(k - 1, 0)] <= gw <= grid[min(k + 1, len(grid) - 1)]


def test_retune_gamma2_examples():
    x = np.arange(3.0)[:, None]
    assert retune_gamma2(x, x, np.array([3.0]))[0] == pytest.approx(3.0)
    assert retune_gamma2(np.array([[2.0]]), np.array([[0.0]]), np.array([1.0]))[0] == \
        pytest.approx(0.2)


@pytest.mark.parametrize("seed", range(10))
def test_known_operator_reduces_to_vamp(seed):
    rng = np.random.default_rng(seed)
    M, N, L = 30, 40, 2
    A = rng.standard_normal((M, N)) / np.sqrt(M)
    X = rng.standard_normal((N, L)) * (rng.random((N, L)) < 0.2)
    gw = 1e3
    Y = A @ X + rng.standard_normal((M, L)) / np.sqrt(gw)
    prior = PriorParams(lam=0.2, var=1.0).frozen()
    cfg = SolverConfig(t_max=40, tau1_max=0, tau2_max=0, learn_gamma_w=False, restarts=0,
                       tol=0)
    ours, ref = [], []
    run_badvamp(Y, AffineOperator.known(A), cfg=cfg,
                init=Hyperparams(theta_A=np.zeros(0), prior=prior, gamma_w=gw),
                callback=lambda t, st: ours.append(st.copy()))
    run_vamp(A, Y, prior, gw, cfg, callback=lambda t, st: ref.append(st.copy()))
    assert len(ours) == len(ref) == 40
    for a, b in zip(ours, ref):
        for name in ("r1", "gamma1", "x1", "eta1", "r2", "gamma2", "x2", "eta2"):
            assert np.max(np.abs(getattr(a, name) - getattr(b, name))) <= 1e-12, name


def test_csmu_smoke():
    inst = gen_csmu(40, 64, 5, 4, snr_db=40.0, seed=11)
    res = run_badvamp(inst.Y, inst.op, seed=1, sparsity_hint=4)
    assert res.X_hat.shape == (64, 1)
    assert res.theta_A_hat.shape == (5,)
    assert res.residual_db < -30


def test_restart_modes_validated():
    with pytest.raises(ValueError):
        SolverConfig(restart_mode="sometimes")


@pytest.mark.parametrize("bad", [dict(zeta=0), dict(zeta=1.5), dict(zeta_w=0),
                                 dict(gamma_min=1.0, gamma_max=0.5), dict(t_max=0),
                                 dict(restarts=-1)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        SolverConfig(**bad)


def test_fresh_restarts_are_deterministic():
    inst = gen_csmu(24, 64, 5, 6, snr_db=40.0, seed=3)
    cfg = SolverConfig(restart_mode="fresh", restart_db=-200, restarts=2, t_max=30)
    a = run_badvamp(inst.Y, inst.op, cfg=cfg, seed=9, sparsity_hint=6)
    b = run_badvamp(inst.Y, inst.op, cfg=cfg, seed=9, sparsity_hint=6)
    assert a.restarts_used == 2
    np.testing.assert_array_equal(a.X_hat, b.X_hat)


def test_operator_shape_checked():
    with pytest.raises(ValueError):
        run_badvamp(np.ones((3, 2)), AffineOperator.known(np.eye(4)))
