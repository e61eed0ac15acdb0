import numpy as np
import pytest

from harqnc.channel import RTX, TX, ProtocolError
from harqnc.decoder import control_input, update_estimate
from harqnc.lqr import riccati_backward
from harqnc.sim import Prepared, simulate_batch
from builders import pendulum, pendulum_with_rates

A2 = np.full((3, 1, 1), 2.0)
B1 = np.ones((3, 1, 1))


def test_erasure_propagates_previous_estimate():
    a_win = np.array([[0.5], [0.0], [0.0]])
    got = update_estimate(np.array([1.0]), False, np.zeros(1), -1, TX, 0, a_win, A2, B1, k=4)
    assert got[0] == pytest.approx(2.5)


def test_tx_delivery_propagates_one_step():
    a_win = np.array([[0.5], [0.0], [0.0]])
    got = update_estimate(np.array([9.0]), True, np.array([1.0]), 3, TX, 0, a_win, A2, B1, k=4)
    assert got[0] == pytest.approx(2.5)


def test_rtx_delivery_propagates_from_origin():
    a_win = np.array([[-1.0], [0.5], [0.0]])
    got = update_estimate(np.array([9.0]), True, np.array([1.0]), 2, RTX, 1, a_win, A2, B1, k=4)
    assert got[0] == pytest.approx(4.0)


def test_origin_inconsistent_with_age_rejected():
    a_win = np.zeros((3, 1))
    with pytest.raises(ProtocolError):
        update_estimate(np.zeros(1), True, np.ones(1), 1, RTX, 1, a_win, A2, B1, k=4)


def test_batched_branches():
    a_win = np.array([[[-1.0], [0.5], [0.0]], [[0.5], [0.0], [0.0]]]).transpose(1, 0, 2)
    got = update_estimate(np.array([[9.0], [1.0]]), np.array([True, False]), np.array([[1.0], [0.0]]),
                          np.array([2, -1]), np.array([RTX, TX]), np.array([1, 0]), a_win, A2, B1, k=4)
    np.testing.assert_allclose(got[:, 0], [4.0, 2.5])


def test_control_examples():
    assert np.all(control_input(np.zeros(4), np.ones((1, 4))) == 0)
    assert control_input(np.array([2.0]), np.array([[0.5]]))[0] == pytest.approx(-1.0)


def test_pendulum_first_control():
    cfg = pendulum()
    sys, cost = cfg.system, cfg.cost
    g = riccati_backward(sys, cost, cfg.N)
    A, B, S1 = sys.A[0], sys.B[0], g.S[1]
    L0 = np.linalg.solve(B.T @ S1 @ B + cost.R[0], B.T @ S1 @ A)
    np.testing.assert_allclose(control_input(sys.m0, g.L[0]), -L0 @ sys.m0, atol=1e-12)


def _within(sample, target, z=5.0):
    se = sample.std(axis=0, ddof=1) / np.sqrt(len(sample))
    return np.all(np.abs(sample.mean(axis=0) - target) <= z * se + 1e-12)


def test_estimate_is_conditional_mean_on_erased_prefixes():
    cfg = pendulum(N=6)
    res = simulate_batch(Prepared(cfg), np.arange(10_000), record=True)
    for k in range(1, 4):
        erased = np.all(res.gamma[:, :k] == 0, axis=1)
        patterns, counts = np.unique(res.u[erased, :k], axis=0, return_counts=True)
        for pattern in patterns[counts >= 100]:
            sel = erased & np.all(res.u[:, :k] == pattern, axis=1)
            x_hat = res.x_hat[sel, k]
            assert np.abs(x_hat - x_hat[0]).max() <= 1e-12
            assert _within(res.x[sel, k], x_hat[0])


def test_estimate_is_conditional_mean_when_everything_is_erased():
    cfg = pendulum_with_rates([1.0, 1.0], N=15)
    res = simulate_batch(Prepared(cfg), np.arange(10_000), record=True)
    assert res.gamma.sum() == 0
    for k in range(cfg.N + 1):
        assert _within(res.x[:, k], res.x_hat[0, k])


def test_decoder_error_has_zero_mean():
    cfg = pendulum(N=40)
    res = simulate_batch(Prepared(cfg), np.arange(5000), record=True)
    err = res.x[:, :cfg.N + 1] - res.x_hat
    for k in (5, 20, 40):
        assert _within(err[:, k], 0.0)
