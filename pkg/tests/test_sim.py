from types import SimpleNamespace

import numpy as np
import pytest

from harqnc.channel import RTX, TX
from harqnc.encoder import REASON_OMEGA_CAP, REASON_POLICY, REASON_TAU0
from harqnc.sim import (Policy, Prepared, analytic_loss, baseline_policy, evaluate_loss, monte_carlo,
                        monte_carlo_runs, run_episode, simulate_batch)
from builders import pendulum, pendulum_with_rates, scenario


def test_noise_free_zero_trajectory():
    cfg = scenario(W=0.0, V=0.0, M0=0.0, m0=0.0, test_mode=True, N=10)
    tr = run_episode(cfg)
    assert np.all(tr.x == 0) and np.all(tr.a == 0) and np.all(tr.x_hat == 0)
    assert tr.loss == 0.0 and evaluate_loss(tr, cfg.cost) == 0.0


def test_loss_hand_arithmetic():
    trace = SimpleNamespace(x=np.array([[1.0], [0.25]]), a=np.array([[-0.5]]), N=0)
    cost = scenario(Q=1.0, R=1.0).cost
    assert evaluate_loss(trace, cost) == pytest.approx(1.3125)


def test_stage_costs_sum_to_loss():
    cfg = pendulum(N=80)
    tr = run_episode(cfg, run_index=4)
    assert abs(tr.stage_cost.sum() - evaluate_loss(tr, cfg.cost)) <= 1e-12 * max(1.0, tr.loss)
    assert abs(tr.loss - evaluate_loss(tr, cfg.cost)) <= 1e-12 * max(1.0, tr.loss)


def test_pendulum_single_run_counts():
    cfg = pendulum()
    tr = run_episode(cfg, run_index=0)
    assert tr.tx_count + tr.rtx_count == cfg.N + 1
    assert tr.pl_count == int((tr.gamma == 0).sum())
    # loose bands around the expected counts for this channel
    assert 300 <= tr.tx_count <= 500 and 30 <= tr.rtx_count <= 200 and 100 <= tr.pl_count <= 320


@pytest.mark.parametrize("policy", ["harq_optimal", "age_threshold(1)"])
def test_all_erased_runs_open_loop(policy):
    cfg = pendulum_with_rates([1.0, 1.0], N=30)
    tr = simulate_batch(Prepared(cfg), [0], policy, check=True).trace(0)
    assert tr.gamma.sum() == 0 and np.all(tr.delivered_origin == -1)
    x_hat = cfg.system.m0.copy()
    for k in range(cfg.N + 1):
        np.testing.assert_allclose(tr.x_hat[k], x_hat, atol=1e-12)
        x_hat = cfg.system.A[k] @ x_hat + cfg.system.B[k] @ tr.a[k]


def test_all_erased_threshold_rule_ties_to_tx():
    # both terms of the statistic vanish when every attempt fails
    tr = run_episode(pendulum_with_rates([1.0, 1.0], N=30))
    assert tr.rtx_count == 0 and np.all(tr.tau[1:] == 1)
    assert np.all(np.nan_to_num(tr.omega[1:]) == 0)


def test_all_erased_age_grows_to_cap():
    cfg = pendulum_with_rates([1.0, 1.0], N=30)
    tr = run_episode(cfg, policy="age_threshold(1)")
    np.testing.assert_array_equal(tr.tau[:6], [0, 1, 2, 1, 2, 1])
    capped = tr.tau > cfg.channel.omega_max
    assert capped.any() and np.all(tr.u[capped] == TX)
    assert np.all(tr.reason[capped] == REASON_OMEGA_CAP)


def test_near_total_erasure_reaches_cap_under_threshold_rule():
    tr = run_episode(pendulum_with_rates([1.0, 0.999], N=200))
    assert (tr.reason == REASON_OMEGA_CAP).sum() > 0 and tr.rtx_count > 0


def test_perfect_channel_never_retransmits():
    cfg = pendulum_with_rates([0.0, 0.0], N=50)
    res = simulate_batch(Prepared(cfg), np.arange(50), check=True)
    assert res.rtx_count.sum() == 0 and res.pl_count.sum() == 0
    assert np.all(res.reason == REASON_TAU0)


def test_equal_rates_degenerate_to_always_tx():
    cfg = pendulum_with_rates([0.4, 0.4], N=80)
    prep = Prepared(cfg)
    a = simulate_batch(prep, np.arange(40))
    b = simulate_batch(prep, np.arange(40), "always_tx")
    assert a.rtx_count.sum() == 0
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.loss, b.loss)


def test_always_tx_never_retransmits():
    res = simulate_batch(Prepared(pendulum(N=100)), np.arange(20), "always_tx")
    assert res.rtx_count.sum() == 0
    assert res.reason_counts[:, 3].sum() > 0


def test_random_zero_equals_always_tx():
    prep = Prepared(pendulum(N=100))
    a = simulate_batch(prep, np.arange(20), "random(0)")
    b = simulate_batch(prep, np.arange(20), "always_tx")
    for name in ("x", "u", "gamma", "tau", "a", "x_hat"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def test_random_one_retransmits_whenever_allowed():
    res = simulate_batch(Prepared(pendulum(N=100)), np.arange(20), "random(1)")
    free = (res.tau >= 1) & (res.tau <= 1)
    assert np.all(res.u[free] == RTX)


def test_age_threshold_retransmits():
    res = monte_carlo_runs(pendulum(), "age_threshold(1)", runs=500, workers=1)
    assert res.rtx.sum() > 0


def test_baseline_policy_factory():
    assert baseline_policy("random", 0.2).spec.param == 0.2
    assert Policy(baseline_policy("always_tx").spec).kind == "always_tx"
    with pytest.raises(ValueError):
        baseline_policy("harq_optimal")


def test_baseline_reasons_distinguish_free_steps():
    tr = run_episode(pendulum(N=200), policy="age_threshold(1)")
    assert set(np.unique(tr.reason)) <= {REASON_TAU0, REASON_OMEGA_CAP, REASON_POLICY}


def test_exact_residual_policy_runs_on_scalar():
    cfg = scenario(A=1.2, N=6, runs=400)
    res = monte_carlo(cfg, ["harq_optimal_exact_delta", "harq_optimal"], workers=1)
    assert res["policies"][0]["runs"] == 400
    exact = simulate_batch(Prepared(cfg), np.arange(100), "harq_optimal_exact_delta", check=True)
    assert np.isfinite(exact.delta[exact.tau == 1]).all()


def test_runs_one_summary():
    cfg = pendulum(N=40, runs=1)
    summary = monte_carlo(cfg, workers=1)
    tr = run_episode(cfg)
    assert summary["policies"][0]["loss"]["mean"] == pytest.approx(tr.loss, rel=1e-12)
    assert summary["policies"][0]["loss"]["se"] == 0.0


def test_batch_composition_does_not_change_runs():
    prep = Prepared(pendulum(N=60))
    whole = simulate_batch(prep, np.arange(12), record=True)
    for i in (0, 5, 11):
        single = simulate_batch(prep, [i], record=True)
        np.testing.assert_array_equal(single.x[0], whole.x[i])
        assert single.loss[0] == whole.loss[i]


def test_chunking_and_workers_are_deterministic():
    cfg = pendulum(N=50)
    a = monte_carlo_runs(cfg, runs=37, workers=1, chunk=5)
    b = monte_carlo_runs(cfg, runs=37, workers=1)
    c = monte_carlo_runs(cfg, runs=37, workers=2, chunk=10)
    for other in (b, c):
        np.testing.assert_array_equal(a.loss, other.loss)
        np.testing.assert_array_equal(a.tx, other.tx)


def test_worker_count_from_environment(monkeypatch):
    from harqnc.sim import default_workers
    monkeypatch.setenv("HARQ_NC_WORKERS", "3")
    assert default_workers() == 3


def test_common_random_numbers_pair_policies():
    cfg = pendulum(N=100, runs=60)
    out = monte_carlo(cfg, ["harq_optimal", "always_tx"], workers=1)
    a, b = out["policies"]
    assert out["paired"][0]["mean_diff"] == pytest.approx(a["loss"]["mean"] - b["loss"]["mean"], abs=1e-12)
    # x_0 and the first measurement share draws across policies
    prep = Prepared(cfg)
    ra = simulate_batch(prep, [3], "harq_optimal")
    rb = simulate_batch(prep, [3], "always_tx")
    np.testing.assert_array_equal(ra.x[0, 0], rb.x[0, 0])
    np.testing.assert_array_equal(ra.y[0, 0], rb.y[0, 0])


def test_markov_fading_erasure_statistics():
    cfg = pendulum(N=300).with_overrides()
    from harqnc.model import ChannelSpec
    spec = ChannelSpec(1, np.array([[0.5, 0.05], [0.8, 0.3]]), np.array([[0.9, 0.1], [0.2, 0.8]]), 0)
    cfg = cfg.with_overrides(channel=spec)
    res = simulate_batch(Prepared(cfg), np.arange(200), check=True)
    assert set(np.unique(res.fading)) == {0, 1}
    summary = monte_carlo(cfg.with_overrides(runs=200), workers=1)["policies"][0]
    assert abs(summary["erasure"]["z_score"]) < 4


def test_time_varying_system_invariants():
    N = 30
    doc_cfg = scenario(N=N, lam=(0.6, 0.2, 0.05), omega_max=2)
    from harqnc.model import Schedule, SystemModel
    sys = doc_cfg.system
    A = Schedule([np.array([[1.0 + 0.3 * np.sin(k)]]) for k in range(N + 1)], time_varying=True)
    W = Schedule([np.array([[0.5 + 0.1 * k]]) for k in range(N + 1)], time_varying=True)
    sys = SystemModel(A=A, B=sys.B, C=sys.C, W=W, V=sys.V, m0=np.array([1.0]), M0=sys.M0)
    cfg = doc_cfg.with_overrides(system=sys)
    res = simulate_batch(Prepared(cfg), np.arange(200), check=True)
    assert res.max_check["e_tilde"] <= 1e-9 and res.max_check["e_hat"] <= 1e-9


def test_analytic_loss_scalar_hand_value():
    cfg = scenario(A=1.0, B=1.0, Q=1.0, R=1.0, W=1.0, V=1.0, M0=1.0, m0=0.0, N=1, lam=(0.0, 0.0))
    # S = [1.6, 1.5, 1], Gamma_0 = (S1 B A)^2/(S1+1) at S1 = 1.5
    S1, S2 = 1.5, 1.0
    S0 = 1 + S1 - S1 ** 2 / (S1 + 1)
    G0, G1 = S1 ** 2 / (S1 + 1), S2 ** 2 / (S2 + 1)
    M1 = 0.5 + 1.0
    expected = (S0 * 1.0 + S1 + S2 + G0 * 1.0 + G1 * M1) / 2
    assert analytic_loss(cfg) == pytest.approx(expected, rel=1e-12)
