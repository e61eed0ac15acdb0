"""Closed-loop simulation, loss evaluation and Monte Carlo aggregation.

Runs are advanced in lockstep as numpy batches; every run draws its noise
from its own seed substreams, so a run's trace does not depend on which
other runs share its batch or worker.

Step order at time k: the plant emits y_k; the encoder filters and updates
the mismatch from the step-(k-1) acknowledgment; the decoder consumes z_k
and applies a_k = -L_k x_hat_k; the encoder chooses u_k and the channel
produces z_{k+1}, gamma_k and tau_{k+1}; the plant moves to x_{k+1}.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import dp_oracle
from .channel import RTX, TX, fading_successor, next_tau
from .decoder import control_input, update_estimate
from .encoder import (REASON_POLICY, REASON_THRESHOLD, compute_epsilon, decide, omega_gap,
                      update_mismatch)
from .estimator import CovarianceSchedule, covariance_schedule
from .linalg import mv, psd_factor, quad
from .lqr import GainSchedule, riccati_backward
from .model import CostSpec, PolicySpec, ScenarioConfig

CHUNK = 200
CHECK_TOL = 1e-9
QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


class InvariantViolation(AssertionError):
    pass


# ---------------------------------------------------------------------------
# policies


@dataclass(frozen=True)
class Policy:
    """Decision rule applied on free steps (1 <= tau <= omega_max).

    ``kind`` is ``threshold`` for the switching rule (with ``exact`` choosing
    the DP value residual) or one of the baselines.
    """

    spec: PolicySpec

    @property
    def kind(self) -> str:
        return "threshold" if self.spec.name.startswith("harq_optimal") else self.spec.name

    @property
    def exact(self) -> bool:
        return self.spec.name == "harq_optimal_exact_delta"

    def choose(self, tau, omega_max: int, omega, policy_u01):
        """Return ``(u, reason)`` arrays; forced branches are shared by all policies."""
        u, reason = decide(tau, omega_max, omega if self.kind == "threshold" else np.zeros(np.shape(tau)))
        if self.kind == "threshold":
            return u, reason
        free = reason == REASON_THRESHOLD
        if self.kind == "always_tx":
            want = np.zeros_like(free)
        elif self.kind == "random":
            want = policy_u01 < self.spec.param
        elif self.kind == "age_threshold":
            want = tau <= min(int(self.spec.param), omega_max)
        else:
            raise ValueError(f"unknown policy {self.spec}")
        u = np.where(free & want, RTX, TX)
        return u, np.where(free, REASON_POLICY, reason)


def baseline_policy(name: str, params=None) -> Policy:
    """Baseline decision rule by name: ``always_tx``, ``random`` (p) or ``age_threshold`` (d)."""
    if name not in ("always_tx", "random", "age_threshold"):
        raise ValueError(f"not a baseline policy: {name!r}")
    text = name if params is None else f"{name}({params})"
    return Policy(PolicySpec.parse(text))


# ---------------------------------------------------------------------------
# per-scenario precomputation


class Prepared:
    """Gain/covariance schedules and noise factors shared by every run of a scenario."""

    def __init__(self, cfg: ScenarioConfig, dp_resolution: tuple[int, int, int] = (201, 201, 33)):
        self.cfg = cfg
        self.sys = cfg.system
        self.N = cfg.N
        self.gains: GainSchedule = riccati_backward(cfg.system, cfg.cost, cfg.N)
        self.cov: CovarianceSchedule = covariance_schedule(cfg.system, cfg.N)
        self.dp_resolution = dp_resolution
        self.depth = cfg.channel.omega_max + 2
        sys = self.sys
        self._fW = [psd_factor(m) for m in sys.W.items()]
        self._fV = [psd_factor(m) for m in sys.V.items()]
        self.fM0 = psd_factor(sys.M0)

    def fW(self, k):
        return self._fW[k if self.sys.W.time_varying else 0]

    def fV(self, k):
        return self._fV[k if self.sys.V.time_varying else 0]

    def A(self, k):
        return self.sys.A[max(k, 0)]

    def B(self, k):
        return self.sys.B[max(k, 0)]

    @cached_property
    def dp_grids(self) -> list[dp_oracle.ValueGrid]:
        c1, c2, c4 = self.dp_resolution
        model = self.scalar_model
        return dp_oracle.backward_pass(model, c1, c2, c4)

    @cached_property
    def scalar_model(self) -> dp_oracle.ScalarModel:
        return dp_oracle.ScalarModel.from_config(self.cfg, self.gains, self.cov)

    def exact_delta(self, k, e, eps, tau, f):
        c4 = self.dp_resolution[2]
        return dp_oracle.exact_delta(self.dp_grids[k + 1], self.scalar_model, k, e[..., 0], eps[..., 0], tau, f, c4)


@dataclass
class Noise:
    """Standard-normal and uniform draws for a batch of runs (leading axis = run)."""

    x0: np.ndarray
    w: np.ndarray
    v: np.ndarray
    erasure: np.ndarray
    fading: np.ndarray
    policy: np.ndarray


def run_streams(seed: int, run_index: int) -> list[np.random.Generator]:
    """Independent generators (process, measurement, erasure, fading, policy) for one run."""
    root = np.random.SeedSequence(seed, spawn_key=(run_index,))
    return [np.random.default_rng(s) for s in root.spawn(5)]


def draw_noise(cfg: ScenarioConfig, run_indices) -> Noise:
    n, p, N = cfg.system.n, cfg.system.p, cfg.N
    parts = {key: [] for key in ("x0", "w", "v", "erasure", "fading", "policy")}
    for r in run_indices:
        proc, meas, era, fad, pol = run_streams(cfg.seed, int(r))
        parts["x0"].append(proc.standard_normal(n))
        parts["w"].append(proc.standard_normal((N + 1, n)))
        parts["v"].append(meas.standard_normal((N + 1, p)))
        parts["erasure"].append(era.random(N + 1))
        parts["fading"].append(fad.random(N + 1))
        parts["policy"].append(pol.random(N + 1))
    return Noise(**{key: np.stack(val) for key, val in parts.items()})


# ---------------------------------------------------------------------------
# traces


@dataclass
class BatchResult:
    """Simulation output for a batch of runs (leading axis = run).

    Per-step arrays are ``None`` when the batch was run without recording.
    """

    run_indices: np.ndarray
    policy: str
    loss: np.ndarray
    tx_count: np.ndarray
    rtx_count: np.ndarray
    pl_count: np.ndarray
    lam_sum: np.ndarray
    lam_var_sum: np.ndarray
    reason_counts: np.ndarray
    max_check: dict = field(default_factory=dict)
    x: np.ndarray | None = None
    y: np.ndarray | None = None
    a: np.ndarray | None = None
    x_hat: np.ndarray | None = None
    x_check: np.ndarray | None = None
    nu: np.ndarray | None = None
    e_tilde: np.ndarray | None = None
    u: np.ndarray | None = None
    gamma: np.ndarray | None = None
    tau: np.ndarray | None = None
    fading: np.ndarray | None = None
    lam: np.ndarray | None = None
    delivered_origin: np.ndarray | None = None
    omega: np.ndarray | None = None
    delta: np.ndarray | None = None
    eps_norm: np.ndarray | None = None
    e_tilde_norm: np.ndarray | None = None
    e_hat_norm: np.ndarray | None = None
    reason: np.ndarray | None = None
    stage_cost: np.ndarray | None = None

    def trace(self, i: int) -> RunTrace:
        if self.x is None:
            raise ValueError("batch was simulated without recording")
        fields = {name: getattr(self, name)[i] for name in RunTrace.STEP_FIELDS}
        return RunTrace(run_index=int(self.run_indices[i]), policy=self.policy, loss=float(self.loss[i]),
                        tx_count=int(self.tx_count[i]), rtx_count=int(self.rtx_count[i]),
                        pl_count=int(self.pl_count[i]), **fields)


@dataclass
class RunTrace:
    """One run. State-like arrays have N+2 rows (x_0..x_{N+1}); step arrays N+1."""

    STEP_FIELDS = ("x", "y", "a", "x_hat", "x_check", "nu", "e_tilde", "u", "gamma", "tau", "fading",
                   "lam", "delivered_origin", "omega", "delta", "eps_norm", "e_tilde_norm", "e_hat_norm",
                   "reason", "stage_cost")

    run_index: int
    policy: str
    loss: float
    tx_count: int
    rtx_count: int
    pl_count: int
    x: np.ndarray
    y: np.ndarray
    a: np.ndarray
    x_hat: np.ndarray
    x_check: np.ndarray
    nu: np.ndarray
    e_tilde: np.ndarray
    u: np.ndarray
    gamma: np.ndarray
    tau: np.ndarray
    fading: np.ndarray
    lam: np.ndarray
    delivered_origin: np.ndarray
    omega: np.ndarray
    delta: np.ndarray
    eps_norm: np.ndarray
    e_tilde_norm: np.ndarray
    e_hat_norm: np.ndarray
    reason: np.ndarray
    stage_cost: np.ndarray

    @property
    def N(self) -> int:
        return len(self.u) - 1


def _decoder_error_recursion(e_hat_prev, e_check_hist, w_hist, A_hist, delivered, steps):
    """Decoder error from its recursion, written with explicit products.

    Delivered packets from j = k - steps give
    (A_{k-1}...A_j) e_check_j + sum_t (A_{k-1}...A_{k-t}) w_{k-t-1};
    erasures give A_{k-1} e_hat_{k-1} + w_{k-1}. ``*_hist[j]`` holds
    the value at time k-1-j.
    """
    out = mv(A_hist[0], e_hat_prev) + w_hist[0]
    for d in np.unique(steps[delivered]):
        sel = delivered & (steps == d)
        prod = np.eye(A_hist.shape[-1])
        acc = np.zeros_like(e_hat_prev[sel])
        for t in range(d):
            acc = acc + mv(prod, w_hist[t][sel])
            prod = prod @ A_hist[t]
        out[sel] = mv(prod, e_check_hist[d - 1][sel]) + acc
    return out


def simulate_batch(prep: Prepared, run_indices, policy: Policy | str | None = None, record: bool = True,
                   check: bool = False) -> BatchResult:
    cfg, sys = prep.cfg, prep.sys
    if policy is None:
        policy = cfg.policy
    if not isinstance(policy, Policy):
        policy = Policy(PolicySpec.parse(policy))
    run_indices = np.asarray(run_indices, dtype=np.int64)
    R, N, n, m, p = len(run_indices), prep.N, sys.n, sys.m, sys.p
    ch = cfg.channel
    omax, D = ch.omega_max, prep.depth
    noise = draw_noise(cfg, run_indices)
    Q, Rw = cfg.cost.Q, cfg.cost.R
    scale = 1.0 / (N + 1)

    rec = {}
    if record:
        rec = dict(
            x=np.empty((R, N + 2, n)), y=np.empty((R, N + 1, p)), a=np.empty((R, N + 1, m)),
            x_hat=np.empty((R, N + 1, n)), x_check=np.empty((R, N + 1, n)), nu=np.empty((R, N + 1, p)),
            e_tilde=np.empty((R, N + 1, n)),
            u=np.empty((R, N + 1), np.int8), gamma=np.empty((R, N + 1), np.int8),
            tau=np.empty((R, N + 1), np.int64), fading=np.empty((R, N + 1), np.int64),
            lam=np.empty((R, N + 1)), delivered_origin=np.full((R, N + 1), -1, np.int64),
            omega=np.full((R, N + 1), np.nan), delta=np.full((R, N + 1), np.nan),
            eps_norm=np.zeros((R, N + 1)), e_tilde_norm=np.empty((R, N + 1)),
            e_hat_norm=np.empty((R, N + 1)), reason=np.empty((R, N + 1), np.int8),
            stage_cost=np.empty((R, N + 2)),
        )

    # state
    x = sys.m0 + mv(prep.fM0, noise.x0)
    x_check = np.zeros((R, n))
    x_hat = np.tile(sys.m0, (R, 1)).astype(float)
    e_tilde = np.zeros((R, n))
    kn = np.zeros((D, R, n))          # kn[j] = K_{k-j} nu_{k-j}
    a_win = np.zeros((D, R, m))       # a_win[j] = a_{k-1-j}
    tau = np.zeros(R, np.int64)
    enc_tau = np.zeros(R, np.int64)
    fading = np.full(R, ch.initial_state, np.int64)
    u_prev = np.full(R, -1, np.int64)
    gamma_prev = np.full(R, -1, np.int64)
    tau_prev = np.zeros(R, np.int64)
    pending = np.zeros((R, n))
    pending_origin = np.full(R, -1, np.int64)
    payload = np.zeros((R, n))
    origin = np.full(R, -1, np.int64)
    delivered = np.zeros(R, bool)
    a = np.zeros((R, m))

    e_hat_rec = np.zeros((R, n))
    e_check_hist = np.zeros((D, R, n))   # [j] = e_check_{k-1-j}
    w_hist = np.zeros((D, R, n))         # [j] = w_{k-1-j}
    max_check = {"e_tilde": 0.0, "e_hat": 0.0}

    loss = np.zeros(R)
    tx_count = np.zeros(R, np.int64)
    rtx_count = np.zeros(R, np.int64)
    pl_count = np.zeros(R, np.int64)
    lam_sum = np.zeros(R)
    lam_var_sum = np.zeros(R)
    reason_counts = np.zeros((R, 4), np.int64)

    for k in range(N + 1):
        A_k, B_k, C_k = sys.A[k], sys.B[k], sys.C[k]
        K_k = prep.cov.K[k]
        A_seq = np.stack([prep.A(k - j) for j in range(D)])          # A_{k-j}
        A_win = np.stack([prep.A(k - 1 - j) for j in range(D)])      # A_{k-1-j}
        B_win = np.stack([prep.B(k - 1 - j) for j in range(D)])

        # (1) plant output
        y = mv(C_k, x) + mv(prep.fV(k), noise.v[:, k])

        # (2) encoder: Kalman filter then mismatch
        if k == 0:
            m_pred = np.broadcast_to(sys.m0, (R, n))
        else:
            m_pred = mv(prep.A(k - 1), x_check) + mv(prep.B(k - 1), a)
        nu = y - mv(C_k, m_pred)
        x_check = m_pred + mv(K_k, nu)
        kn = np.roll(kn, 1, axis=0)
        kn[0] = mv(K_k, nu)
        if k == 0:
            e_tilde = kn[0].copy()
        else:
            e_tilde = update_mismatch(e_tilde, kn, A_seq, u_prev, gamma_prev, tau_prev)
            enc_tau = next_tau(enc_tau, u_prev, gamma_prev)

        # (3) decoder consumes z_k, (4) control
        if k > 0:
            x_hat = update_estimate(x_hat, delivered, payload, origin, u_prev, tau_prev, a_win, A_win, B_win, k)
        a = control_input(x_hat, prep.gains.L[k])

        if check:
            if k == 0:
                e_hat_rec = x - sys.m0
            else:
                steps = np.where(delivered, k - origin, 1)
                e_hat_rec = _decoder_error_recursion(e_hat_rec, e_check_hist, w_hist, A_win, delivered, steps)
            scale_x = np.maximum(1.0, np.abs(x).max(axis=1))
            dev_t = np.abs(e_tilde - (x_check - x_hat)).max(axis=1) / scale_x
            dev_h = np.abs(e_hat_rec - (x - x_hat)).max(axis=1) / scale_x
            max_check["e_tilde"] = max(max_check["e_tilde"], float(dev_t.max()))
            max_check["e_hat"] = max(max_check["e_hat"], float(dev_h.max()))
            if dev_t.max() > CHECK_TOL:
                raise InvariantViolation(f"step {k}: mismatch recursion differs from x_check - x_hat by {dev_t.max():.3g}")
            if dev_h.max() > CHECK_TOL:
                raise InvariantViolation(f"step {k}: decoder error recursion differs from x - x_hat by {dev_h.max():.3g}")
            if np.any(enc_tau != tau):
                raise InvariantViolation(f"step {k}: encoder tau view disagrees with the channel")

        # (5) switching decision
        eps = compute_epsilon(kn, A_seq, tau, strict=False)
        free = (tau >= 1) & (tau <= omax)
        lam_0 = ch.rate(fading, 0)
        lam_w = ch.rate(fading, tau)
        omega = np.full(R, np.nan)
        delta = np.full(R, np.nan)
        if policy.kind == "threshold" and free.any():
            d = np.zeros(R)
            if policy.exact:
                d[free] = prep.exact_delta(k, e_tilde[free], eps[free], tau[free], fading[free])
            om = omega_gap(e_tilde, eps, A_k, prep.gains.Gamma[k + 1], lam_w, lam_0, d)
            omega[free], delta[free] = om[free], d[free]
        u, reason = policy.choose(tau, omax, omega, noise.policy[:, k])

        # channel
        lam = np.where(u == TX, lam_0, lam_w)
        gamma = (noise.erasure[:, k] >= lam).astype(np.int64)
        sent = np.where((u == TX)[:, None], x_check, pending)
        sent_origin = np.where(u == TX, k, pending_origin)
        if np.any((u == RTX) & (sent_origin != k - tau)):
            raise InvariantViolation(f"step {k}: retransmitted packet origin inconsistent with tau")
        delivered = gamma == 1
        payload, origin = sent, np.where(delivered, sent_origin, -1)
        pending = np.where(delivered[:, None], pending, sent)
        pending_origin = np.where(delivered, -1, sent_origin)
        tau_prev, tau_next = tau, next_tau(tau, u, gamma)
        fading_next = fading_successor(ch.transition, fading, noise.fading[:, k]) if ch.n_states > 1 else fading

        # (6) plant
        w = mv(prep.fW(k), noise.w[:, k])
        x_next = mv(A_k, x) + mv(B_k, a) + w

        stage = (quad(Q[k], x) + quad(Rw[k], a)) * scale
        loss += stage
        tx_count += u == TX
        rtx_count += u == RTX
        pl_count += gamma == 0
        lam_sum += lam
        lam_var_sum += lam * (1 - lam)
        np.add.at(reason_counts, (np.arange(R), reason), 1)

        if record:
            rec["x"][:, k], rec["y"][:, k], rec["a"][:, k] = x, y, a
            rec["x_hat"][:, k], rec["x_check"][:, k], rec["nu"][:, k] = x_hat, x_check, nu
            rec["e_tilde"][:, k] = e_tilde
            rec["u"][:, k], rec["gamma"][:, k], rec["tau"][:, k] = u, gamma, tau
            rec["fading"][:, k], rec["lam"][:, k], rec["delivered_origin"][:, k] = fading, lam, origin
            rec["omega"][:, k], rec["delta"][:, k] = omega, delta
            rec["eps_norm"][:, k] = np.where(free, np.linalg.norm(eps, axis=1), 0.0)
            rec["e_tilde_norm"][:, k] = np.linalg.norm(e_tilde, axis=1)
            rec["e_hat_norm"][:, k] = np.linalg.norm(x - x_hat, axis=1)
            rec["reason"][:, k] = reason
            rec["stage_cost"][:, k] = stage

        # histories for step k+1
        a_win = np.roll(a_win, 1, axis=0)
        a_win[0] = a
        if check:
            e_check_hist = np.roll(e_check_hist, 1, axis=0)
            e_check_hist[0] = x - x_check
            w_hist = np.roll(w_hist, 1, axis=0)
            w_hist[0] = w
        u_prev, gamma_prev = u, gamma
        tau, fading, x = tau_next, fading_next, x_next

    terminal = quad(Q[N + 1], x) * scale
    loss += terminal
    if record:
        rec["x"][:, N + 1] = x
        rec["stage_cost"][:, N + 1] = terminal
    return BatchResult(run_indices=run_indices, policy=str(policy.spec), loss=loss, tx_count=tx_count,
                       rtx_count=rtx_count, pl_count=pl_count, lam_sum=lam_sum, lam_var_sum=lam_var_sum,
                       reason_counts=reason_counts, max_check=max_check, **rec)


def run_episode(cfg: ScenarioConfig, run_index: int = 0, policy=None, check: bool = True,
                prep: Prepared | None = None) -> RunTrace:
    prep = prep or Prepared(cfg)
    return simulate_batch(prep, [run_index], policy or cfg.policy, record=True, check=check).trace(0)


def evaluate_loss(trace: RunTrace, cost: CostSpec) -> float:
    """Realized loss of one run: (sum x'Qx over 0..N+1 + sum a'Ra over 0..N) / (N+1)."""
    N = trace.N
    total = 0.0
    for k in range(N + 2):
        xk = trace.x[k]
        total += float(xk @ cost.Q[k] @ xk)
    for k in range(N + 1):
        ak = trace.a[k]
        total += float(ak @ cost.R[k] @ ak)
    return total / (N + 1)


def analytic_loss(cfg: ScenarioConfig, gains: GainSchedule | None = None,
                  cov: CovarianceSchedule | None = None) -> float:
    """Expected loss when every packet is delivered (error rates identically zero)."""
    sys, N = cfg.system, cfg.N
    gains = gains or riccati_backward(sys, cfg.cost, N)
    cov = cov or covariance_schedule(sys, N)
    S, G = gains.S, gains.Gamma
    total = sys.m0 @ S[0] @ sys.m0 + np.trace(S[0] @ sys.M0)
    total += sum(np.trace(S[k + 1] @ sys.W[k]) for k in range(N + 1))
    total += np.trace(G[0] @ sys.M0)
    total += sum(np.trace(G[k] @ cov.M[k]) for k in range(1, N + 1))
    return float(total) / (N + 1)


# ---------------------------------------------------------------------------
# Monte Carlo


def default_workers() -> int:
    env = os.environ.get("HARQ_NC_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


_WORKER_PREP: dict = {}


def _chunk_task(args):
    cfg, policy_text, indices = args
    key = id(cfg)
    prep = _WORKER_PREP.get(key)
    if prep is None:
        _WORKER_PREP.clear()
        prep = _WORKER_PREP[key] = Prepared(cfg)
    res = simulate_batch(prep, indices, policy_text, record=False)
    return (res.run_indices, res.loss, res.tx_count, res.rtx_count, res.pl_count, res.lam_sum,
            res.lam_var_sum, res.reason_counts)


@dataclass
class PolicyRuns:
    policy: str
    run_indices: np.ndarray
    loss: np.ndarray
    tx: np.ndarray
    rtx: np.ndarray
    pl: np.ndarray
    lam_sum: np.ndarray
    lam_var_sum: np.ndarray
    reason_counts: np.ndarray

    def summary(self, N: int) -> dict:
        R = len(self.loss)
        se = float(self.loss.std(ddof=1) / np.sqrt(R)) if R > 1 else 0.0
        steps = R * (N + 1)
        erasures = int(self.pl.sum())
        expected = float(self.lam_sum.sum())
        erase_se = float(np.sqrt(self.lam_var_sum.sum()))
        reasons = self.reason_counts.sum(axis=0)
        return {
            "policy": self.policy,
            "runs": R,
            "loss": {
                "mean": float(self.loss.mean()),
                "se": se,
                "quantiles": {f"{q:g}": float(np.quantile(self.loss, q)) for q in QUANTILES},
            },
            "counts": {
                "tx_mean": float(self.tx.mean()),
                "rtx_mean": float(self.rtx.mean()),
                "pl_mean": float(self.pl.mean()),
                "tx_total": int(self.tx.sum()),
                "rtx_total": int(self.rtx.sum()),
                "pl_total": erasures,
            },
            "forced": {"tau0": int(reasons[0]), "omega_cap": int(reasons[1]),
                       "threshold": int(reasons[2]), "policy": int(reasons[3])},
            "erasure": {
                "realized_fraction": erasures / steps,
                "expected_fraction": expected / steps,
                "se_fraction": erase_se / steps,
                "z_score": (erasures - expected) / erase_se if erase_se > 0 else 0.0,
            },
        }


def monte_carlo_runs(cfg: ScenarioConfig, policy=None, runs: int | None = None, workers: int | None = None,
                     chunk: int = CHUNK, prep: Prepared | None = None) -> PolicyRuns:
    """Simulate runs 0..runs-1 and return per-run statistics in run order."""
    policy_text = str(PolicySpec.parse(policy or cfg.policy))
    runs = cfg.runs if runs is None else runs
    workers = default_workers() if workers is None else max(1, workers)
    chunks = [np.arange(s, min(s + chunk, runs)) for s in range(0, runs, chunk)]
    if workers == 1 or len(chunks) == 1:
        prep = prep or Prepared(cfg)
        results = []
        for idx in chunks:
            res = simulate_batch(prep, idx, policy_text, record=False)
            results.append((res.run_indices, res.loss, res.tx_count, res.rtx_count, res.pl_count,
                            res.lam_sum, res.lam_var_sum, res.reason_counts))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_chunk_task, [(cfg, policy_text, idx) for idx in chunks]))
    cols = [np.concatenate([r[i] for r in results]) for i in range(8)]
    order = np.argsort(cols[0], kind="stable")
    cols = [c[order] for c in cols]
    return PolicyRuns(policy_text, *cols)


def monte_carlo(cfg: ScenarioConfig, policies=None, runs: int | None = None, workers: int | None = None,
                return_runs: bool = False):
    """Summary of the loss and channel statistics; several policies share random numbers.

    With ``return_runs`` the per-policy :class:`PolicyRuns` are returned too.
    """
    if policies is None:
        policies = [cfg.policy]
    elif isinstance(policies, (str, PolicySpec)):
        policies = [policies]
    prep = Prepared(cfg)
    all_runs = [monte_carlo_runs(cfg, pol, runs, workers, prep=prep) for pol in policies]
    out = {"horizon": cfg.N, "seed": int(cfg.seed), "policies": [r.summary(cfg.N) for r in all_runs]}
    if len(all_runs) > 1:
        base = all_runs[0]
        paired = []
        for other in all_runs[1:]:
            diff = base.loss - other.loss
            R = len(diff)
            paired.append({
                "a": base.policy, "b": other.policy,
                "mean_diff": float(diff.mean()),
                "se_diff": float(diff.std(ddof=1) / np.sqrt(R)) if R > 1 else 0.0,
            })
        out["paired"] = paired
    return (out, all_runs) if return_runs else out
