"""Sensor-side switching: estimation mismatch, the RTX gain statistic and TX/RTX choice.

The array functions take a leading batch shape so the simulator can advance
many runs at once; :class:`Encoder` wraps them for a single run.

Window conventions (``D`` = depth): ``kn[j]`` is ``K_{k-j} nu_{k-j}`` and
``A_seq[j]`` is ``A_{k-j}`` for the current step ``k``.
"""

from __future__ import annotations

from collections import deque

import numpy as np

from .channel import NONE, RTX, TX, LinkState, next_tau
from .estimator import FilterState, kf_initialize, kf_step
from .linalg import mv, quad
from .lqr import GainSchedule
from .model import ChannelSpec, SystemModel

REASON_TAU0, REASON_OMEGA_CAP, REASON_THRESHOLD, REASON_POLICY = 0, 1, 2, 3
REASON_NAMES = {REASON_TAU0: "tau0", REASON_OMEGA_CAP: "omega_cap",
                REASON_THRESHOLD: "threshold", REASON_POLICY: "policy"}


class WindowUnderflow(AssertionError):
    pass


def _where(cond, a, b):
    return np.where(np.asarray(cond)[..., None], a, b)


def update_mismatch(e_prev, kn, A_seq, u_prev, gamma_prev, tau_prev):
    """Mismatch recursion for step k from the step-(k-1) acknowledgment."""
    u_prev = np.asarray(u_prev)
    gamma_prev = np.asarray(gamma_prev)
    tau_prev = np.asarray(tau_prev)
    rtx_ok = (u_prev == RTX) & (gamma_prev == 1)
    depth = int(tau_prev[rtx_ok].max()) if rtx_ok.any() else 0
    if depth >= len(kn) or depth >= len(A_seq):
        raise WindowUnderflow(f"tau_(k-1) = {depth} exceeds innovation window {len(kn)}")
    h = np.zeros_like(kn[0])
    for t in range(depth, 0, -1):
        h = _where(t <= tau_prev, mv(A_seq[t], kn[t] + h), h)
    rtx_branch = kn[0] + h
    erased = mv(A_seq[1], e_prev) + kn[0] if len(A_seq) > 1 else kn[0]
    out = _where(gamma_prev == 0, erased, kn[0])
    return _where(rtx_ok, rtx_branch, out)


def compute_epsilon(kn, A_seq, tau, strict: bool = True):
    """sum_{t<tau} (A_k ... A_{k-t}) K_{k-t} nu_{k-t}, evaluated by Horner's rule.

    Entries with ``tau = 0`` give zero unless ``strict`` (then it is an error).
    """
    tau = np.asarray(tau)
    if strict and np.any(tau < 1):
        raise ValueError("epsilon is only defined when a packet is pending (tau >= 1)")
    depth = int(tau.max()) if tau.size else 0
    if depth > len(kn):
        raise WindowUnderflow(f"tau = {depth} exceeds innovation window {len(kn)}")
    h = np.zeros_like(kn[0])
    for j in range(depth - 1, -1, -1):
        h = _where(j < tau, mv(A_seq[j], kn[j] + h), h)
    return h


def omega_gap(e_tilde, eps, A_k, Gamma_next, lam_w, lam_0, delta=0.0):
    """Decision statistic; TX when it is >= 0."""
    stage = (np.asarray(lam_w) - lam_0) * quad(Gamma_next, mv(A_k, e_tilde)) \
        + (1.0 - np.asarray(lam_w)) * quad(Gamma_next, eps)
    return stage + delta


def decide(tau, omega_max: int, omega):
    """Threshold rule with its forced branches; returns ``(u, reason)`` arrays."""
    tau = np.asarray(tau)
    omega = np.asarray(omega, dtype=float)
    u = np.where((tau == 0) | (tau > omega_max) | ~(omega < 0), TX, RTX)
    reason = np.where(tau == 0, REASON_TAU0, np.where(tau > omega_max, REASON_OMEGA_CAP, REASON_THRESHOLD))
    return u, reason


class Encoder:
    """Single-run encoder: Kalman filter, mismatch, innovation window and link view.

    ``delta`` is an optional callable ``delta(k, e_tilde, eps, tau, fading)``
    returning the value residual; ``None`` means one-step lookahead (zero).
    """

    def __init__(self, sys: SystemModel, sched: GainSchedule, spec: ChannelSpec, delta=None):
        self.sys, self.sched, self.spec, self.delta = sys, sched, spec, delta
        self.depth = spec.omega_max + 2
        self.filter: FilterState | None = None
        self.e_tilde: np.ndarray | None = None
        self.kn: deque = deque(maxlen=self.depth)
        self.link_view = LinkState(fading_state=spec.initial_state)
        self.last_omega = np.nan
        self.last_delta = np.nan
        self.last_eps = np.zeros(sys.n)

    @property
    def k(self) -> int:
        return self.filter.k

    @property
    def tau(self) -> int:
        return self.link_view.tau

    def _A_seq(self, k):
        return np.stack([self.sys.A[max(k - j, 0)] for j in range(self.depth)])

    def observe(self, y, a_prev=None, u_prev: int = NONE, gamma_prev: int = NONE, fading_state=None):
        """Advance to step k with measurement ``y`` and the step-(k-1) acknowledgment."""
        if self.filter is None:
            self.filter = kf_initialize(self.sys, y)
            self.kn.appendleft(self.filter.K @ self.filter.nu)
            self.e_tilde = self.kn[0].copy()
            return self.e_tilde
        self.filter = kf_step(self.filter, a_prev, y, self.sys)
        self.kn.appendleft(self.filter.K @ self.filter.nu)
        k = self.filter.k
        tau_prev = self.link_view.tau
        kn = np.stack(list(self.kn) + [np.zeros(self.sys.n)] * (self.depth - len(self.kn)))
        self.e_tilde = update_mismatch(self.e_tilde, kn, self._A_seq(k), u_prev, gamma_prev, tau_prev)
        self.link_view = LinkState(
            tau=int(next_tau(tau_prev, u_prev, gamma_prev)),
            fading_state=self.link_view.fading_state if fading_state is None else fading_state,
            last_u=u_prev, last_gamma=gamma_prev, k=k,
        )
        return self.e_tilde

    def epsilon(self) -> np.ndarray:
        kn = np.stack(list(self.kn) + [np.zeros(self.sys.n)] * (self.depth - len(self.kn)))
        return compute_epsilon(kn, self._A_seq(self.k), self.tau)

    def omega_gap(self) -> float:
        k, tau, f = self.k, self.tau, self.link_view.fading_state
        eps = self.epsilon()
        lam_w = self.spec.rate(f, tau)
        lam_0 = self.spec.rate(f, 0)
        delta = 0.0 if self.delta is None else float(self.delta(k, self.e_tilde, eps, tau, f))
        self.last_eps, self.last_delta = eps, delta
        return float(omega_gap(self.e_tilde, eps, self.sys.A[k], self.sched.Gamma[k + 1], lam_w, lam_0, delta))

    def decide(self):
        """Return ``(u, reason)``; TX carries ``filter.x_check`` as payload."""
        tau = self.tau
        if tau == 0 or tau > self.spec.omega_max:
            self.last_omega = self.last_delta = np.nan
            u, reason = decide(tau, self.spec.omega_max, 0.0)
        else:
            self.last_omega = self.omega_gap()
            u, reason = decide(tau, self.spec.omega_max, self.last_omega)
        return int(u), int(reason)
