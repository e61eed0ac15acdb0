"""Actuator-side switching estimator and certainty-equivalent control."""

from __future__ import annotations

from collections import deque

import numpy as np

from .channel import RTX, TX, ChannelOutput, ProtocolError
from .linalg import mv
from .lqr import GainSchedule
from .model import SystemModel


def _where(cond, a, b):
    return np.where(np.asarray(cond)[..., None], a, b)


def update_estimate(x_hat_prev, delivered, payload, origin, u_prev, tau_prev, a_win, A_win, B_win, k: int):
    """Decoder mean at step k.

    A delivered packet x_check_j is propagated open loop from its origin j to
    k with the applied controls (one step after TX, tau+1 steps after RTX);
    an erasure propagates the previous estimate by one step. Windows are
    indexed backwards from k-1: ``a_win[j] = a_{k-1-j}`` and likewise for
    ``A_win``/``B_win``.
    """
    delivered = np.asarray(delivered, dtype=bool)
    origin = np.asarray(origin)
    u_prev = np.asarray(u_prev)
    tau_prev = np.asarray(tau_prev)
    expected = np.where(u_prev == RTX, k - tau_prev - 1, k - 1)
    if np.any(delivered & (origin != expected)):
        raise ProtocolError(f"step {k}: delivered packet origin inconsistent with tau")
    if np.any(delivered & (u_prev != TX) & (u_prev != RTX)):
        raise ProtocolError(f"step {k}: delivery without a decision")
    steps = np.where(delivered, k - origin, 1)
    depth = int(steps.max()) if steps.size else 1
    if depth > len(a_win):
        raise ProtocolError(f"step {k}: control history too short for {depth} steps")
    h = _where(delivered, payload, x_hat_prev)
    for j in range(depth - 1, -1, -1):
        h = _where(j < steps, mv(A_win[j], h) + mv(B_win[j], a_win[j]), h)
    return h


def control_input(x_hat, L_k):
    return -mv(L_k, x_hat)


class Decoder:
    """Single-run decoder holding x_hat and a short control history."""

    def __init__(self, sys: SystemModel, sched: GainSchedule, omega_max: int):
        self.sys, self.sched = sys, sched
        self.depth = omega_max + 2
        self.x_hat = np.array(sys.m0, dtype=float)
        self.a_history: deque = deque(maxlen=self.depth)
        self.k = 0

    def update(self, z: ChannelOutput, u_prev: int, tau_prev: int) -> np.ndarray:
        """Consume z_k (k >= 1) and return x_hat_k."""
        k = self.k + 1
        d = self.depth
        a_win = np.stack(list(self.a_history) + [np.zeros(self.sys.m)] * (d - len(self.a_history)))
        A_win = np.stack([self.sys.A[max(k - 1 - j, 0)] for j in range(d)])
        B_win = np.stack([self.sys.B[max(k - 1 - j, 0)] for j in range(d)])
        payload = z.payload if z.delivered else np.zeros_like(self.x_hat)
        self.x_hat = update_estimate(self.x_hat, z.delivered, payload, z.origin, u_prev, tau_prev,
                                     a_win, A_win, B_win, k)
        self.k = k
        return self.x_hat

    def control(self) -> np.ndarray:
        a = control_input(self.x_hat, self.sched.L[self.k])
        self.a_history.appendleft(a)
        return a
