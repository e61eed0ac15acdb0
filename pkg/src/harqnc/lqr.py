"""Finite-horizon Riccati recursion and the gain schedules derived from it."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .model import CostSpec, SystemModel

COND_LIMIT = 1e12


class RiccatiError(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class GainSchedule:
    """Backward-pass output for t = 0..N.

    ``S`` has N+2 entries (S[N+1] = Q[N+1]); ``L`` and ``Lambda`` have N+1;
    ``Gamma`` has N+2 with ``Gamma[N+1] = 0`` so the decision statistic at the
    last step is defined.
    """

    S: np.ndarray
    L: np.ndarray
    Gamma: np.ndarray
    Lambda: np.ndarray

    @property
    def N(self) -> int:
        return self.L.shape[0] - 1


def riccati_backward(sys: SystemModel, cost: CostSpec, N: int) -> GainSchedule:
    n, m = sys.n, sys.m
    S = np.empty((N + 2, n, n))
    L = np.empty((N + 1, m, n))
    Gamma = np.zeros((N + 2, n, n))
    Lam = np.empty((N + 1, m, m))

    QN = cost.Q[N + 1]
    S[N + 1] = (QN + QN.T) / 2
    for t in range(N, -1, -1):
        A, B, Snext = sys.A[t], sys.B[t], S[t + 1]
        SB = Snext @ B
        lam = B.T @ SB + cost.R[t]
        lam = (lam + lam.T) / 2
        if np.linalg.cond(lam) > COND_LIMIT:
            raise RiccatiError(f"Lambda_{t} is numerically singular (cond > {COND_LIMIT:g})")
        try:
            factor = cho_factor(lam)
        except LinAlgError:
            raise RiccatiError(f"Lambda_{t} is not positive definite") from None
        gain = cho_solve(factor, SB.T @ A)
        # A' S B Lam^-1 B' S A written as L' Lam L
        gam = gain.T @ lam @ gain
        St = cost.Q[t] + A.T @ Snext @ A - gam
        S[t] = (St + St.T) / 2
        L[t] = gain
        Lam[t] = lam
        Gamma[t] = (gam + gam.T) / 2
    for arr in (S, L, Gamma, Lam):
        arr.setflags(write=False)
    return GainSchedule(S=S, L=L, Gamma=Gamma, Lambda=Lam)


def control_gain(sched: GainSchedule, k: int) -> np.ndarray:
    if not 0 <= k <= sched.N:
        raise IndexError(f"control gain index {k} outside 0..{sched.N}")
    return sched.L[k]
