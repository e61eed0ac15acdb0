"""Sensor-side Kalman filter.

The covariance quantities (P, M, K, innovation covariance) never depend on
data, so :func:`covariance_schedule` computes them once per scenario and
the vectorized simulator only propagates means.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .model import SystemModel

COND_LIMIT = 1e10


class EstimationError(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class FilterState:
    x_check: np.ndarray
    P: np.ndarray
    M: np.ndarray
    K: np.ndarray
    N_inno: np.ndarray
    nu: np.ndarray
    k: int


def _spd_inverse(M: np.ndarray) -> np.ndarray:
    factor = cho_factor(M)
    return cho_solve(factor, np.eye(M.shape[0]))


def information_update(M: np.ndarray, C: np.ndarray, V: np.ndarray):
    """P = (M^-1 + C' V^-1 C)^-1 and K = P C' V^-1."""
    if np.linalg.cond(M) > COND_LIMIT:
        raise LinAlgError("predicted covariance is ill-conditioned")
    Vinv = _spd_inverse(V)
    info = _spd_inverse(M) + C.T @ Vinv @ C
    P = _spd_inverse((info + info.T) / 2)
    P = (P + P.T) / 2
    return P, P @ C.T @ Vinv


def joseph_update(M: np.ndarray, C: np.ndarray, V: np.ndarray):
    """Covariance-form update; pseudo-inverse keeps singular V (test mode) usable."""
    Ninno = C @ M @ C.T + V
    K = M @ C.T @ np.linalg.pinv((Ninno + Ninno.T) / 2)
    IKC = np.eye(M.shape[0]) - K @ C
    P = IKC @ M @ IKC.T + K @ V @ K.T
    return (P + P.T) / 2, K


def measurement_update(M, C, V, fallback: bool = True):
    try:
        return information_update(M, C, V)
    except LinAlgError:
        if not fallback:
            raise EstimationError("information-form update needs invertible M and V") from None
        return joseph_update(M, C, V)


def kf_initialize(sys: SystemModel, y0: np.ndarray, fallback: bool = True) -> FilterState:
    M, C, V = sys.M0, sys.C[0], sys.V[0]
    P, K = measurement_update(M, C, V, fallback)
    nu = np.asarray(y0, dtype=float) - C @ sys.m0
    return FilterState(
        x_check=sys.m0 + K @ nu, P=P, M=M.copy(), K=K, N_inno=C @ M @ C.T + V, nu=nu, k=0,
    )


def kf_step(st: FilterState, a_prev: np.ndarray, y: np.ndarray, sys: SystemModel,
            fallback: bool = True) -> FilterState:
    k = st.k + 1
    A, B = sys.A[k - 1], sys.B[k - 1]
    C, V = sys.C[k], sys.V[k]
    m = A @ st.x_check + B @ np.asarray(a_prev, dtype=float)
    M = A @ st.P @ A.T + sys.W[k - 1]
    M = (M + M.T) / 2
    P, K = measurement_update(M, C, V, fallback)
    nu = np.asarray(y, dtype=float) - C @ m
    return replace(st, x_check=m + K @ nu, P=P, M=M, K=K, N_inno=C @ M @ C.T + V, nu=nu, k=k)


@dataclass(frozen=True, eq=False)
class CovarianceSchedule:
    P: np.ndarray
    M: np.ndarray
    K: np.ndarray
    N_inno: np.ndarray


def covariance_schedule(sys: SystemModel, N: int, fallback: bool = True) -> CovarianceSchedule:
    n, p = sys.n, sys.p
    P = np.empty((N + 1, n, n))
    M = np.empty((N + 1, n, n))
    K = np.empty((N + 1, n, p))
    Ni = np.empty((N + 1, p, p))
    M[0] = sys.M0
    for k in range(N + 1):
        if k > 0:
            A = sys.A[k - 1]
            Mk = A @ P[k - 1] @ A.T + sys.W[k - 1]
            M[k] = (Mk + Mk.T) / 2
        C, V = sys.C[k], sys.V[k]
        P[k], K[k] = measurement_update(M[k], C, V, fallback)
        Ni[k] = C @ M[k] @ C.T + V
    for arr in (P, M, K, Ni):
        arr.setflags(write=False)
    return CovarianceSchedule(P=P, M=M, K=K, N_inno=Ni)
