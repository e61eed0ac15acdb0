"""Independent reference computations used by several test modules."""

import numpy as np


def joseph_riccati(A, B, Q, R, N):
    """S_0 via the closed-loop (Joseph) form, one step at a time."""
    S = Q.copy()
    for _ in range(N + 1):
        L = np.linalg.lstsq(B.T @ S @ B + R, B.T @ S @ A, rcond=None)[0]
        Acl = A - B @ L
        S = Acl.T @ S @ Acl + Q + L.T @ R @ L
    return S


def gaussian_condition(mean, cov, obs_idx, obs):
    """Mean and covariance of the unobserved block given the observed entries."""
    hid = np.setdiff1d(np.arange(len(mean)), obs_idx)
    S_oo = cov[np.ix_(obs_idx, obs_idx)]
    S_ho = cov[np.ix_(hid, obs_idx)]
    gain = np.linalg.solve(S_oo, S_ho.T).T
    mu = mean[hid] + gain @ (obs - mean[obs_idx])
    return mu, cov[np.ix_(hid, hid)] - gain @ S_ho.T


def batch_filter_oracle(sys, a, y, N):
    """Joint-Gaussian conditioning of x_k on y_0..y_k for k = 0..N.

    The trajectory is written as a linear map of (x_0, w_0..w_{N-1}, v_0..v_N)
    plus the known control contribution.
    """
    n, p = sys.n, sys.p
    dim = n + N * n + (N + 1) * p
    base_cov = np.zeros((dim, dim))
    base_cov[:n, :n] = sys.M0
    for k in range(N):
        s = n + k * n
        base_cov[s:s + n, s:s + n] = sys.W[k]
    for k in range(N + 1):
        s = n + N * n + k * p
        base_cov[s:s + p, s:s + p] = sys.V[k]
    Gx = np.zeros((N + 1, n, dim))
    mx = np.zeros((N + 1, n))
    Gx[0][:, :n] = np.eye(n)
    mx[0] = sys.m0
    for k in range(N):
        Gx[k + 1] = sys.A[k] @ Gx[k]
        Gx[k + 1][:, n + k * n:n + (k + 1) * n] += np.eye(n)
        mx[k + 1] = sys.A[k] @ mx[k] + sys.B[k] @ a[k]
    Gy = np.stack([sys.C[k] @ Gx[k] for k in range(N + 1)])
    for k in range(N + 1):
        s = n + N * n + k * p
        Gy[k][:, s:s + p] += np.eye(p)
    my = np.stack([sys.C[k] @ mx[k] for k in range(N + 1)])
    out = []
    for k in range(N + 1):
        G = np.concatenate([Gx[k]] + [Gy[j] for j in range(k + 1)])
        mean = np.concatenate([mx[k]] + [my[j] for j in range(k + 1)])
        cov = G @ base_cov @ G.T
        obs = np.concatenate([y[j] for j in range(k + 1)])
        out.append(gaussian_condition(mean, cov, np.arange(n, len(mean)), obs))
    return out
