"""Grid dynamic programming for the encoder's switching problem (scalar systems).

For n = p = 1 the encoder cost-to-go depends on the mismatch ``e``, the
pending-packet statistic ``eps`` (the RTX gain term), the age ``tau`` and
the fading state. The pending statistic obeys
``eps_{k+1} = A_{k+1} (K_{k+1} nu_{k+1} + eps_k)`` while a packet stays
pending, so it replaces the raw innovation window as a grid axis.

Expectations over the next innovation use Gauss-Hermite quadrature; the
next-step value is interpolated bilinearly with clamping at the grid edges.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .estimator import covariance_schedule
from .lqr import riccati_backward
from .model import ScenarioConfig

TIE_TOL = 1e-12
GRID_SIGMAS = 8.0


class UnsupportedDimension(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ScalarModel:
    """Scalar schedules indexed by k; entries at N+1 are padding (Gamma = 0 there)."""

    N: int
    A: np.ndarray
    Gamma: np.ndarray
    K: np.ndarray
    N_inno: np.ndarray
    P: np.ndarray
    lam: np.ndarray
    transition: np.ndarray
    omega_max: int

    @classmethod
    def from_config(cls, cfg: ScenarioConfig, sched=None, cov=None) -> ScalarModel:
        if not cfg.is_scalar:
            raise UnsupportedDimension(
                f"dp oracle supports scalar systems only (n = p = 1); got n = {cfg.system.n}, p = {cfg.system.p}"
            )
        N = cfg.N
        sys = cfg.system
        sched = sched or riccati_backward(sys, cfg.cost, N)
        cov = cov or covariance_schedule(sys, N)
        pad = lambda arr, v: np.append(arr, v)
        A = np.array([sys.A[k][0, 0] for k in range(N + 1)])
        return cls(
            N=N,
            A=pad(A, A[-1]),
            Gamma=sched.Gamma[:, 0, 0].copy(),
            K=pad(cov.K[:, 0, 0], 0.0),
            N_inno=pad(cov.N_inno[:, 0, 0], 1.0),
            P=pad(cov.P[:, 0, 0], 0.0),
            lam=cfg.channel.lam,
            transition=cfg.channel.transition,
            omega_max=cfg.channel.omega_max,
        )

    @property
    def n_tau(self) -> int:
        return self.omega_max + 2

    def rate(self, f, s):
        return self.lam[f, np.minimum(s, self.lam.shape[1] - 1)]

    def default_bounds(self) -> tuple[float, float]:
        """+-8 standard deviations of the mismatch (all-erasure worst case) and of eps."""
        var_e = self.K[0] ** 2 * self.N_inno[0]
        worst_e = var_e
        worst_eps = 0.0
        for k in range(self.N):
            var_e = self.A[k] ** 2 * var_e + self.K[k + 1] ** 2 * self.N_inno[k + 1]
            worst_e = max(worst_e, var_e)
            var_eps, gain = 0.0, 1.0
            for t in range(self.omega_max):
                if k - t < 0:
                    break
                gain *= self.A[k - t]
                var_eps += gain ** 2 * self.K[k - t] ** 2 * self.N_inno[k - t]
            worst_eps = max(worst_eps, var_eps)
        be = GRID_SIGMAS * np.sqrt(worst_e)
        bs = GRID_SIGMAS * np.sqrt(worst_eps) if worst_eps > 0 else be
        return float(be), float(bs)


@dataclass(frozen=True, eq=False)
class ValueGrid:
    """Cost-to-go at step k on the (tau, fading, e, eps) grid.

    ``values[tau, f, i, j]``; ``q_tx``/``q_rtx`` are the action values
    (``q_rtx = inf`` where retransmission is not allowed) and ``rtx`` is the
    argmin decision map. The terminal grid has no action values.
    """

    k: int
    e_axis: np.ndarray
    eps_axis: np.ndarray
    values: np.ndarray
    q_tx: np.ndarray | None = None
    q_rtx: np.ndarray | None = None
    rtx: np.ndarray | None = None

    @property
    def shape(self):
        return self.values.shape


def _axis(bound: float, c: int) -> np.ndarray:
    return np.linspace(-bound, bound, c)


def terminal_grid(model: ScalarModel, c1: int = 201, c2: int = 201, bounds=None) -> ValueGrid:
    be, bs = bounds or model.default_bounds()
    F = model.lam.shape[0]
    return ValueGrid(model.N + 1, _axis(be, c1), _axis(bs, c2), np.zeros((model.n_tau, F, c1, c2)))


class _Interpolator:
    """Bilinear lookup of fading-mixed values on a uniform grid."""

    def __init__(self, grid: ValueGrid, transition: np.ndarray):
        self.e0, self.eps0 = grid.e_axis[0], grid.eps_axis[0]
        c1, c2 = len(grid.e_axis), len(grid.eps_axis)
        self.he = (grid.e_axis[-1] - self.e0) / (c1 - 1)
        self.hs = (grid.eps_axis[-1] - self.eps0) / (c2 - 1) if c2 > 1 else 1.0
        self.c1, self.c2 = c1, c2
        # E over the next fading state given the current one
        self.mixed = np.einsum("fg,tgij->tfij", transition, grid.values)

    @staticmethod
    def _split(x, x0, h, c):
        if c == 1:
            zero = np.zeros(np.shape(x), dtype=np.intp)
            return zero, zero, np.zeros(np.shape(x))
        s = np.clip((x - x0) / h, 0.0, c - 1)
        i = np.minimum(np.floor(s).astype(np.intp), c - 2)
        return i, i + 1, s - i

    def __call__(self, tau: int, f: int, e, eps):
        table = self.mixed[tau, f]
        i0, i1, a = self._split(e, self.e0, self.he, self.c1)
        j0, j1, b = self._split(eps, self.eps0, self.hs, self.c2)
        return ((1 - a) * ((1 - b) * table[i0, j0] + b * table[i0, j1])
                + a * ((1 - b) * table[i1, j0] + b * table[i1, j1]))


def _quadrature(c4: int):
    z, w = hermegauss(c4)
    return z, w / w.sum()


@dataclass
class ActionTerms:
    stage_tx: np.ndarray
    stage_rtx: np.ndarray
    ev_tx_fail: np.ndarray
    ev_tx_ok: np.ndarray
    ev_rtx_fail: np.ndarray
    ev_rtx_ok: np.ndarray
    lam_0: np.ndarray
    lam_w: np.ndarray
    const: float

    @property
    def q_tx(self):
        return (self.lam_0 * self.ev_tx_fail + (1 - self.lam_0) * self.ev_tx_ok) + self.stage_tx + self.const

    @property
    def q_rtx(self):
        return (self.lam_w * self.ev_rtx_fail + (1 - self.lam_w) * self.ev_rtx_ok) + self.stage_rtx + self.const

    @property
    def delta(self):
        return (self.lam_w * self.ev_rtx_fail - self.lam_0 * self.ev_tx_fail
                - (1 - self.lam_0) * self.ev_tx_ok + (1 - self.lam_w) * self.ev_rtx_ok)


def action_terms(interp: _Interpolator, model: ScalarModel, k: int, e, eps, tau: int, f: int,
                 c4: int = 33) -> ActionTerms:
    """One-step expansion of both actions at states (e, eps) with fixed (tau, f)."""
    z, w = _quadrature(c4)
    e = np.asarray(e, dtype=float)[..., None]
    eps = np.asarray(eps, dtype=float)[..., None]
    g, Kp, Nn = model.Gamma[k + 1], model.K[k + 1], model.N_inno[k + 1]
    Ak, Ak1 = model.A[k], model.A[k + 1]
    kn = Kp * np.sqrt(Nn) * z
    lam_0 = model.rate(f, 0)
    lam_w = model.rate(f, tau)
    var_kn = Kp * Kp * Nn

    e_fail = Ak * e + kn
    ev_tx_fail = (w * interp(1, f, e_fail, Ak1 * kn)).sum(-1)
    ev_tx_ok = (w * interp(0, f, kn, np.zeros_like(kn))).sum(-1)
    e = e[..., 0]
    stage_fail = g * (Ak * Ak * e * e + var_kn)
    stage_tx = lam_0 * stage_fail + (1 - lam_0) * g * var_kn
    shape = np.broadcast_shapes(e.shape, eps.shape[:-1])
    if 1 <= tau <= model.omega_max:
        ev_rtx_fail = (w * interp(tau + 1, f, e_fail, Ak1 * (kn + eps))).sum(-1)
        ev_rtx_ok = (w * interp(0, f, eps + kn, np.zeros_like(kn))).sum(-1)
        epsv = eps[..., 0]
        stage_rtx = lam_w * stage_fail + (1 - lam_w) * g * (epsv * epsv + var_kn)
    else:
        ev_rtx_fail = ev_rtx_ok = stage_rtx = np.full(shape, np.inf)
    b = lambda x: np.broadcast_to(x, shape)
    return ActionTerms(b(stage_tx), b(stage_rtx), b(ev_tx_fail), b(ev_tx_ok), b(ev_rtx_fail), b(ev_rtx_ok),
                       lam_0, lam_w, float(g * model.P[k + 1]))


def backup_value(grid_next: ValueGrid, model: ScalarModel, k: int | None = None, c4: int = 33) -> ValueGrid:
    """One Bellman backup: V_k from V_{k+1} on the same axes."""
    k = grid_next.k - 1 if k is None else k
    if not 0 <= k <= model.N:
        raise ValueError(f"backup step {k} outside 0..{model.N}")
    interp = _Interpolator(grid_next, model.transition)
    T, F, c1, c2 = grid_next.shape
    q_tx = np.empty((T, F, c1, c2))
    q_rtx = np.full((T, F, c1, c2), np.inf)
    E = grid_next.e_axis[:, None]
    for tau in range(T):
        free = 1 <= tau <= model.omega_max
        S = grid_next.eps_axis[None, :] if free else grid_next.eps_axis[None, :1]
        for f in range(F):
            terms = action_terms(interp, model, k, E, S, tau, f, c4)
            q_tx[tau, f] = terms.q_tx
            if free:
                q_rtx[tau, f] = terms.q_rtx
    rtx = q_rtx < q_tx - TIE_TOL
    values = np.where(rtx, q_rtx, q_tx)
    return ValueGrid(k, grid_next.e_axis, grid_next.eps_axis, values, q_tx, q_rtx, rtx)


def backward_pass(model: ScalarModel, c1: int = 201, c2: int = 201, c4: int = 33, bounds=None) -> list[ValueGrid]:
    """Grids for k = 0..N+1 (index k holds V_k)."""
    grids = [terminal_grid(model, c1, c2, bounds)]
    for k in range(model.N, -1, -1):
        grids.append(backup_value(grids[-1], model, k, c4))
    return grids[::-1]


def zero_like(grid: ValueGrid) -> ValueGrid:
    return ValueGrid(grid.k, grid.e_axis, grid.eps_axis, np.zeros_like(grid.values))


def exact_delta(grid_next: ValueGrid, model: ScalarModel, k: int, e, eps, tau, f, c4: int = 33):
    """Value residual of RTX over TX at arbitrary states; zero where RTX is not allowed."""
    e, eps, tau, f = np.broadcast_arrays(*(np.asarray(v) for v in (e, eps, tau, f)))
    out = np.zeros(e.shape)
    interp = _Interpolator(grid_next, model.transition)
    for t in range(1, model.omega_max + 1):
        for fs in np.unique(f):
            sel = (tau == t) & (f == fs)
            if sel.any():
                out[sel] = action_terms(interp, model, k, e[sel], eps[sel], t, int(fs), c4).delta
    return out


def decision_map(grid: ValueGrid) -> np.ndarray:
    """Boolean RTX table over (tau, fading, e, eps); ties resolve to TX."""
    if grid.rtx is None:
        raise ValueError("terminal grid has no decisions")
    return grid.rtx


def lookahead_map(grid_next: ValueGrid, model: ScalarModel, k: int, c4: int = 33) -> np.ndarray:
    """Decision map with the next-step value zeroed (one-step lookahead)."""
    return decision_map(backup_value(zero_like(grid_next), model, k, c4))


def closed_form_lookahead(model: ScalarModel, k: int, e_axis, eps_axis) -> np.ndarray:
    """RTX table from the sign of the one-step statistic, same layout as decision_map."""
    F = model.lam.shape[0]
    out = np.zeros((model.n_tau, F, len(e_axis), len(eps_axis)), dtype=bool)
    g, A = model.Gamma[k + 1], model.A[k]
    E, S = np.meshgrid(e_axis, eps_axis, indexing="ij")
    for tau in range(1, model.omega_max + 1):
        for f in range(F):
            lw, l0 = model.rate(f, tau), model.rate(f, 0)
            omega = (lw - l0) * g * (A * E) ** 2 + (1 - lw) * g * S ** 2
            out[tau, f] = omega < 0
    return out


def threshold_violations(grid: ValueGrid) -> int:
    """Count (tau, f, eps) columns where RTX is not upward-closed in |e|."""
    rtx = decision_map(grid)
    e = grid.e_axis
    order = np.argsort(np.abs(e), kind="stable")
    count = 0
    T, F, _, c2 = rtx.shape
    for tau in range(T):
        for f in range(F):
            col = rtx[tau, f][order]
            # once RTX at some |e|, it must stay RTX for larger |e|
            seen = np.maximum.accumulate(col, axis=0)
            count += int(np.any(seen & ~col, axis=0).sum())
    return count


def rollout(grids: list[ValueGrid], model: ScalarModel, start, runs: int, rng: np.random.Generator,
            policy: str = "greedy", c4: int = 33, record: bool = False):
    """Forward Monte Carlo of the reduced mismatch chain from ``start`` at k = 0.

    ``start = (e, eps, tau, f)``. ``policy`` is ``greedy`` (argmin of the
    grid action values), ``lookahead`` (closed-form one-step rule) or
    ``tx``. Returns per-run realized costs sum_{t=1..N} Gamma_t (e_t^2 + P_t)
    and optionally the visited free-decision states.
    """
    e = np.full(runs, float(start[0]))
    eps = np.full(runs, float(start[1]))
    tau = np.full(runs, int(start[2]))
    f = np.full(runs, int(start[3]))
    cost = np.zeros(runs)
    visited = []
    cum = np.cumsum(model.transition, axis=1)
    for k in range(model.N):
        free = (tau >= 1) & (tau <= model.omega_max)
        rtx = np.zeros(runs, dtype=bool)
        if policy != "tx" and free.any():
            interp = _Interpolator(grids[k + 1], model.transition)
            for t in range(1, model.omega_max + 1):
                for fs in range(model.lam.shape[0]):
                    sel = free & (tau == t) & (f == fs)
                    if not sel.any():
                        continue
                    if policy == "greedy":
                        terms = action_terms(interp, model, k, e[sel], eps[sel], t, fs, c4)
                        rtx[sel] = terms.q_rtx < terms.q_tx - TIE_TOL
                    else:
                        lw, l0 = model.rate(fs, t), model.rate(fs, 0)
                        g = model.Gamma[k + 1]
                        om = (lw - l0) * g * (model.A[k] * e[sel]) ** 2 + (1 - lw) * g * eps[sel] ** 2
                        rtx[sel] = om < 0
            if record:
                visited.append((k, e[free].copy(), eps[free].copy(), tau[free].copy(), f[free].copy(), rtx[free].copy()))
        lam = np.where(rtx, model.rate(f, tau), model.rate(f, 0))
        ok = rng.random(runs) >= lam
        kn = model.K[k + 1] * np.sqrt(model.N_inno[k + 1]) * rng.standard_normal(runs)
        e_next = np.where(ok, np.where(rtx, eps + kn, kn), model.A[k] * e + kn)
        eps_next = np.where(ok, 0.0, model.A[k + 1] * (kn + np.where(rtx, eps, 0.0)))
        tau = np.where(ok, 0, np.where(rtx, tau + 1, 1))
        f = (rng.random(runs)[:, None] >= cum[f]).sum(axis=1).clip(max=model.lam.shape[0] - 1)
        e, eps = e_next, eps_next
        cost += model.Gamma[k + 1] * (e * e + model.P[k + 1])
    return (cost, visited) if record else cost


def grid_rows(grid: ValueGrid):
    """Flatten a grid into CSV rows (k, tau, fading, e, eps, value, decision)."""
    T, F, c1, c2 = grid.shape
    for tau in range(T):
        for f in range(F):
            for i in range(c1):
                for j in range(c2):
                    dec = "" if grid.rtx is None else ("RTX" if grid.rtx[tau, f, i, j] else "TX")
                    yield (grid.k, tau, f, repr(float(grid.e_axis[i])), repr(float(grid.eps_axis[j])),
                           repr(float(grid.values[tau, f, i, j])), dec)
