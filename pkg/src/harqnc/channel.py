"""Packet-erasure channel with HARQ retransmissions and ideal acknowledgments.

Decisions are integer codes so they can live in numpy arrays: ``TX = 0``,
``RTX = 1`` and ``NONE = -1`` (no decision yet, i.e. before k = 0).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .model import ChannelSpec

TX, RTX, NONE = 0, 1, -1
DECISION_NAMES = {TX: "TX", RTX: "RTX", NONE: ""}


class ProtocolError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class LinkState:
    """Channel-side protocol state at step ``k``.

    The channel keeps the last failed payload and its origin time, so a
    retransmission always carries the estimate the protocol requires.
    """

    tau: int = 0
    fading_state: int = 0
    last_u: int = NONE
    last_gamma: int = NONE
    k: int = 0
    pending: np.ndarray | None = None
    pending_origin: int = -1

    @property
    def omega(self) -> int:
        return self.tau


@dataclass(frozen=True, eq=False)
class ChannelOutput:
    delivered: bool
    payload: np.ndarray | None = None
    origin: int = -1

    def __post_init__(self):
        if self.delivered != (self.payload is not None):
            raise ValueError("payload present iff delivered")


ERASED = ChannelOutput(False)


def error_rate(spec: ChannelSpec, link: LinkState, u: int) -> float:
    if u == TX:
        return float(spec.rate(link.fading_state, 0))
    if u == RTX:
        if link.tau < 1:
            raise ProtocolError("RTX requested with nothing pending (tau = 0)")
        return float(spec.rate(link.fading_state, link.omega))
    raise ValueError(f"unknown decision {u!r}")


def next_tau(tau, u, gamma):
    """Age recursion; works elementwise on arrays."""
    return np.where(gamma == 1, 0, np.where(u == TX, 1, tau + 1))


def fading_successor(transition: np.ndarray, state, u01):
    """Inverse-CDF draw of the next fading state from uniforms ``u01``."""
    cdf = np.cumsum(transition, axis=1)
    cdf[:, -1] = 1.0
    row = cdf[state]
    return (u01[..., None] >= row).sum(axis=-1).clip(max=transition.shape[0] - 1)


def step_fading(spec: ChannelSpec, state_index: int, rng: np.random.Generator) -> int:
    if spec.n_states == 1:
        return state_index
    return int(fading_successor(spec.transition, np.asarray(state_index), np.asarray(rng.random())))


def transmit(spec: ChannelSpec, link: LinkState, u: int, payload: np.ndarray | None,
             rng: np.random.Generator | None = None, gamma: int | None = None,
             fading_u01: float | None = None):
    """One channel use at step ``link.k``.

    Returns ``(z_{k+1}, gamma_k, link_{k+1})``. ``gamma`` forces the erasure
    outcome (otherwise Bernoulli(1 - lambda) from ``rng``); on RTX the
    ``payload`` argument is ignored and the held packet is sent.
    """
    lam = error_rate(spec, link, u)
    if gamma is None:
        gamma = int(rng.random() >= lam)
    if u == TX:
        if payload is None:
            raise ProtocolError("TX needs the current estimate as payload")
        packet, origin = np.asarray(payload, dtype=float), link.k
    else:
        if link.pending is None:
            raise ProtocolError("RTX with no held packet")
        packet, origin = link.pending, link.pending_origin
        if origin != link.k - link.tau:
            raise ProtocolError(f"held packet origin {origin} != k - tau = {link.k - link.tau}")
    out = ChannelOutput(True, packet, origin) if gamma == 1 else ERASED
    tau = int(next_tau(link.tau, u, gamma))
    if fading_u01 is None:
        fading = step_fading(spec, link.fading_state, rng) if spec.n_states > 1 else link.fading_state
    else:
        fading = int(fading_successor(spec.transition, np.asarray(link.fading_state), np.asarray(fading_u01)))
    pending = (None, -1) if gamma == 1 else (packet, origin)
    new = replace(link, tau=tau, fading_state=fading, last_u=u, last_gamma=gamma, k=link.k + 1,
                  pending=pending[0], pending_origin=pending[1])
    return out, gamma, new
