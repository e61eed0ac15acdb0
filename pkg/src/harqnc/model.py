"""Scenario data model: process, cost, channel and horizon.

A scenario is read from a JSON document (see README) and validated once.
Time-invariant matrices are stored a single time and served for every step
through :class:`Schedule`, so long horizons never replicate data.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

PSD_TOL = 1e-10
STOCHASTIC_TOL = 1e-12

POLICY_NAMES = ("harq_optimal", "harq_optimal_exact_delta", "always_tx", "random", "age_threshold")


class ScenarioError(ValueError):
    """Raised when a scenario document is malformed or fails validation."""

    def __init__(self, message: str, violations: list[Violation] | None = None):
        super().__init__(message)
        self.violations = list(violations or [])


@dataclass(frozen=True)
class Violation:
    field: str
    rule: str
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.field}: {self.rule}" + (f" ({self.detail})" if self.detail else "")


class Schedule:
    """Per-step matrix lookup backed either by one matrix or by a list.

    ``sched[k]`` returns the matrix for step ``k``. A time-invariant schedule
    ignores ``k`` apart from a non-negativity check.
    """

    def __init__(self, value: np.ndarray | Sequence[np.ndarray], time_varying: bool = False):
        self.time_varying = time_varying
        if time_varying:
            self._items = tuple(np.array(v, dtype=float) for v in value)
            if not self._items:
                raise ScenarioError("empty matrix schedule")
        else:
            self._items = (np.array(value, dtype=float),)
        for item in self._items:
            item.setflags(write=False)

    def __getitem__(self, k: int) -> np.ndarray:
        if k < 0:
            raise IndexError(f"negative step index {k}")
        if not self.time_varying:
            return self._items[0]
        return self._items[k]

    def __len__(self) -> int:
        return len(self._items)

    @property
    def shape(self) -> tuple[int, ...]:
        return self._items[0].shape

    def items(self) -> tuple[np.ndarray, ...]:
        return self._items

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Schedule):
            return NotImplemented
        return self.time_varying == other.time_varying and len(self) == len(other) and all(
            a.shape == b.shape and np.array_equal(a, b) for a, b in zip(self._items, other._items)
        )

    def scaled(self, c: float) -> Schedule:
        return Schedule([c * m for m in self._items] if self.time_varying else c * self._items[0], self.time_varying)


@dataclass(frozen=True, eq=False)
class SystemModel:
    A: Schedule
    B: Schedule
    C: Schedule
    W: Schedule
    V: Schedule
    m0: np.ndarray
    M0: np.ndarray
    test_mode: bool = False

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    @property
    def time_varying(self) -> bool:
        return any(s.time_varying for s in (self.A, self.B, self.C, self.W, self.V))


@dataclass(frozen=True, eq=False)
class CostSpec:
    Q: Schedule
    R: Schedule

    def scaled(self, c: float) -> CostSpec:
        return CostSpec(self.Q.scaled(c), self.R.scaled(c))


@dataclass(frozen=True, eq=False)
class ChannelSpec:
    """Markov-modulated HARQ error rates.

    ``lam[f, s]`` is the error rate in fading state ``f`` after ``s``
    retransmissions; ``s`` beyond the table clamps to the last column.
    """

    omega_max: int
    lam: np.ndarray
    transition: np.ndarray
    initial_state: int = 0

    @property
    def n_states(self) -> int:
        return self.lam.shape[0]

    @property
    def s_max(self) -> int:
        return self.lam.shape[1] - 1

    def rate(self, fading_state, s):
        s = np.minimum(s, self.s_max)
        return self.lam[fading_state, s]

    @classmethod
    def constant(cls, rates: Sequence[float], omega_max: int) -> ChannelSpec:
        return cls(omega_max, np.array([rates], dtype=float), np.ones((1, 1)), 0)


@dataclass(frozen=True)
class PolicySpec:
    name: str
    param: float | None = None

    @classmethod
    def parse(cls, text: str | dict | PolicySpec) -> PolicySpec:
        if isinstance(text, PolicySpec):
            return text
        if isinstance(text, dict):
            name = text.get("name")
            param = text.get("p", text.get("d"))
            return cls._checked(str(name), param)
        m = re.fullmatch(r"\s*([a-z_]+)\s*(?:\(\s*([^)]*)\s*\))?\s*", str(text))
        if not m:
            raise ScenarioError(f"unparseable policy {text!r}")
        name, arg = m.group(1), m.group(2)
        return cls._checked(name, float(arg) if arg not in (None, "") else None)

    @classmethod
    def _checked(cls, name: str, param) -> PolicySpec:
        if name not in POLICY_NAMES:
            raise ScenarioError(f"unknown policy {name!r}; expected one of {', '.join(POLICY_NAMES)}")
        if name == "random":
            if param is None or not 0.0 <= float(param) <= 1.0:
                raise ScenarioError("random(p) needs p in [0, 1]")
            return cls(name, float(param))
        if name == "age_threshold":
            if param is None or float(param) < 1 or float(param) != int(param):
                raise ScenarioError("age_threshold(d) needs an integer d >= 1")
            return cls(name, int(param))
        if param is not None:
            raise ScenarioError(f"policy {name!r} takes no parameter")
        return cls(name, None)

    def __str__(self) -> str:
        if self.param is None:
            return self.name
        return f"{self.name}({self.param:g})"


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    system: SystemModel
    cost: CostSpec
    channel: ChannelSpec
    N: int
    seed: int = 0
    runs: int = 1
    policy: PolicySpec = field(default_factory=lambda: PolicySpec("harq_optimal"))

    def with_overrides(self, **kw) -> ScenarioConfig:
        """Copy with fields replaced; the result is re-validated."""
        fields = dict(system=self.system, cost=self.cost, channel=self.channel, N=self.N,
                      seed=self.seed, runs=self.runs, policy=self.policy)
        for key, value in kw.items():
            if value is None:
                continue
            if key == "policy":
                value = PolicySpec.parse(value)
            elif key in ("N", "seed", "runs"):
                if isinstance(value, bool) or int(value) != value:
                    raise ScenarioError(f"override {key} must be an integer")
                value = int(value)
            elif key not in fields:
                raise ScenarioError(f"unknown override {key!r}")
            fields[key] = value
        cfg = ScenarioConfig(**fields)
        _raise_if_invalid(cfg)
        return cfg

    @property
    def is_scalar(self) -> bool:
        return self.system.n == 1 and self.system.p == 1


# ---------------------------------------------------------------------------
# validation


def _is_symmetric(M: np.ndarray, tol: float = 1e-9) -> bool:
    return M.ndim == 2 and M.shape[0] == M.shape[1] and np.allclose(M, M.T, atol=tol, rtol=0)


def _min_eig(M: np.ndarray) -> float:
    return float(np.linalg.eigvalsh((M + M.T) / 2).min())


def _check_psd(out: list, name: str, sched: Schedule | np.ndarray, strict: bool):
    mats = sched.items() if isinstance(sched, Schedule) else (sched,)
    for i, M in enumerate(mats):
        label = name if len(mats) == 1 else f"{name}[{i}]"
        if not _is_symmetric(M):
            out.append(Violation(label, "symmetric", "matrix is not symmetric"))
            continue
        lo = _min_eig(M)
        scale = max(1.0, float(np.abs(M).max()))
        if strict and lo <= PSD_TOL * scale:
            out.append(Violation(label, "positive definite", f"min eigenvalue {lo:.3g}"))
        elif not strict and lo < -PSD_TOL * scale:
            out.append(Violation(label, "PSD", f"min eigenvalue {lo:.3g}"))


def _check_shape(out: list, name: str, sched: Schedule, shape: tuple[int, int]):
    for i, M in enumerate(sched.items()):
        if M.shape != shape:
            label = name if len(sched) == 1 else f"{name}[{i}]"
            out.append(Violation(label, "dimension", f"expected {shape}, got {M.shape}"))
            return False
    return True


def _check_length(out: list, name: str, sched: Schedule, needed: int):
    if sched.time_varying and len(sched) < needed:
        out.append(Violation(name, "schedule length", f"need at least {needed} entries, got {len(sched)}"))


def validate_scenario(cfg: ScenarioConfig) -> list[Violation]:
    """Return every invariant violation of ``cfg``; empty iff valid."""
    out: list[Violation] = []
    sys, cost, ch = cfg.system, cfg.cost, cfg.channel

    if isinstance(cfg.N, bool) or not isinstance(cfg.N, (int, np.integer)) or cfg.N < 1:
        out.append(Violation("horizon", "N >= 1", f"got {cfg.N!r}"))
    if isinstance(cfg.runs, bool) or not isinstance(cfg.runs, (int, np.integer)) or cfg.runs < 1:
        out.append(Violation("runs", "runs >= 1", f"got {cfg.runs!r}"))
    if not 0 <= int(cfg.seed) < 2**64:
        out.append(Violation("seed", "64-bit unsigned integer"))

    n = sys.A.shape[0] if len(sys.A.shape) == 2 else 0
    ok = len(sys.A.shape) == 2 and _check_shape(out, "system.A", sys.A, (n, n))
    if not ok:
        if len(sys.A.shape) != 2:
            out.append(Violation("system.A", "dimension", "A must be square"))
        return out
    m = sys.B.shape[1] if len(sys.B.shape) == 2 else 0
    p = sys.C.shape[0] if len(sys.C.shape) == 2 else 0
    dims_ok = all([
        _check_shape(out, "system.B", sys.B, (n, m)),
        _check_shape(out, "system.C", sys.C, (p, n)),
        _check_shape(out, "system.W", sys.W, (n, n)),
        _check_shape(out, "system.V", sys.V, (p, p)),
        _check_shape(out, "cost.Q", cost.Q, (n, n)),
        _check_shape(out, "cost.R", cost.R, (m, m)),
    ])
    if sys.m0.shape != (n,):
        out.append(Violation("system.m0", "dimension", f"expected ({n},), got {sys.m0.shape}"))
        dims_ok = False
    if sys.M0.shape != (n, n):
        out.append(Violation("system.M0", "dimension", f"expected ({n}, {n}), got {sys.M0.shape}"))
        dims_ok = False
    if not dims_ok:
        return out

    N = int(cfg.N) if isinstance(cfg.N, (int, np.integer)) else 1
    for name, sched, needed in (("system.A", sys.A, N + 1), ("system.B", sys.B, N + 1),
                                ("system.C", sys.C, N + 1), ("system.W", sys.W, N + 1),
                                ("system.V", sys.V, N + 1), ("cost.Q", cost.Q, N + 2),
                                ("cost.R", cost.R, N + 1)):
        _check_length(out, name, sched, needed)

    _check_psd(out, "system.W", sys.W, strict=not sys.test_mode)
    _check_psd(out, "system.V", sys.V, strict=not sys.test_mode)
    _check_psd(out, "system.M0", sys.M0, strict=False)
    _check_psd(out, "cost.Q", cost.Q, strict=False)
    _check_psd(out, "cost.R", cost.R, strict=True)

    if ch.omega_max < 0 or int(ch.omega_max) != ch.omega_max:
        out.append(Violation("channel.omega_max", "non-negative integer"))
    if ch.lam.ndim != 2 or ch.lam.shape[0] < 1:
        out.append(Violation("channel.fading", "lambda table", "need at least one state"))
        return out
    if not np.all(np.isfinite(ch.lam)) or np.any(ch.lam < 0) or np.any(ch.lam > 1):
        out.append(Violation("channel.fading.lambda", "range [0, 1]"))
    if ch.s_max < ch.omega_max:
        out.append(Violation("channel.fading.lambda", "s_max >= omega_max",
                             f"table covers s <= {ch.s_max}, omega_max = {ch.omega_max}"))
    T = ch.transition
    F = ch.n_states
    if T.shape != (F, F):
        out.append(Violation("channel.transition", "dimension", f"expected ({F}, {F}), got {T.shape}"))
    else:
        if np.any(T < 0):
            out.append(Violation("channel.transition", "non-negative entries"))
        if np.any(np.abs(T.sum(axis=1) - 1.0) > STOCHASTIC_TOL):
            out.append(Violation("channel.transition", "row-stochastic", f"row sums {T.sum(axis=1).tolist()}"))
    if not 0 <= ch.initial_state < F:
        out.append(Violation("channel.initial_state", "valid state index"))
    return out


def _raise_if_invalid(cfg: ScenarioConfig):
    violations = validate_scenario(cfg)
    if violations:
        raise ScenarioError("; ".join(str(v) for v in violations), violations)


# ---------------------------------------------------------------------------
# (de)serialization


def _matrix(value, name: str, vector: bool = False) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{name}: not a numeric array ({exc})") from None
    if vector:
        return arr.reshape(-1)
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    if arr.ndim != 2:
        raise ScenarioError(f"{name}: expected a row-major nested array (2-D), got {arr.ndim}-D")
    return arr


def _schedule(doc: dict, key: str, section: str) -> Schedule:
    sched_key = f"{key}_schedule"
    name = f"{section}.{key}"
    if sched_key in doc:
        if key in doc:
            raise ScenarioError(f"{name}: give either {key} or {sched_key}, not both")
        return Schedule([_matrix(v, name) for v in doc[sched_key]], time_varying=True)
    if key not in doc:
        raise ScenarioError(f"{name}: missing")
    return Schedule(_matrix(doc[key], name))


def scenario_from_dict(doc: dict) -> ScenarioConfig:
    """Build a validated :class:`ScenarioConfig` from a parsed document."""
    try:
        sd, cd, chd = doc["system"], doc["cost"], doc["channel"]
    except (KeyError, TypeError) as exc:
        raise ScenarioError(f"missing top-level section {exc}") from None
    system = SystemModel(
        A=_schedule(sd, "A", "system"),
        B=_schedule(sd, "B", "system"),
        C=_schedule(sd, "C", "system"),
        W=_schedule(sd, "W", "system"),
        V=_schedule(sd, "V", "system"),
        m0=_matrix(sd.get("m0"), "system.m0", vector=True),
        M0=_matrix(sd.get("M0"), "system.M0"),
        test_mode=bool(doc.get("test_mode", sd.get("test_mode", False))),
    )
    cost = CostSpec(Q=_schedule(cd, "Q", "cost"), R=_schedule(cd, "R", "cost"))

    fading = chd.get("fading")
    if fading is None:
        raise ScenarioError("channel.fading: missing")
    rows = [list(st["lambda"]) if isinstance(st, dict) else list(st) for st in fading]
    if len({len(r) for r in rows}) != 1:
        raise ScenarioError("channel.fading: every state needs a lambda table of the same length")
    lam = _matrix(rows, "channel.fading.lambda")
    transition = _matrix(chd.get("transition", np.eye(len(rows)).tolist()), "channel.transition")
    try:
        channel = ChannelSpec(
            omega_max=int(chd["omega_max"]),
            lam=lam,
            transition=transition,
            initial_state=int(chd.get("initial_state", 0)),
        )
        cfg = ScenarioConfig(
            system=system,
            cost=cost,
            channel=channel,
            N=int(doc["horizon"]),
            seed=int(doc.get("seed", 0)),
            runs=int(doc.get("runs", 1)),
            policy=PolicySpec.parse(doc.get("policy", "harq_optimal")),
        )
    except KeyError as exc:
        raise ScenarioError(f"missing key {exc}") from None
    _raise_if_invalid(cfg)
    return cfg


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Parse and validate a scenario JSON file."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: malformed JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ScenarioError(f"{path}: top level must be an object")
    return scenario_from_dict(doc)


def _sched_to_doc(out: dict, key: str, sched: Schedule):
    if sched.time_varying:
        out[f"{key}_schedule"] = [m.tolist() for m in sched.items()]
    else:
        out[key] = sched[0].tolist()


def scenario_to_dict(cfg: ScenarioConfig) -> dict[str, Any]:
    sys = cfg.system
    system: dict[str, Any] = {}
    for key in "ABCWV":
        _sched_to_doc(system, key, getattr(sys, key))
    system["m0"] = sys.m0.tolist()
    system["M0"] = sys.M0.tolist()
    if sys.test_mode:
        system["test_mode"] = True
    cost: dict[str, Any] = {}
    _sched_to_doc(cost, "Q", cfg.cost.Q)
    _sched_to_doc(cost, "R", cfg.cost.R)
    ch = cfg.channel
    return {
        "system": system,
        "cost": cost,
        "channel": {
            "omega_max": int(ch.omega_max),
            "fading": [{"lambda": row.tolist()} for row in ch.lam],
            "transition": ch.transition.tolist(),
            "initial_state": int(ch.initial_state),
        },
        "horizon": int(cfg.N),
        "seed": int(cfg.seed),
        "runs": int(cfg.runs),
        "policy": str(cfg.policy),
    }


def dump_scenario(cfg: ScenarioConfig) -> str:
    return json.dumps(scenario_to_dict(cfg), indent=2, sort_keys=True)


def bundled_scenario_path(name: str) -> Path:
    """Path of a scenario shipped with the package (``pendulum``, ``scalar``)."""
    return Path(__file__).parent / "scenarios" / f"{name}.json"
