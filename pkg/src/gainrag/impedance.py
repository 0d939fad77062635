"""Joint-space impedance law, wrench mapping, payloads and gain slewing."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .scenario_db import (
    KD_RANGE,
    KP_RANGE,
    N_JOINTS,
    SPEED_LEVELS,
    Finding,
    GainSet,
    ScenarioRecord,
    _check_gain_list,
)

PAYLOAD_SIZE = 2 * N_JOINTS + 1

# why a payload was produced; ok == a database match
REASONS = ("ok", "tie", "low_confidence", "empty_db", "fallback", "stale", "error")

# nominal end-effector speed per level, m/s
SPEED_MPS = {"slow": 0.05, "mid": 0.15, "normal": 0.25}


class DegenerateConfigurationError(ValueError):
    def __init__(self, cond: float, limit: float):
        super().__init__(f"Jacobian condition number {cond:.3g} exceeds {limit:.3g}")
        self.condition_number = cond


@dataclass(frozen=True)
class ImpedancePayload:
    kp: tuple[float, ...]
    kd: tuple[float, ...]
    nominal_v: str
    scenario_id: str = ""
    reason: str = "ok"

    def __post_init__(self):
        object.__setattr__(self, "kp", tuple(float(v) for v in self.kp))
        object.__setattr__(self, "kd", tuple(float(v) for v in self.kd))

    @property
    def v_code(self) -> int:
        return SPEED_LEVELS.index(self.nominal_v)

    @property
    def speed_mps(self) -> float:
        return SPEED_MPS[self.nominal_v]

    def to_vector(self) -> list[float]:
        """29 values: 14 Kp, 14 Kd, velocity code."""
        return list(self.kp) + list(self.kd) + [float(self.v_code)]

    @classmethod
    def from_vector(cls, values: Sequence[float], scenario_id: str = "", reason: str = "ok") -> "ImpedancePayload":
        if len(values) != PAYLOAD_SIZE:
            raise ValueError(f"payload vector must have {PAYLOAD_SIZE} values, got {len(values)}")
        code = values[-1]
        if code not in (0, 1, 2):
            raise ValueError(f"invalid velocity code {code!r}")
        return cls(
            kp=values[:N_JOINTS],
            kd=values[N_JOINTS:2 * N_JOINTS],
            nominal_v=SPEED_LEVELS[int(code)],
            scenario_id=scenario_id,
            reason=reason,
        )

    def to_dict(self) -> dict:
        return {"values": self.to_vector(), "scenario_id": self.scenario_id, "reason": self.reason}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ImpedancePayload":
        return cls.from_vector(d["values"], scenario_id=d.get("scenario_id", ""), reason=d.get("reason", "ok"))

    @classmethod
    def from_record(cls, record: ScenarioRecord, reason: str = "ok") -> "ImpedancePayload":
        return cls(kp=record.gains.kp, kd=record.gains.kd, nominal_v=record.nominal_v,
                   scenario_id=record.scenario_id, reason=reason)

    def gains(self) -> GainSet:
        return GainSet(self.kp, self.kd)

    def with_reason(self, reason: str) -> "ImpedancePayload":
        return replace(self, reason=reason)


def validate_payload(p: ImpedancePayload) -> list[Finding]:
    findings = _check_gain_list("kp", p.kp, *KP_RANGE) + _check_gain_list("kd", p.kd, *KD_RANGE)
    if p.nominal_v not in SPEED_LEVELS:
        findings.append(Finding("nominal_v", p.nominal_v, "one of {slow, mid, normal}"))
    if p.reason not in REASONS:
        findings.append(Finding("reason", p.reason, "known reason"))
    return findings


def fallback_payload(reason: str = "fallback") -> ImpedancePayload:
    """Most compliant profile in the validated range: minimum Kp, maximum Kd, slow."""
    return ImpedancePayload(
        kp=(KP_RANGE[0],) * N_JOINTS,
        kd=(KD_RANGE[1],) * N_JOINTS,
        nominal_v="slow",
        scenario_id="fallback",
        reason=reason,
    )


@dataclass(frozen=True)
class JointState:
    q: np.ndarray
    qd: np.ndarray


@dataclass(frozen=True)
class JointCommand:
    q_ref: np.ndarray
    qd_ref: np.ndarray
    tau_ff: np.ndarray
    kp: np.ndarray
    kd: np.ndarray


def _finite(name, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError(f"non-finite value in {name}")


def impedance_torque(cmd: JointCommand, state: JointState) -> np.ndarray:
    """tau = Kp (q_ref - q) + Kd (qd_ref - qd) + tau_ff, per joint."""
    parts = [np.asarray(x, dtype=float) for x in (cmd.q_ref, cmd.qd_ref, cmd.tau_ff, cmd.kp, cmd.kd)]
    q = np.asarray(state.q, dtype=float)
    qd = np.asarray(state.qd, dtype=float)
    _finite("command", *parts)
    _finite("state", q, qd)
    q_ref, qd_ref, tau_ff, kp, kd = parts
    return kp * (q_ref - q) + kd * (qd_ref - qd) + tau_ff


def force_map(model, q, tau_arm, side: str, cond_limit: float = 1e6) -> np.ndarray:
    """End-effector wrench [f; m] whose joint-space image J^T F best matches ``tau_arm``.

    Least squares via the pseudo-inverse of J^T; refuses configurations whose
    Jacobian condition number exceeds ``cond_limit``.
    """
    from .kinematics import jacobian

    J = jacobian(model, q, side)
    tau = np.asarray(tau_arm, dtype=float)
    if tau.shape != (J.shape[1],):
        raise ValueError(f"expected {J.shape[1]} arm torques, got shape {tau.shape}")
    s = np.linalg.svd(J, compute_uv=False)
    cond = math.inf if s[-1] == 0 else s[0] / s[-1]
    if cond > cond_limit:
        raise DegenerateConfigurationError(cond, cond_limit)
    F, *_ = np.linalg.lstsq(J.T, tau, rcond=None)
    return F


class GainScheduler:
    """Linear slewing of all 28 gains from the active payload toward a target.

    Speed level and metadata switch at the midpoint. Replacing the target
    mid-slew restarts the ramp from the current interpolated gains.
    """

    def __init__(self, active: ImpedancePayload, slew_duration: float = 0.3):
        self.active = active
        self.target = active
        self.slew_duration = float(slew_duration)
        self.elapsed = 0.0
        self._current = active

    @property
    def output(self) -> ImpedancePayload:
        return self._current

    @property
    def settled(self) -> bool:
        return self.target == self.active

    def set_target(self, target: ImpedancePayload) -> None:
        if target == self.target:
            return
        self.active = self._current
        self.target = target
        self.elapsed = 0.0
        if self.slew_duration <= 0:
            self.active = self._current = target

    def step(self, dt: float) -> ImpedancePayload:
        if dt <= 0:
            raise ValueError("dt must be positive")
        if self.settled:
            self._current = self.active
            return self._current
        self.elapsed += dt
        # tolerance absorbs accumulated float error from repeated dt additions
        alpha = self.elapsed / self.slew_duration
        if alpha >= 1.0 - 1e-9:
            self.active = self.target
            self._current = self.target
            return self._current
        a, t = self.active, self.target
        kp = _lerp(a.kp, t.kp, alpha)
        kd = _lerp(a.kd, t.kd, alpha)
        meta = t if alpha >= 0.5 else a
        self._current = ImpedancePayload(kp, kd, meta.nominal_v, meta.scenario_id, meta.reason)
        return self._current


def _lerp(a, b, alpha):
    a = np.asarray(a)
    b = np.asarray(b)
    out = (1.0 - alpha) * a + alpha * b
    return np.clip(out, np.minimum(a, b), np.maximum(a, b))


def scheduler_step(s: GainScheduler, dt: float) -> ImpedancePayload:
    return s.step(dt)
