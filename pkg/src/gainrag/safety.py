"""Safety guards applied to a payload before it reaches the controller.

* Speed-and-separation: protective distance ``S = K*T + C`` (mm); a human
  closer than ``S`` forces the human-present speed cap.
* Fragile objects: every stiffness gain is clamped to a cap.
* Visible human hand: nominal speed lowered to the human-present cap.

Guards only ever lower Kp and speed; Kd is left untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .impedance import ImpedancePayload, validate_payload
from .perception import NormalizedDescriptor
from .scenario_db import KP_RANGE, SPEED_LEVELS


@dataclass(frozen=True)
class SsmParams:
    K: float = 1600.0  # human approach speed, mm/s
    T: float = 0.3  # robot stopping time, s
    C: float = 850.0  # intrusion distance, mm

    def __post_init__(self):
        # T = C = 0 is allowed so the bare K*T + C arithmetic can be evaluated
        if not (self.K > 0 and self.T >= 0 and self.C >= 0):
            raise ValueError("SSM parameters need K > 0 and T, C >= 0")


@dataclass(frozen=True)
class SafetyLimits:
    fragile_kp_cap: float = 30.0
    human_present_max_v: str = "slow"
    # below this separation (mm) the speed is held at or under "mid"
    min_separation_for_normal_v: float = 2000.0

    def __post_init__(self):
        if not KP_RANGE[0] <= self.fragile_kp_cap <= KP_RANGE[1]:
            raise ValueError(f"fragile_kp_cap must lie in {KP_RANGE}")
        if self.human_present_max_v not in SPEED_LEVELS:
            raise ValueError(f"unknown speed level {self.human_present_max_v!r}")


def protective_distance(p: SsmParams) -> float:
    """Minimum separation in mm."""
    return p.K * p.T + p.C


def slower(a: str, b: str) -> str:
    return a if SPEED_LEVELS.index(a) <= SPEED_LEVELS.index(b) else b


def apply_guards(
    payload: ImpedancePayload,
    scene: NormalizedDescriptor,
    separation: float | None = None,
    limits: SafetyLimits | None = None,
    ssm: SsmParams | None = None,
) -> ImpedancePayload:
    limits = limits or SafetyLimits()
    ssm = ssm or SsmParams()
    kp = payload.kp
    v = payload.nominal_v

    if scene.object_fragility == "fragile":
        kp = tuple(min(k, limits.fragile_kp_cap) for k in kp)

    too_close = separation is not None and separation < protective_distance(ssm)
    if scene.human_presence == "hand_visible" or too_close:
        v = slower(v, limits.human_present_max_v)
    if separation is not None and separation < limits.min_separation_for_normal_v:
        v = slower(v, "mid")

    out = replace(payload, kp=kp, nominal_v=v)
    findings = validate_payload(out)
    if findings:
        raise ValueError("guarded payload failed validation: " + "; ".join(map(str, findings)))
    return out
