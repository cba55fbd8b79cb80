"""Feedback rendering: fingertip force solve, PWM duty cycles, condition gating.

The fingertip channel approximates whatever the simulated finger feels as a
single resistive force on the demonstrator's fingertip: pick the force whose
average joint torque across the demonstrator finger best matches the
simulated finger's average torque, in the least-squares sense, subject to
the force being resistive (non-negative).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .kinematics import HumanFingerGeometry, human_moment_arms
from .simworld import Wrench

PWM_CONFIG_VERSION = 1

# Floor on the mean moment arm: keeps the solve bounded at pathological
# joint angles where the cosine terms collapse the arm toward zero.
MIN_MEAN_ARM = 1e-3

N_HUMAN_FINGERS = 5


class FeedbackCondition(str, Enum):
    NFF = "nff"  # no force feedback
    FFF = "fff"  # fingertip force feedback
    FPFF = "fpff"  # fingertip + palm force feedback

    @property
    def fingertip_active(self) -> bool:
        return self is not FeedbackCondition.NFF

    @property
    def palm_active(self) -> bool:
        return self is FeedbackCondition.FPFF


@dataclass(frozen=True)
class PwmCalibration:
    """Quadratic tendon calibration: force = a * duty^2 + b for duty in [0, 100]."""

    a: float = 1.72e-3
    b: float = 2.57

    def __post_init__(self):
        if self.a <= 0:
            raise ValueError("quadratic coefficient a must be positive")
        if self.b < 0:
            raise ValueError("static offset b must be non-negative")

    @property
    def force_ceiling(self) -> float:
        return self.a * 100.0**2 + self.b

    @classmethod
    def from_json(cls, path: str | Path) -> "PwmCalibration":
        data = json.loads(Path(path).read_text())
        if data.get("version", PWM_CONFIG_VERSION) != PWM_CONFIG_VERSION:
            raise ValueError(f"unsupported pwm.json version: {data.get('version')!r}")
        return cls(a=float(data["a"]), b=float(data["b"]))


@dataclass(frozen=True)
class FeedbackCommand:
    """Per-finger forces/duties plus palm wrench, as gated by the condition."""

    forces: np.ndarray  # (5,) newtons, thumb..pinky
    duties: np.ndarray  # (5,) percent
    palm: Wrench
    condition: FeedbackCondition
    t: float

    @staticmethod
    def zero(condition: FeedbackCondition, t: float = 0.0) -> "FeedbackCommand":
        return FeedbackCommand(np.zeros(N_HUMAN_FINGERS), np.zeros(N_HUMAN_FINGERS), Wrench.zero(), condition, t)


def mean_moment_arm(geom: HumanFingerGeometry, flexion_angles) -> float:
    """Average moment arm c(q) of the demonstrator finger, floored at MIN_MEAN_ARM."""
    arms = human_moment_arms(geom, flexion_angles)
    return max(float(np.mean(arms)), MIN_MEAN_ARM)


def solve_fingertip_force(tau_sim: float, geom: HumanFingerGeometry, flexion_angles) -> float:
    """Resistive fingertip force whose average torque best matches tau_sim.

    Minimizes ``(tau_sim - f * c(q))**2`` over f >= 0; the unconstrained
    optimum is tau_sim / c(q) and the constraint simply clamps negative
    torques (the glove cannot push) to zero force.
    """
    if not np.isfinite(tau_sim):
        raise ValueError("simulated torque must be finite")
    c = mean_moment_arm(geom, flexion_angles)
    return max(0.0, tau_sim / c)


def force_to_duty_cycle(force: float, cal: PwmCalibration) -> float:
    """Invert the tendon quadratic; forces below the static offset map to 0%."""
    if force < 0:
        raise ValueError("force must be non-negative")
    if force <= cal.b:
        return 0.0
    duty = ((force - cal.b) / cal.a) ** 0.5
    return min(duty, 100.0)


def compose_feedback(
    condition: FeedbackCondition,
    finger_forces,
    rendered: Wrench,
    finger_map: dict[int, int],
    cal: PwmCalibration,
    t: float = 0.0,
) -> FeedbackCommand:
    """Gate solved forces and the rendered palm wrench by feedback condition.

    ``finger_forces`` holds one solved force per *gripper* finger;
    ``finger_map`` routes gripper finger -> demonstrator finger. When two
    gripper fingers share one demonstrator finger (the parallel jaw), the
    larger force wins rather than summing the mirrored contact pair.
    """
    forces = np.zeros(N_HUMAN_FINGERS)
    duties = np.zeros(N_HUMAN_FINGERS)
    palm = Wrench.zero()
    if condition.fingertip_active:
        for g_finger, h_finger in finger_map.items():
            if g_finger < len(finger_forces):
                forces[h_finger] = max(forces[h_finger], float(finger_forces[g_finger]))
        duties = np.array([force_to_duty_cycle(f, cal) for f in forces])
    if condition.palm_active:
        palm = Wrench(rendered.force.copy(), rendered.torque.copy())
    return FeedbackCommand(forces=forces, duties=duties, palm=palm, condition=condition, t=t)
