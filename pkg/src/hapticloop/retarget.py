"""Mapping demonstrator hand poses to gripper reference commands.

The demonstrator hand is a palm pose plus 20 joint angles, laid out
finger-major as (abduction, MCP, PIP, DIP) for thumb, index, middle, ring,
pinky. The palm pose passes through verbatim as the base reference; finger
angles drive the gripper DoF through per-DoF affine maps: all 20 copied for
the full hand, the three proximal flexions for the three-finger gripper, and
the index proximal flexion alone for the parallel jaw.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import quat_normalize
from .kinematics import GripperKind, GripperModel, build_gripper
from .simworld import GripperReference

JOINT_NAMES = ("abd", "mcp", "pip", "dip")
FINGERS = ("thumb", "index", "middle", "ring", "pinky")
HAND_DOF = 20
ANGLE_MIN, ANGLE_MAX = -0.5, 2.0

# Index proximal flexion driving the jaw: 0 rad -> fully open, this -> closed.
FRANKA_FLEX_LIMIT = 1.6


def joint_index(finger: int, name: str) -> int:
    return 4 * finger + JOINT_NAMES.index(name)


@dataclass(frozen=True)
class HumanHandPose:
    palm_pos: np.ndarray
    palm_quat: np.ndarray
    joints: np.ndarray  # (20,), clamped to anatomical range
    t: float = 0.0

    def __post_init__(self):
        pos = np.asarray(self.palm_pos, dtype=float)
        quat = quat_normalize(np.asarray(self.palm_quat, dtype=float))
        joints = np.asarray(self.joints, dtype=float)
        if joints.shape != (HAND_DOF,):
            raise ValueError(f"expected {HAND_DOF} joint angles, got {joints.shape}")
        joints = np.clip(joints, ANGLE_MIN, ANGLE_MAX)
        object.__setattr__(self, "palm_pos", pos)
        object.__setattr__(self, "palm_quat", quat)
        object.__setattr__(self, "joints", joints)

    def finger_flexions(self, finger: int) -> np.ndarray:
        """(MCP, PIP, DIP) flexion angles of one finger."""
        base = 4 * finger
        return self.joints[base + 1 : base + 4]

    @staticmethod
    def expand_joints(reduced: dict[str, float] | None) -> np.ndarray:
        """Build a full 20-vector from a sparse {"index.mcp": angle} mapping;
        UI clients usually only drive a few closure channels."""
        joints = np.zeros(HAND_DOF)
        for key, value in (reduced or {}).items():
            finger_name, joint_name = key.split(".")
            joints[joint_index(FINGERS.index(finger_name), joint_name)] = value
        return joints


@dataclass(frozen=True)
class DofSource:
    """One gripper DoF := scale * human_joint[source] + offset."""

    source: int
    scale: float = 1.0
    offset: float = 0.0


@dataclass(frozen=True)
class RetargetMap:
    kind: GripperKind
    sources: tuple[DofSource, ...]
    feedback_map: dict[int, int]  # gripper finger -> human finger

    def __post_init__(self):
        if len(self.sources) != self.kind.dof:
            raise ValueError(f"{self.kind.value} needs {self.kind.dof} DoF sources")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "sources": [{"source": s.source, "scale": s.scale, "offset": s.offset} for s in self.sources],
            "feedback_map": {str(k): v for k, v in self.feedback_map.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RetargetMap":
        return cls(
            kind=GripperKind(data["kind"]),
            sources=tuple(DofSource(**s) for s in data["sources"]),
            feedback_map={int(k): v for k, v in data["feedback_map"].items()},
        )

    @classmethod
    def from_json(cls, path: str | Path) -> "RetargetMap":
        return cls.from_dict(json.loads(Path(path).read_text()))


def feedback_finger_map(kind: GripperKind) -> dict[int, int]:
    """Which demonstrator finger each gripper finger's force is rendered to."""
    if kind is GripperKind.FRANKA:
        return {0: 1, 1: 1}  # both jaw fingers route to the index finger
    if kind is GripperKind.RUTH:
        return {0: 0, 1: 1, 2: 2}  # thumb, index, middle
    return {i: i for i in range(5)}


def default_retarget_map(kind: GripperKind) -> RetargetMap:
    if kind is GripperKind.FRANKA:
        jaw_open = 0.08
        sources = (DofSource(joint_index(1, "mcp"), scale=-jaw_open / FRANKA_FLEX_LIMIT, offset=jaw_open),)
    elif kind is GripperKind.RUTH:
        sources = tuple(DofSource(joint_index(f, "mcp")) for f in range(3))
    else:
        sources = tuple(DofSource(i) for i in range(HAND_DOF))
    return RetargetMap(kind=kind, sources=sources, feedback_map=feedback_finger_map(kind))


def retarget_pose(
    pose: HumanHandPose,
    rmap: RetargetMap,
    model: GripperModel | None = None,
    omega_ref: np.ndarray | None = None,
) -> GripperReference:
    """Base reference = palm pose verbatim; joints through the affine map,
    clamped to the gripper's limits."""
    model = model if model is not None else build_gripper(rmap.kind)
    targets = np.array([s.scale * pose.joints[s.source] + s.offset for s in rmap.sources])
    return GripperReference(
        base_pos=pose.palm_pos.copy(),
        base_quat=pose.palm_quat.copy(),
        joints=model.clamp_joints(targets),
        omega_ref=np.zeros(3) if omega_ref is None else np.asarray(omega_ref, dtype=float),
    )


def inverse_retarget(joints: np.ndarray, rmap: RetargetMap) -> np.ndarray:
    """Recover human joint angles from gripper joint targets (exact for the
    full-hand 1:1 map; other grippers recover only their source joints)."""
    human = np.zeros(HAND_DOF)
    for dof, s in enumerate(rmap.sources):
        human[s.source] = (joints[dof] - s.offset) / s.scale
    return human
