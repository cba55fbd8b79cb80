"""Kinematic models of the three grippers and of the demonstrator's fingers.

Joint/finger conventions
------------------------
Palm-local frame: fingers extend along -z when straight, so a gripper whose
base orientation is identity hangs "fingers down" over the desk. Each finger
is a planar chain in the plane spanned by its outward radial direction and
the palm -z axis; positive flexion curls the fingertip inward.

Joints of a chain are numbered distal-first for torque purposes (joint 1 is
the distal joint), which is the indexing required by the nested moment-arm
formulas in :func:`finger_moment_arms`. Phalanx lengths are named the other
way round: ``lengths[0]`` is the proximal phalanx, ``lengths[1]`` the middle
one; the fingertip contact sits at distance ``d`` beyond the distal joint.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .geometry import IDENTITY_QUAT, Pose, quat_from_rotvec, quat_mul, quat_rotate

GRIPPER_CONFIG_VERSION = 1


class GripperKind(str, Enum):
    FRANKA = "franka"
    RUTH = "ruth"
    MANO = "mano"

    @property
    def dof(self) -> int:
        return {GripperKind.FRANKA: 1, GripperKind.RUTH: 3, GripperKind.MANO: 20}[self]

    @property
    def total_dim(self) -> int:
        """State/action dimension: 6 base-pose DoF plus gripper DoF."""
        return 6 + self.dof


@dataclass(frozen=True)
class HumanFingerGeometry:
    """Phalanx lengths (proximal first) and fingertip contact distance, meters."""

    lengths: tuple[float, ...] = (0.045, 0.025)
    contact_distance: float = 0.015

    def __post_init__(self):
        if self.contact_distance <= 0:
            raise ValueError("contact distance must be positive")
        if any(l <= 0 for l in self.lengths):
            raise ValueError("phalanx lengths must be positive")


# One geometry per demonstrator finger (thumb, index, middle, ring, pinky).
DEFAULT_HUMAN_FINGERS = (
    HumanFingerGeometry((0.035, 0.025), 0.015),
    HumanFingerGeometry((0.045, 0.025), 0.015),
    HumanFingerGeometry((0.048, 0.027), 0.015),
    HumanFingerGeometry((0.045, 0.025), 0.015),
    HumanFingerGeometry((0.038, 0.022), 0.013),
)

HUMAN_FINGER_NAMES = ("thumb", "index", "middle", "ring", "pinky")


@dataclass(frozen=True)
class FingerChain:
    """One finger: mount point on the palm plus a planar flexion chain.

    segment_lengths are ordered proximal-to-distal and include the tip
    segment, so a 3-joint finger carries (l1, l2, d). ``prismatic`` marks the
    parallel-jaw finger, which slides along ``radial_dir`` instead of
    curling. ``has_abduction`` adds a leading joint that swings the radial
    direction inside the palm plane. ``coupled`` means the chain's joints are
    all driven 1:1 by a single actuated value.
    """

    mount_pos: tuple[float, float, float]
    radial_dir: tuple[float, float, float]
    segment_lengths: tuple[float, ...]
    prismatic: bool = False
    has_abduction: bool = False
    coupled: bool = False
    pad_length: float = 0.0  # contact pad extent up the distal segment

    def __post_init__(self):
        if any(l <= 0 for l in self.segment_lengths):
            raise ValueError("segment lengths must be positive")

    @property
    def flexion_joints(self) -> int:
        return len(self.segment_lengths)

    @property
    def joint_count(self) -> int:
        return self.flexion_joints + (1 if self.has_abduction else 0)

    @property
    def tip_distance(self) -> float:
        return self.segment_lengths[-1]

    def inter_joint_lengths(self) -> tuple[float, ...]:
        """Proximal-first phalanx lengths feeding the moment-arm formulas."""
        return self.segment_lengths[:-1]


@dataclass(frozen=True)
class GripperModel:
    kind: GripperKind
    fingers: tuple[FingerChain, ...]
    joint_limits: np.ndarray  # (dof, 2) radians, meters for the prismatic jaw
    fingertip_radius: float
    palm_radius: float
    prismatic_arm: float | None = None  # jaw force -> equivalent average torque

    def __post_init__(self):
        lim = np.asarray(self.joint_limits, dtype=float)
        if lim.shape != (self.kind.dof, 2):
            raise ValueError(f"joint limits must be ({self.kind.dof}, 2)")
        if not np.all(lim[:, 0] < lim[:, 1]):
            raise ValueError("every joint limit must satisfy min < max")
        object.__setattr__(self, "joint_limits", lim)

    @property
    def dof(self) -> int:
        return self.kind.dof

    @property
    def total_dim(self) -> int:
        return self.kind.total_dim

    def clamp_joints(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self.joint_limits[:, 0], self.joint_limits[:, 1])

    def home_joints(self) -> np.ndarray:
        if self.kind is GripperKind.FRANKA:
            return np.array([self.joint_limits[0, 1]])  # jaw open
        return np.zeros(self.dof)

    def finger_joint_values(self, q: np.ndarray, finger: int) -> np.ndarray:
        """Per-finger joint vector (abduction first if present, then flexions
        proximal-to-distal), expanded from the actuated DoF vector."""
        chain = self.fingers[finger]
        if self.kind is GripperKind.FRANKA:
            return np.array([q[0]])
        if self.kind is GripperKind.RUTH:
            # single actuated value drives both flexion joints 1:1
            return np.array([q[finger], q[finger]])
        base = 4 * finger
        return np.asarray(q[base : base + 4], dtype=float)

    def closure_fraction(self, q: np.ndarray) -> float:
        """Mean normalized closure over flexion DoF, 0 = open, 1 = closed.

        Flexion counts from the neutral (straight) pose, so hyperextension
        does not read as negative closure."""
        q = np.asarray(q, dtype=float)
        hi = self.joint_limits[:, 1]
        if self.kind is GripperKind.FRANKA:
            lo, top = self.joint_limits[0]
            return float((top - q[0]) / (top - lo))  # jaw separation: min = closed
        frac = np.clip(q, 0.0, None) / hi
        if self.kind is GripperKind.RUTH:
            return float(np.mean(frac))
        flex = np.ones(self.dof, dtype=bool)
        flex[0::4] = False  # skip abduction DoF
        return float(np.mean(frac[flex]))


@dataclass
class GripperState:
    """Base pose/twist plus joint positions and velocities."""

    base_pos: np.ndarray
    base_quat: np.ndarray
    lin_vel: np.ndarray
    ang_vel: np.ndarray
    q: np.ndarray
    qd: np.ndarray

    def copy(self) -> "GripperState":
        return GripperState(
            self.base_pos.copy(),
            self.base_quat.copy(),
            self.lin_vel.copy(),
            self.ang_vel.copy(),
            self.q.copy(),
            self.qd.copy(),
        )

    def validate(self, model: GripperModel) -> None:
        if self.q.shape != (model.dof,):
            raise ValueError(f"expected {model.dof} joint positions, got {self.q.shape}")
        n = np.linalg.norm(self.base_quat)
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"base quaternion norm {n} is not 1")


_FRANKA_FINGER_LENGTH = 0.10
_RUTH_MOUNT_RADIUS = 0.05
_MANO_LIMITS_FLEX = (-0.5, 2.0)
_MANO_LIMITS_ABD = (-0.5, 0.5)


def _ruth_mounts():
    out = []
    for deg in (90.0, 210.0, 330.0):
        a = math.radians(deg)
        out.append((math.cos(a), math.sin(a)))
    return out


def build_gripper(kind: GripperKind) -> GripperModel:
    """Built-in geometry for each supported gripper."""
    if kind is GripperKind.FRANKA:
        fingers = tuple(
            FingerChain(
                mount_pos=(0.0, 0.0, 0.0),
                radial_dir=(sign, 0.0, 0.0),
                segment_lengths=(_FRANKA_FINGER_LENGTH,),
                prismatic=True,
                pad_length=0.03,
            )
            for sign in (1.0, -1.0)
        )
        return GripperModel(
            kind=kind,
            fingers=fingers,
            joint_limits=np.array([[0.0, 0.08]]),
            fingertip_radius=0.010,
            palm_radius=0.025,
            prismatic_arm=0.04,
        )
    if kind is GripperKind.RUTH:
        fingers = tuple(
            FingerChain(
                mount_pos=(_RUTH_MOUNT_RADIUS * cx, _RUTH_MOUNT_RADIUS * cy, 0.0),
                radial_dir=(cx, cy, 0.0),
                segment_lengths=(0.035, 0.025),
                coupled=True,
            )
            for cx, cy in _ruth_mounts()
        )
        return GripperModel(
            kind=kind,
            fingers=fingers,
            joint_limits=np.array([[0.0, math.pi / 2]] * 3),
            fingertip_radius=0.010,
            palm_radius=0.03,
        )
    if kind is GripperKind.MANO:
        fingers = [
            # thumb opposes the four-finger row
            FingerChain(
                mount_pos=(-0.018, -0.045, 0.0),
                radial_dir=(0.0, -1.0, 0.0),
                segment_lengths=(0.035, 0.025, 0.015),
                has_abduction=True,
            )
        ]
        for x, geom in zip(
            (-0.018, -0.006, 0.006, 0.018),
            DEFAULT_HUMAN_FINGERS[1:],
        ):
            fingers.append(
                FingerChain(
                    mount_pos=(x, 0.045, 0.0),
                    radial_dir=(0.0, 1.0, 0.0),
                    segment_lengths=geom.lengths + (geom.contact_distance,),
                    has_abduction=True,
                )
            )
        limits = []
        for _ in range(5):
            limits.append(_MANO_LIMITS_ABD)
            limits.extend([_MANO_LIMITS_FLEX] * 3)
        return GripperModel(
            kind=kind,
            fingers=tuple(fingers),
            joint_limits=np.array(limits),
            fingertip_radius=0.010,
            palm_radius=0.035,
        )
    raise ValueError(f"unknown gripper kind: {kind}")


def load_gripper_config(path: str | Path, kind: GripperKind) -> GripperModel:
    """Load gripper geometry from a versioned grippers.json, falling back to
    built-ins for kinds the file does not override."""
    data = json.loads(Path(path).read_text())
    if data.get("version") != GRIPPER_CONFIG_VERSION:
        raise ValueError(f"unsupported grippers.json version: {data.get('version')!r}")
    entry = data.get("grippers", {}).get(kind.value)
    if entry is None:
        return build_gripper(kind)
    base = build_gripper(kind)
    fingers = []
    for spec_f, default_f in zip(entry.get("fingers", []), base.fingers):
        fingers.append(
            FingerChain(
                mount_pos=tuple(spec_f.get("mount_pos", default_f.mount_pos)),
                radial_dir=tuple(spec_f.get("radial_dir", default_f.radial_dir)),
                segment_lengths=tuple(spec_f.get("segment_lengths", default_f.segment_lengths)),
                prismatic=default_f.prismatic,
                has_abduction=default_f.has_abduction,
                coupled=default_f.coupled,
            )
        )
    fingers.extend(base.fingers[len(fingers) :])
    return GripperModel(
        kind=kind,
        fingers=tuple(fingers),
        joint_limits=np.asarray(entry.get("joint_limits", base.joint_limits)),
        fingertip_radius=float(entry.get("fingertip_radius", base.fingertip_radius)),
        palm_radius=float(entry.get("palm_radius", base.palm_radius)),
        prismatic_arm=base.prismatic_arm,
    )


def _chain_tip_local(chain: FingerChain, joints: np.ndarray) -> np.ndarray:
    """Fingertip position in the palm-local frame."""
    mount = np.asarray(chain.mount_pos, dtype=float)
    radial = np.asarray(chain.radial_dir, dtype=float)
    if chain.prismatic:
        # joints[0] is the full jaw separation, split across the two fingers
        return mount + radial * (0.5 * joints[0]) + np.array([0.0, 0.0, -chain.segment_lengths[0]])
    if chain.has_abduction:
        abd = joints[0]
        c, s = math.cos(abd), math.sin(abd)
        radial = np.array([c * radial[0] - s * radial[1], s * radial[0] + c * radial[1], 0.0])
        flex = joints[1:]
    else:
        flex = joints
    pos = mount.copy()
    theta = 0.0
    for seg, qj in zip(chain.segment_lengths, flex):
        theta += qj
        ct, st = math.cos(theta), math.sin(theta)
        # straight finger points along -z; flexion curls toward -radial
        pos = pos + np.array([-st * radial[0], -st * radial[1], -ct]) * seg
    return pos


def fingertip_positions(model: GripperModel, base_pos: np.ndarray, base_quat: np.ndarray, q: np.ndarray) -> list[np.ndarray]:
    """World-frame fingertip contact points, one per finger."""
    out = []
    for i in range(len(model.fingers)):
        local = _chain_tip_local(model.fingers[i], model.finger_joint_values(q, i))
        out.append(base_pos + quat_rotate(base_quat, local))
    return out


def forward_kinematics(model: GripperModel, state: GripperState) -> list[Pose]:
    """Fingertip poses in the world frame (orientation follows the distal segment)."""
    state.validate(model)
    poses = []
    for i, chain in enumerate(model.fingers):
        joints = model.finger_joint_values(state.q, i)
        local = _chain_tip_local(chain, joints)
        if chain.prismatic:
            local_quat = IDENTITY_QUAT.copy()
        else:
            flex = joints[1:] if chain.has_abduction else joints
            radial = np.asarray(chain.radial_dir, dtype=float)
            axis = np.cross(np.array([0.0, 0.0, -1.0]), -radial)
            total = float(np.sum(flex))
            local_quat = quat_from_rotvec(axis * total)
            if chain.has_abduction:
                local_quat = quat_mul(quat_from_rotvec(np.array([0.0, 0.0, joints[0]])), local_quat)
        poses.append(
            Pose(
                state.base_pos + quat_rotate(state.base_quat, local),
                quat_mul(state.base_quat, local_quat),
            )
        )
    return poses


def finger_moment_arms(lengths, q, d: float) -> np.ndarray:
    """Moment arms m[j] of a fingertip force about each flexion joint.

    ``q`` holds joint angles distal-first (q[0] is the distal joint), and
    ``lengths`` the phalanx lengths proximal-first (lengths[0] is the
    proximal phalanx). The contact sits at distance ``d`` from the distal
    joint. Returns one arm per joint, distal-first, so that
    ``torque[j] = m[j] * f`` nests: each joint adds one cosine term on top
    of the previous joint's torque.
    """
    if d <= 0:
        raise ValueError("contact distance must be positive")
    n = len(q)
    if not 1 <= n <= 3:
        raise ValueError("finger chains have 1 to 3 flexion joints")
    q2 = q[1] if n >= 2 else 0.0
    q3 = q[2] if n >= 3 else 0.0
    m = np.empty(n)
    m[0] = d
    if n == 2:
        # single phalanx between the two joints plays the middle-phalanx role
        m[1] = lengths[-1] * math.cos(q3) + m[0]
    elif n == 3:
        m[1] = lengths[1] * math.cos(q3) + m[0]
        m[2] = lengths[0] * math.cos(q2 + q3) + m[1]
    return m


def average_torque(arms: np.ndarray, force: float) -> float:
    """Mean joint torque produced by a fingertip force over a chain."""
    if len(arms) == 0:
        raise ValueError("need at least one joint")
    return float(force * np.mean(arms))


def human_moment_arms(geom: HumanFingerGeometry, flexion_angles) -> np.ndarray:
    """Arms for a 3-joint demonstrator finger given proximal-first flexions
    (MCP, PIP, DIP)."""
    mcp, pip, dip = flexion_angles
    return finger_moment_arms(geom.lengths, (dip, pip, mcp), geom.contact_distance)
