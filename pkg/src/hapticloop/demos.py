"""Demonstration recording, scripted demonstrators, and dataset statistics.

Trajectory files are JSON lines: a header record, one record per simulation
step, and a final outcome record. Floats serialize through Python's repr,
which round-trips binary64 exactly, so read(write(demo)) is bit-identical.

Scripted demonstrators stand in for human participants. All profiles run
the same plan: lean on the desk beside the duck while sizing up the grasp,
climb out, come over the top, descend, close a pre-shaped grasp, carry to
the tray and release. The conditions differ in what the demonstrator can
feel. Without feedback it leans longer, squeezes to a per-episode-random
depth and keeps tightening while it carries; with fingertip feedback it
stops squeezing once the felt force holds its target grip; with palm
feedback it also servoes the commanded height off the felt wrench instead
of leaning. Motion never pauses and no path segment retraces another, so
the state trajectory stays a function demonstrable to a proprioceptive
imitator.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.special import stdtr

from .geometry import IDENTITY_QUAT
from .haptics import FeedbackCommand, FeedbackCondition, N_HUMAN_FINGERS
from .kinematics import GripperKind, GripperModel, build_gripper, fingertip_positions
from .retarget import HAND_DOF, HumanHandPose, RetargetMap, default_retarget_map, joint_index, retarget_pose
from .session import EpisodeSession, StepResult
from .simworld import EventKind, WorldConfig, WorldState

TRAJECTORY_FORMAT_VERSION = 1
MANIFEST_VERSION = 1

# Finger flexion synergy: PIP and DIP follow the MCP closure command.
PIP_RATIO = 0.6
DIP_RATIO = 0.3


# ---------------------------------------------------------------------------
# trajectory format


@dataclass(frozen=True)
class TrajectorySample:
    t: float
    obs: np.ndarray
    act: np.ndarray
    finger_forces: np.ndarray  # (5,) ungated solved forces, N
    palm_force: float  # |rendered wrench force|, N
    duties: np.ndarray  # (5,) gated duty cycles, %
    hand_pos: np.ndarray
    hand_quat: np.ndarray
    hand_joints: np.ndarray
    events: tuple[str, ...] = ()

    def to_record(self) -> dict:
        return {
            "type": "sample",
            "t": self.t,
            "obs": [float(v) for v in self.obs],
            "act": [float(v) for v in self.act],
            "tip_n": [float(v) for v in self.finger_forces],
            "palm_n": float(self.palm_force),
            "duty": [float(v) for v in self.duties],
            "hand": {
                "pos": [float(v) for v in self.hand_pos],
                "quat": [float(v) for v in self.hand_quat],
                "q": [float(v) for v in self.hand_joints],
            },
            "events": list(self.events),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "TrajectorySample":
        return cls(
            t=rec["t"],
            obs=np.array(rec["obs"]),
            act=np.array(rec["act"]),
            finger_forces=np.array(rec["tip_n"]),
            palm_force=rec["palm_n"],
            duties=np.array(rec["duty"]),
            hand_pos=np.array(rec["hand"]["pos"]),
            hand_quat=np.array(rec["hand"]["quat"]),
            hand_joints=np.array(rec["hand"]["q"]),
            events=tuple(rec["events"]),
        )


@dataclass(frozen=True)
class DemoHeader:
    gripper: GripperKind
    condition: FeedbackCondition
    participant: str
    seed: int
    dt: float
    world: dict
    version: int = TRAJECTORY_FORMAT_VERSION

    def to_record(self) -> dict:
        return {
            "type": "header",
            "version": self.version,
            "gripper": self.gripper.value,
            "condition": self.condition.value,
            "participant": self.participant,
            "seed": self.seed,
            "dt": self.dt,
            "world": self.world,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "DemoHeader":
        return cls(
            gripper=GripperKind(rec["gripper"]),
            condition=FeedbackCondition(rec["condition"]),
            participant=rec["participant"],
            seed=rec["seed"],
            dt=rec["dt"],
            world=rec["world"],
            version=rec["version"],
        )


@dataclass(frozen=True)
class Outcome:
    success: bool
    exec_time: float


@dataclass
class Demonstration:
    header: DemoHeader
    samples: list[TrajectorySample]
    outcome: Outcome

    def __post_init__(self):
        if self.outcome.success and self.samples:
            if not any(EventKind.DUCK_IN_TRAY.value in s.events for s in self.samples):
                raise ValueError("successful demonstration lacks a DuckInTray event")


def write_demonstration(demo: Demonstration, path: str | Path) -> Path:
    """Atomic write: temp file in the target directory, then rename."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        fh.write(json.dumps(demo.header.to_record(), separators=(",", ":")) + "\n")
        for sample in demo.samples:
            fh.write(json.dumps(sample.to_record(), separators=(",", ":")) + "\n")
        fh.write(
            json.dumps(
                {"type": "outcome", "success": demo.outcome.success, "exec_time": demo.outcome.exec_time},
                separators=(",", ":"),
            )
            + "\n"
        )
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)
    return path


def read_demonstration(path: str | Path) -> Demonstration:
    header = None
    samples: list[TrajectorySample] = []
    outcome = None
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            if rec["type"] == "header":
                header = DemoHeader.from_record(rec)
            elif rec["type"] == "sample":
                samples.append(TrajectorySample.from_record(rec))
            elif rec["type"] == "outcome":
                outcome = Outcome(rec["success"], rec["exec_time"])
    if header is None or outcome is None:
        raise ValueError(f"{path}: incomplete trajectory file")
    return Demonstration(header, samples, outcome)


class TrajectoryRecorder:
    """Accumulates one sample per simulation step, then stamps the outcome."""

    def __init__(self, session: EpisodeSession, participant: str = "scripted"):
        self.session = session
        self.header = DemoHeader(
            gripper=session.kind,
            condition=session.condition,
            participant=participant,
            seed=session.config.seed,
            dt=session.config.dt,
            world=session.config.to_dict(),
        )
        self.samples: list[TrajectorySample] = []
        self._expected_dim = session.kind.total_dim
        self._success_t: float | None = None

    def add(self, result: StepResult) -> None:
        obs = result.obs_before  # the state this action was issued from
        act = result.reference.to_vector()
        if obs.shape != (self._expected_dim,) or act.shape != (self._expected_dim,):
            raise ValueError("observation/action dimension drifted mid-recording")
        pose = result.pose
        for e in result.events:
            if e.kind is EventKind.DUCK_IN_TRAY and self._success_t is None:
                self._success_t = e.t
        self.samples.append(
            TrajectorySample(
                t=result.world.t - self.session.config.dt,
                obs=obs,
                act=act,
                finger_forces=result.finger_forces.copy(),
                palm_force=result.palm_force,
                duties=result.command.duties.copy(),
                hand_pos=pose.palm_pos.copy() if pose else np.zeros(3),
                hand_quat=pose.palm_quat.copy() if pose else IDENTITY_QUAT.copy(),
                hand_joints=pose.joints.copy() if pose else np.zeros(HAND_DOF),
                events=tuple(e.kind.value for e in result.events),
            )
        )

    def finalize(self) -> Demonstration:
        if self._success_t is not None:
            outcome = Outcome(True, self._success_t)
        else:
            outcome = Outcome(False, self.session.config.timeout)
        return Demonstration(self.header, self.samples, outcome)


def record(session: EpisodeSession, demonstrator, sink: str | Path | None = None, participant: str = "scripted") -> Demonstration:
    """Drive a session with a demonstrator until the episode ends, recording
    every step; optionally flush the result to ``sink`` atomically."""
    recorder = TrajectoryRecorder(session, participant)
    max_steps = int(math.ceil(session.config.timeout / session.config.dt)) + 1
    for _ in range(max_steps):
        pose = demonstrator.step(session.world, session.feedback)
        result = session.step_with_pose(pose)
        recorder.add(result)
        if result.done:
            break
    demo = recorder.finalize()
    if sink is not None:
        write_demonstration(demo, sink)
    return demo


# ---------------------------------------------------------------------------
# scripted demonstrators


@dataclass(frozen=True)
class ScriptedDemonstratorConfig:
    target_grip: float = 3.0  # N, feedback-conditioned profiles stop here
    closure_excess_gain: float = 1.0  # scales the blind profile's over-closure
    noise_sigma: float = 0.002  # m, stationary amplitude of the hand sway
    reaction_delay: int = 3  # steps between feeling force and acting on it
    seed: int = 0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be non-negative")
        if self.reaction_delay < 0:
            raise ValueError("reaction delay must be non-negative")


class Phase(Enum):
    DESCEND = 0  # from home down to grasp height above the duck
    CLOSE = 1
    CARRY = 2  # settle to the carry height (scraping low without feedback)
    TRANSPORT = 3
    RAISE = 4  # up to release height over the tray
    RELEASE = 5
    RETREAT = 6


# gripper-specific scripted-profile constants, in human-command radians
_EXCESS_RANGE = {
    GripperKind.FRANKA: (0.14, 0.30),
    GripperKind.RUTH: (0.05, 0.14),
    GripperKind.MANO: (0.08, 0.20),
}
# model finger indices whose simultaneous touch defines the grasp closure
_GRASP_FINGERS = {
    GripperKind.FRANKA: (0, 1),
    GripperKind.RUTH: (0, 1, 2),
    GripperKind.MANO: (0, 1, 2),  # thumb, index, middle opposition
}
_CLOSURE_CAP = {
    GripperKind.FRANKA: 1.6,
    GripperKind.RUTH: 1.3,
    GripperKind.MANO: 1.5,
}
# palm height (above duck center) at which fingertips wrap the duck equator
_GRASP_RISE = {
    GripperKind.FRANKA: 0.100,
    GripperKind.RUTH: 0.057,
    GripperKind.MANO: 0.083,
}


class ScriptedDemonstrator:
    """Waypoint policy emitting demonstrator hand poses, one per step."""

    MOVE_SPEED = 0.22  # m/s commanded palm speed
    CLOSE_RATES = {GripperKind.FRANKA: 1.0, GripperKind.RUTH: 1.0, GripperKind.MANO: 0.6}
    SCRAPE_DEPTH = 0.06  # carry command below grasp height: scrapes the desk
    CARRY_SPEED = 0.15  # m/s while carrying (slower than free moves)
    RELEASE_RISE = 0.06  # above grasp height for the drop
    RELIEF_GAIN = 0.15  # palm-feedback height servo (palm-feedback profile)

    def __init__(
        self,
        config: ScriptedDemonstratorConfig,
        kind: GripperKind,
        condition: FeedbackCondition,
        world_config: WorldConfig,
        model: GripperModel | None = None,
        rmap: RetargetMap | None = None,
    ):
        self.config = config
        self.kind = kind
        self.condition = condition
        self.wcfg = world_config
        self.model = model if model is not None else build_gripper(kind)
        self.rmap = rmap if rmap is not None else default_retarget_map(kind)
        self.rng = np.random.default_rng(config.seed)
        self.active_fingers = sorted(set(self.rmap.feedback_map.values()))
        self.close_rate = self.CLOSE_RATES[kind]

        lo, hi = _EXCESS_RANGE[kind]
        self._finger_gains = {f: 1.0 for f in self.active_fingers}
        self._abduction = {f: 0.0 for f in self.active_fingers}
        if kind is GripperKind.MANO:
            # pre-shape the grasp: splay each finger so its curl plane aims
            # at the palm axis (a radial cage centers the object instead of
            # shoving it along the finger row), and scale the closures so
            # every finger touches at the same commanded closure
            for f in self.active_fingers:
                chain = self.model.fingers[f]
                mount = np.array(chain.mount_pos[:2])
                radial = np.array(chain.radial_dir[:2])
                outward = mount / np.linalg.norm(mount)
                angle = math.atan2(
                    radial[0] * outward[1] - radial[1] * outward[0],
                    float(radial @ outward),
                )
                lo_a, hi_a = self.model.joint_limits[4 * f]
                self._abduction[f] = float(np.clip(angle, lo_a, hi_a))
            self._calibrate_finger_gains()
        self.contact_closure = self._probe_contact_closure()
        self.deep_target = min(
            self.contact_closure + config.closure_excess_gain * self.rng.uniform(lo, hi),
            _CLOSURE_CAP[kind],
        )
        # Every profile commands the same low carry: without palm feedback
        # the demonstrator does not notice it is dragging the held duck
        # along the desk; the palm-feedback profile's relief servo lifts the
        # command until the felt wrench is gone. Motion never pauses: a
        # proprioceptive-only imitator cannot represent "hold still for k
        # steps", so waiting appears only as slower continuous movement.
        if condition is FeedbackCondition.NFF:
            # no cue that the grasp holds: keep squeezing while carrying
            self.carry_creep = self.deep_target + self.rng.uniform(0.04, 0.08)
        else:
            self.carry_creep = 0.0

        self.phase = Phase.DESCEND
        self.cmd = np.array(world_config.home_pos, dtype=float)
        self.grasp_xy = np.array(world_config.duck_spawn, dtype=float)
        self._aimed = False
        self.closure = 0.0
        self.frozen = False
        self.z_relief = 0.0
        self._force_history: list[float] = []
        self._felt_ema = 0.0  # perception low-pass: contact spikes are not grips
        self._grip_persist = 0  # consecutive steps the felt grip held target
        # hand sway as an Ornstein-Uhlenbeck process: slow drift, not 240 Hz
        # hash, so a closing grasp is not slapped off the duck
        self._sway = np.zeros(3)
        self._sway_decay = math.exp(-world_config.dt / 0.25)
        self._sway_scale = config.noise_sigma * math.sqrt(1.0 - self._sway_decay**2)

    def duck_rest_z(self) -> float:
        """Resting duck height: the compliant desk carries its weight."""
        from .simworld import GRAVITY

        sink = self.wcfg.duck_mass * GRAVITY / self.wcfg.desk_stiffness
        return self.wcfg.desk_height + self.wcfg.duck_radius - sink

    def _nominal_grasp_frames(self):
        duck = np.array([self.wcfg.duck_spawn[0], self.wcfg.duck_spawn[1], self.duck_rest_z()])
        palm = duck + np.array([0.0, 0.0, _GRASP_RISE[self.kind]])
        touch = self.wcfg.duck_radius + self.model.fingertip_radius
        return duck, palm, touch

    def _calibrate_finger_gains(self) -> None:
        duck, palm, touch = self._nominal_grasp_frames()
        cap = _CLOSURE_CAP[self.kind]

        def distances(c: float) -> list[float]:
            # gains are still identity here, so this sweeps the raw synergy
            joints = self._hand_joints(c)
            ref = retarget_pose(HumanHandPose(palm, IDENTITY_QUAT.copy(), joints), self.rmap, self.model)
            tips = fingertip_positions(self.model, palm, IDENTITY_QUAT, ref.joints)
            return [float(np.linalg.norm(t - duck)) - touch for t in tips]

        first_touch: dict[int, float] = {}
        for k in range(1, 201):
            c = cap * k / 200.0
            for f, clear in enumerate(distances(c)):
                if clear <= 0.0 and f not in first_touch:
                    first_touch[f] = c
        grasp_touch = [first_touch[f] for f in _GRASP_FINGERS[self.kind] if f in first_touch]
        if not grasp_touch:
            raise ValueError(f"{self.kind.value}: no opposition finger reaches the duck")
        c_sync = max(grasp_touch)
        for f in self.active_fingers:
            if f in first_touch:
                self._finger_gains[f] = first_touch[f] / c_sync

    def _probe_contact_closure(self) -> float:
        """Closure command at which the grasp wraps the duck when the palm
        sits at grasp height directly above it."""
        duck, palm, touch_dist = self._nominal_grasp_frames()
        grasp_fingers = _GRASP_FINGERS[self.kind]

        def clearance(c: float) -> float:
            # grasp complete once the farthest of the opposition fingers touches
            joints = self._hand_joints(c)
            ref = retarget_pose(
                HumanHandPose(palm, IDENTITY_QUAT.copy(), joints), self.rmap, self.model
            )
            tips = fingertip_positions(self.model, palm, IDENTITY_QUAT, ref.joints)
            return max(float(np.linalg.norm(tips[i] - duck)) - touch_dist for i in grasp_fingers)

        cap = _CLOSURE_CAP[self.kind]
        if clearance(0.0) <= 0.0:
            return 0.0
        # clearance is not monotone (a curling finger can swing up past the
        # duck), so bracket the first touch by scanning before bisecting
        lo = 0.0
        hi = None
        for k in range(1, 201):
            c = cap * k / 200.0
            if clearance(c) <= 0.0:
                hi = c
                break
            lo = c
        if hi is None:
            raise ValueError(f"{self.kind.value}: fingertips cannot reach the duck at full closure")
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            if clearance(mid) > 0.0:
                lo = mid
            else:
                hi = mid
        return hi

    def _hand_joints(self, closure: float) -> np.ndarray:
        joints = np.zeros(HAND_DOF)
        for f in self.active_fingers:
            c = self._finger_gains[f] * closure
            joints[joint_index(f, "abd")] = self._abduction[f]
            joints[joint_index(f, "mcp")] = c
            joints[joint_index(f, "pip")] = PIP_RATIO * c
            joints[joint_index(f, "dip")] = DIP_RATIO * c
        return joints

    def _creep(self, dt: float) -> None:
        # the blind profile keeps tightening its squeeze while carrying
        if self.carry_creep > 0.0:
            self.closure = min(self.closure + 0.08 * dt, self.carry_creep, _CLOSURE_CAP[self.kind])

    def _felt_force(self, feedback: FeedbackCommand) -> float:
        """Delayed, low-passed perception of the strongest rendered
        fingertip force (a millisecond contact spike is not a felt grip)."""
        self._force_history.append(float(np.max(feedback.forces[self.active_fingers])))
        idx = len(self._force_history) - 1 - self.config.reaction_delay
        delayed = self._force_history[idx] if idx >= 0 else 0.0
        self._felt_ema += 0.1 * (delayed - self._felt_ema)
        return self._felt_ema

    def _move_toward(self, target: np.ndarray, dt: float, speed: float | None = None) -> bool:
        delta = target - self.cmd
        dist = float(np.linalg.norm(delta))
        max_step = (self.MOVE_SPEED if speed is None else speed) * dt
        if dist <= max_step:
            self.cmd = target.copy()
            return True
        self.cmd = self.cmd + delta * (max_step / dist)
        return False

    def step(self, world: WorldState, feedback: FeedbackCommand) -> HumanHandPose:
        dt = self.wcfg.dt
        if not self._aimed:
            # commit to the grasp point once, from the observed duck; humans
            # do not chase millimeter object motion during the pinch
            self.grasp_xy = world.duck_pos[:2].copy()
            self._aimed = True
        grasp_z = self.duck_rest_z() + _GRASP_RISE[self.kind]
        release_z = grasp_z + self.RELEASE_RISE
        felt = self._felt_force(feedback)

        if self.condition.palm_active and self.phase in (Phase.CARRY, Phase.TRANSPORT):
            # back the commanded height off the felt palm wrench: feeling the
            # scrape, this profile carries clear of the desk
            self.z_relief += self.RELIEF_GAIN * feedback.palm.force[2] / max(self.wcfg.gains.k_px, 1e-9)
            self.z_relief = float(np.clip(self.z_relief, 0.0, 2.0 * self.SCRAPE_DEPTH + self.RELEASE_RISE))

        if self.phase is Phase.DESCEND:
            target = np.array([self.grasp_xy[0], self.grasp_xy[1], grasp_z])
            if self._move_toward(target, dt):
                self.phase = Phase.CLOSE
        elif self.phase is Phase.CLOSE:
            if self.condition.fingertip_active:
                if not self.frozen and felt >= self.config.target_grip:
                    self.frozen = True
                    self._grip_persist = 0
                if self.frozen:
                    # a graze that collapses is not a grip: resume closing
                    self._grip_persist = self._grip_persist + 1 if felt < 0.8 * self.config.target_grip else 0
                    if self._grip_persist >= 24:
                        self.frozen = False
                        self._grip_persist = 0
                if not self.frozen:
                    self.closure = min(self.closure + self.close_rate * dt, _CLOSURE_CAP[self.kind])
                # leave only with the grip holding right now (or given up)
                if (self.frozen and felt >= 0.8 * self.config.target_grip) or self.closure >= _CLOSURE_CAP[self.kind]:
                    self.phase = Phase.CARRY
            else:
                self.closure = min(self.closure + self.close_rate * dt, self.deep_target)
                if self.closure >= self.deep_target:
                    self.phase = Phase.CARRY
        elif self.phase is Phase.CARRY:
            self._creep(dt)
            target = np.array([self.cmd[0], self.cmd[1], grasp_z - self.SCRAPE_DEPTH + self.z_relief])
            if self._move_toward(target, dt, speed=self.CARRY_SPEED):
                self.phase = Phase.TRANSPORT
        elif self.phase is Phase.TRANSPORT:
            self._creep(dt)
            tray_c = 0.5 * (np.array(self.wcfg.tray_min) + np.array(self.wcfg.tray_max))
            target = np.array([tray_c[0], tray_c[1], grasp_z - self.SCRAPE_DEPTH + self.z_relief])
            if self._move_toward(target, dt, speed=self.CARRY_SPEED):
                self.phase = Phase.RAISE
        elif self.phase is Phase.RAISE:
            target = np.array([self.cmd[0], self.cmd[1], release_z])
            if self._move_toward(target, dt, speed=self.CARRY_SPEED):
                self.phase = Phase.RELEASE
        elif self.phase is Phase.RELEASE:
            self.closure = max(self.closure - 2.0 * self.close_rate * dt, 0.0)
            if self.closure == 0.0:
                self.phase = Phase.RETREAT
        else:  # RETREAT: rise clear and stay until the episode ends
            target = np.array([self.cmd[0], self.cmd[1], release_z + 0.05])
            self._move_toward(target, dt)

        if self.config.noise_sigma > 0:
            self._sway = self._sway * self._sway_decay + self.rng.normal(0.0, self._sway_scale, 3)
        return HumanHandPose(
            palm_pos=self.cmd + self._sway,
            palm_quat=IDENTITY_QUAT.copy(),
            joints=self._hand_joints(self.closure),
            t=world.t,
        )


# ---------------------------------------------------------------------------
# dataset generation and manifests


@dataclass(frozen=True)
class ManifestEntry:
    file: str
    gripper: GripperKind
    condition: FeedbackCondition
    participant: str
    seed: int
    success: bool
    exec_time: float


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    version: int = MANIFEST_VERSION

    def counts(self) -> dict[tuple[str, str], int]:
        out: dict[tuple[str, str], int] = {}
        for e in self.entries:
            key = (e.gripper.value, e.condition.value)
            out[key] = out.get(key, 0) + 1
        return out

    def select(self, gripper: GripperKind | None = None, condition: FeedbackCondition | None = None):
        return [
            e
            for e in self.entries
            if (gripper is None or e.gripper is gripper) and (condition is None or e.condition is condition)
        ]

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        data = {
            "version": self.version,
            "entries": [
                {
                    "file": e.file,
                    "gripper": e.gripper.value,
                    "condition": e.condition.value,
                    "participant": e.participant,
                    "seed": e.seed,
                    "success": e.success,
                    "exec_time": e.exec_time,
                }
                for e in self.entries
            ],
        }
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(data, indent=1))
        os.replace(tmp, path)
        return path

    @classmethod
    def read(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        data = json.loads(path.read_text())
        entries = [
            ManifestEntry(
                file=e["file"],
                gripper=GripperKind(e["gripper"]),
                condition=FeedbackCondition(e["condition"]),
                participant=e["participant"],
                seed=e["seed"],
                success=e["success"],
                exec_time=e["exec_time"],
            )
            for e in data["entries"]
        ]
        manifest = cls(entries=entries, version=data["version"])
        missing = [e.file for e in entries if not (path.parent / e.file).exists()]
        if missing:
            raise FileNotFoundError(f"manifest references missing files: {missing[:3]}")
        return manifest


def record_scripted_dataset(
    out_dir: str | Path,
    kind: GripperKind,
    condition: FeedbackCondition,
    episodes: int,
    base_seed: int,
    world_config: WorldConfig | None = None,
    script_config: ScriptedDemonstratorConfig | None = None,
    demos_per_participant: int = 5,
) -> DatasetManifest:
    """Keep attempting episodes until ``episodes`` successes are recorded,
    mirroring the repeat-until-success collection protocol."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    # default recording world buffets the hand: demonstrations must contain
    # the corrections that keep a cloned policy on its trajectory tube
    wcfg = world_config if world_config is not None else WorldConfig(base_disturbance=1.0)
    scfg = script_config if script_config is not None else ScriptedDemonstratorConfig()
    manifest = DatasetManifest()
    successes = 0
    attempt = 0
    while successes < episodes:
        seed = base_seed + attempt
        attempt += 1
        if attempt > episodes * 20:
            raise RuntimeError(f"{kind.value}/{condition.value}: too many failed scripted attempts")
        wcfg_ep = _with_seed(wcfg, seed)
        scfg_ep = ScriptedDemonstratorConfig(
            target_grip=scfg.target_grip,
            closure_excess_gain=scfg.closure_excess_gain,
            noise_sigma=scfg.noise_sigma,
            reaction_delay=scfg.reaction_delay,
            seed=seed,
        )
        session = EpisodeSession(wcfg_ep, kind, condition)
        demonstrator = ScriptedDemonstrator(scfg_ep, kind, condition, wcfg_ep)
        participant = f"s{successes // demos_per_participant:02d}"
        demo = record(session, demonstrator, participant=participant)
        if not demo.outcome.success:
            continue
        name = f"{kind.value}_{condition.value}_{participant}_e{successes:03d}.traj.jsonl"
        write_demonstration(demo, out_dir / name)
        manifest.entries.append(
            ManifestEntry(
                file=name,
                gripper=kind,
                condition=condition,
                participant=participant,
                seed=seed,
                success=True,
                exec_time=demo.outcome.exec_time,
            )
        )
        successes += 1
    return manifest


def _with_seed(cfg: WorldConfig, seed: int) -> WorldConfig:
    data = cfg.to_dict()
    data["seed"] = seed
    return WorldConfig.from_dict(data)


# ---------------------------------------------------------------------------
# statistics


@dataclass(frozen=True)
class BoxStats:
    n: int
    mean: float
    median: float
    q1: float
    q3: float
    whisker_lo: float
    whisker_hi: float
    minimum: float
    maximum: float

    @classmethod
    def from_values(cls, values) -> "BoxStats":
        v = np.asarray(values, dtype=float)
        if v.size == 0:
            raise ValueError("cannot summarize an empty group")
        q1, med, q3 = np.percentile(v, [25.0, 50.0, 75.0])
        iqr = q3 - q1
        lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
        inside = v[(v >= lo_fence) & (v <= hi_fence)]
        return cls(
            n=int(v.size),
            mean=float(np.mean(v)),
            median=float(med),
            q1=float(q1),
            q3=float(q3),
            whisker_lo=float(np.min(inside)),
            whisker_hi=float(np.max(inside)),
            minimum=float(np.min(v)),
            maximum=float(np.max(v)),
        )


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    df: float
    stars: str


def significance_stars(p: float) -> str:
    """Star scheme used throughout the reports: more stars = weaker level
    (* p<0.001, ** p<0.01, *** p<0.05) -- note this inverts the common
    convention, see README."""
    if p < 0.001:
        return "*"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "***"
    return ""


def welch_t_test(group_a, group_b) -> TTestResult:
    """Two-sample unequal-variance t-test, two-tailed."""
    a = np.asarray(group_a, dtype=float)
    b = np.asarray(group_b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise ValueError("each group needs at least two samples")
    va, vb = np.var(a, ddof=1), np.var(b, ddof=1)
    if va == 0.0 and vb == 0.0:
        if float(np.mean(a)) == float(np.mean(b)):
            return TTestResult(0.0, 1.0, float(a.size + b.size - 2), "")
        raise ValueError("degenerate groups: zero variance with different means")
    sa, sb = va / a.size, vb / b.size
    t = (float(np.mean(a)) - float(np.mean(b))) / math.sqrt(sa + sb)
    df = (sa + sb) ** 2 / (sa**2 / (a.size - 1) + sb**2 / (b.size - 1))
    p = 2.0 * float(stdtr(df, -abs(t)))
    return TTestResult(t, p, df, significance_stars(p))


@dataclass(frozen=True)
class DemoSummary:
    """Per-demonstration scalars used by the group statistics."""

    fingertip_force: float
    palm_force: float
    exec_time: float
    success: bool


def summarize_demo(demo: Demonstration) -> DemoSummary:
    fmap = default_retarget_map(demo.header.gripper).feedback_map
    active = sorted(set(fmap.values()))
    tips = np.array([[s.finger_forces[i] for i in active] for s in demo.samples])
    palms = np.array([s.palm_force for s in demo.samples])
    return DemoSummary(
        fingertip_force=float(np.mean(tips)) if tips.size else 0.0,
        palm_force=float(np.mean(palms)) if palms.size else 0.0,
        exec_time=demo.outcome.exec_time,
        success=demo.outcome.success,
    )


def dataset_stats(manifest: DatasetManifest, root: str | Path) -> dict[tuple[str, str], dict]:
    """Box-plot statistics per (gripper, condition) over per-demo summaries."""
    root = Path(root)
    groups: dict[tuple[str, str], list[DemoSummary]] = {}
    for entry in manifest.entries:
        demo = read_demonstration(root / entry.file)
        key = (entry.gripper.value, entry.condition.value)
        groups.setdefault(key, []).append(summarize_demo(demo))
    out = {}
    for key, summaries in groups.items():
        if not summaries:
            raise ValueError(f"empty group {key}")
        out[key] = {
            "n": len(summaries),
            "fingertip": BoxStats.from_values([s.fingertip_force for s in summaries]),
            "palm": BoxStats.from_values([s.palm_force for s in summaries]),
            "exec_time": BoxStats.from_values([s.exec_time for s in summaries]),
            "values": {
                "fingertip": [s.fingertip_force for s in summaries],
                "palm": [s.palm_force for s in summaries],
                "exec_time": [s.exec_time for s in summaries],
            },
        }
    return out
