"""Deterministic fixed-step simulation of the desk / duck / tray scene.

One gripper floats over a desk, driven by a 6-DoF PD controller toward a
reference pose; its joints track reference positions through a rate-limited
first-order servo. Contacts are unilateral penalty forces, and a successful
grasp switches the duck to a kinematic attachment on the palm, so identical
inputs always reproduce identical trajectories bit for bit.

The PD wrench plays a double role: its negation (with true velocity damping)
drives the base, while the wrench itself is what gets rendered back to the
demonstrator's palm.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .geometry import IDENTITY_QUAT, orientation_error, quat_integrate, quat_normalize, quat_rotate
from .kinematics import (
    GripperKind,
    GripperModel,
    GripperState,
    build_gripper,
    finger_moment_arms,
    fingertip_positions,
)

GRAVITY = 9.81


@dataclass(frozen=True)
class Wrench:
    force: np.ndarray
    torque: np.ndarray

    def __post_init__(self):
        if not (np.all(np.isfinite(self.force)) and np.all(np.isfinite(self.torque))):
            raise ValueError("wrench components must be finite")

    @staticmethod
    def zero() -> "Wrench":
        return Wrench(np.zeros(3), np.zeros(3))

    def __neg__(self) -> "Wrench":
        return Wrench(-self.force, -self.torque)


@dataclass(frozen=True)
class PdGains:
    """Base-controller gains; k_pr = 0 recovers the damping-only rotation law."""

    k_px: float = 200.0  # N/m
    k_dx: float = 20.0  # N*s/m
    k_dr: float = 1.0  # N*m*s/rad
    k_pr: float = 0.0  # N*m/rad, optional orientation spring

    def __post_init__(self):
        if min(self.k_px, self.k_dx, self.k_dr, self.k_pr) < 0:
            raise ValueError("PD gains must be non-negative")


class EventKind(str, Enum):
    GRASP_ATTACHED = "GraspAttached"
    GRASP_RELEASED = "GraspReleased"
    DUCK_IN_TRAY = "DuckInTray"
    TIMEOUT = "Timeout"


@dataclass(frozen=True)
class TaskEvent:
    kind: EventKind
    t: float


@dataclass(frozen=True)
class ContactRecord:
    """One unilateral contact this step. ``finger`` is None for palm/duck
    contacts; ``normal`` points from the duck/desk surface toward the body."""

    pair: str
    finger: int | None
    point: np.ndarray
    normal: np.ndarray
    force: float
    penetration: float

    def __post_init__(self):
        if self.force < 0 or self.penetration < 0:
            raise ValueError("contact force and penetration must be non-negative")


@dataclass(frozen=True)
class WorldConfig:
    dt: float = 1.0 / 240.0
    desk_height: float = 0.0
    duck_spawn: tuple[float, float] = (0.40, 0.0)
    duck_radius: float = 0.025
    duck_mass: float = 0.3
    spawn_jitter: float = 0.003  # uniform +/- on spawn x/y, meters
    tray_min: tuple[float, float, float] = (0.54, -0.08, 0.0)
    tray_max: tuple[float, float, float] = (0.70, 0.08, 0.12)
    contact_stiffness: float = 1500.0  # N/m, body-body contacts
    desk_stiffness: float = 500.0  # N/m, softer mat: leaning progress stays visible
    contact_damping: float = 50.0  # N*s/m, internally capped per body at m/dt
    duck_slide_damping: float = 12.0  # N*s/m, horizontal drag while on the desk
    grasp_force: float = 1.0  # N per finger to latch an attachment
    release_retreat: float = 0.05  # closure-fraction retreat that releases
    timeout: float = 30.0  # s
    gains: PdGains = field(default_factory=lambda: PdGains(k_pr=5.0))
    base_mass: float = 1.0  # kg
    base_inertia: float = 0.05  # kg*m^2, isotropic
    # buffeting force on the base (OU process, N std / seconds). Emulates the
    # disturbances a demonstrator's arm sees and corrects; corrective data is
    # what keeps a cloned policy on its trajectory tube.
    base_disturbance: float = 0.0
    disturbance_tau: float = 0.3
    joint_rate: float = 6.0  # rad/s servo limit
    jaw_rate: float = 0.25  # m/s servo limit for the prismatic jaw
    home_pos: tuple[float, float, float] = (0.40, 0.0, 0.25)
    seed: int = 0
    on_instability: str = "raise"  # or "substep"

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("timestep must be positive")
        if self.contact_stiffness <= 0:
            raise ValueError("contact stiffness must be positive")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.duck_mass <= 0 or self.duck_radius <= 0:
            raise ValueError("duck mass and radius must be positive")
        if self.on_instability not in ("raise", "substep"):
            raise ValueError("on_instability must be 'raise' or 'substep'")

    def to_dict(self) -> dict:
        return {
            "dt": self.dt,
            "desk_height": self.desk_height,
            "duck_spawn": list(self.duck_spawn),
            "duck_radius": self.duck_radius,
            "duck_mass": self.duck_mass,
            "spawn_jitter": self.spawn_jitter,
            "tray_min": list(self.tray_min),
            "tray_max": list(self.tray_max),
            "contact_stiffness": self.contact_stiffness,
            "desk_stiffness": self.desk_stiffness,
            "contact_damping": self.contact_damping,
            "duck_slide_damping": self.duck_slide_damping,
            "grasp_force": self.grasp_force,
            "release_retreat": self.release_retreat,
            "timeout": self.timeout,
            "gains": {
                "k_px": self.gains.k_px,
                "k_dx": self.gains.k_dx,
                "k_dr": self.gains.k_dr,
                "k_pr": self.gains.k_pr,
            },
            "base_mass": self.base_mass,
            "base_inertia": self.base_inertia,
            "base_disturbance": self.base_disturbance,
            "disturbance_tau": self.disturbance_tau,
            "joint_rate": self.joint_rate,
            "jaw_rate": self.jaw_rate,
            "home_pos": list(self.home_pos),
            "seed": self.seed,
            "on_instability": self.on_instability,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "WorldConfig":
        kwargs = dict(data)
        if "gains" in kwargs:
            kwargs["gains"] = PdGains(**kwargs["gains"])
        for key in ("duck_spawn", "tray_min", "tray_max", "home_pos"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path: str | Path) -> "WorldConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class GripperReference:
    """Retargeted command: base pose target plus joint position targets."""

    base_pos: np.ndarray
    base_quat: np.ndarray
    joints: np.ndarray
    omega_ref: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def to_vector(self) -> np.ndarray:
        from .geometry import quat_to_rotvec

        return np.concatenate([self.base_pos, quat_to_rotvec(self.base_quat), self.joints])

    @staticmethod
    def from_vector(vec: np.ndarray, kind: GripperKind) -> "GripperReference":
        from .geometry import quat_from_rotvec

        vec = np.asarray(vec, dtype=float)
        if vec.shape != (kind.total_dim,):
            raise ValueError(f"expected reference of dim {kind.total_dim}, got {vec.shape}")
        return GripperReference(vec[:3].copy(), quat_from_rotvec(vec[3:6]), vec[6:].copy())


@dataclass
class WorldState:
    t: float
    model: GripperModel
    gripper: GripperState
    x_ref: np.ndarray
    q_ref: np.ndarray  # reference orientation quaternion
    omega_ref: np.ndarray
    joint_ref: np.ndarray
    duck_pos: np.ndarray
    duck_vel: np.ndarray
    attached: bool
    attach_local: np.ndarray  # duck center in palm frame while attached
    attach_closure: float
    last_rendered: Wrench
    events: list[TaskEvent]
    config: WorldConfig
    # peak-hold per-finger grip force (fast attack, ~25 ms release) with the
    # last contact normal: penalty contacts on a squeezed body alternate
    # sides step to step, so an instantaneous two-sided test would never fire
    grip_hold: np.ndarray | None = None
    grip_normals: np.ndarray | None = None
    disturbance: np.ndarray | None = None
    rng: np.random.Generator | None = None
    _tray_done: bool = False
    _timed_out: bool = False

    def __post_init__(self):
        n = len(self.model.fingers)
        if self.grip_hold is None:
            self.grip_hold = np.zeros(n)
        if self.grip_normals is None:
            self.grip_normals = np.zeros((n, 3))
        if self.disturbance is None:
            self.disturbance = np.zeros(3)
        if self.rng is None:
            self.rng = np.random.default_rng(self.config.seed + 1)

    def copy(self) -> "WorldState":
        out = WorldState(
            t=self.t,
            model=self.model,
            gripper=self.gripper.copy(),
            x_ref=self.x_ref.copy(),
            q_ref=self.q_ref.copy(),
            omega_ref=self.omega_ref.copy(),
            joint_ref=self.joint_ref.copy(),
            duck_pos=self.duck_pos.copy(),
            duck_vel=self.duck_vel.copy(),
            attached=self.attached,
            attach_local=self.attach_local.copy(),
            attach_closure=self.attach_closure,
            last_rendered=self.last_rendered,
            events=list(self.events),
            config=self.config,
            grip_hold=self.grip_hold.copy(),
            grip_normals=self.grip_normals.copy(),
            disturbance=self.disturbance.copy(),
            rng=_clone_rng(self.rng),
        )
        out._tray_done = self._tray_done
        out._timed_out = self._timed_out
        return out

    def observation(self) -> np.ndarray:
        """Proprioceptive state: base position, base rotation vector, joints."""
        from .geometry import quat_to_rotvec

        g = self.gripper
        return np.concatenate([g.base_pos, quat_to_rotvec(g.base_quat), g.q])


def _clone_rng(rng: np.random.Generator) -> np.random.Generator:
    out = np.random.Generator(np.random.PCG64(0))  # seeded 0: no urandom call
    out.bit_generator.state = rng.bit_generator.state
    return out


def init_world(config: WorldConfig, kind: GripperKind, model: GripperModel | None = None) -> WorldState:
    model = model if model is not None else build_gripper(kind)
    if model.kind is not kind:
        raise ValueError("model kind does not match requested kind")
    rng = np.random.default_rng(config.seed)
    jitter = rng.uniform(-config.spawn_jitter, config.spawn_jitter, size=2)
    duck_pos = np.array(
        [
            config.duck_spawn[0] + jitter[0],
            config.duck_spawn[1] + jitter[1],
            config.desk_height + config.duck_radius,
        ]
    )
    home = np.array(config.home_pos)
    gripper = GripperState(
        base_pos=home.copy(),
        base_quat=IDENTITY_QUAT.copy(),
        lin_vel=np.zeros(3),
        ang_vel=np.zeros(3),
        q=model.home_joints(),
        qd=np.zeros(model.dof),
    )
    return WorldState(
        t=0.0,
        model=model,
        gripper=gripper,
        x_ref=home.copy(),
        q_ref=IDENTITY_QUAT.copy(),
        omega_ref=np.zeros(3),
        joint_ref=model.home_joints(),
        duck_pos=duck_pos,
        duck_vel=np.zeros(3),
        attached=False,
        attach_local=np.zeros(3),
        attach_closure=0.0,
        last_rendered=Wrench.zero(),
        events=[],
        config=config,
    )


def base_pd_wrench(state: WorldState, gains: PdGains) -> tuple[Wrench, Wrench]:
    """(control, rendered) wrenches of the 6-DoF base controller.

    rendered is the palm-feedback wrench: spring term pointing from the
    reference toward the current pose, minus velocity damping, plus the
    optional orientation spring. control applies the opposite spring to pull
    the base onto the reference, with damping acting against base motion on
    both sides (a sign-flipped damping term would pump energy into the base).
    """
    g = state.gripper
    spring = gains.k_px * (g.base_pos - state.x_ref)
    damp = gains.k_dx * g.lin_vel
    rot_damp = gains.k_dr * (g.ang_vel - state.omega_ref)
    rot_spring = gains.k_pr * orientation_error(g.base_quat, state.q_ref)
    rendered = Wrench(spring - damp, rot_damp + rot_spring)
    control = Wrench(-spring - damp, -rot_damp - rot_spring)
    return control, rendered


def _damped_normal_force(pen: float, sep_rate: float, stiffness: float, m_eff: float, cfg) -> float:
    """Spring + damping with the damping coefficient capped at m_eff/dt.

    Above that bound the discrete velocity update overshoots the reversal
    (|1 - c*dt/m| > 1) and each bounce gains energy, launching light bodies.
    """
    c_eff = min(cfg.contact_damping, m_eff / cfg.dt)
    return stiffness * pen - c_eff * sep_rate


def _sphere_plane_contact(pair, finger, center, vel, radius, plane_z, m_eff, cfg):
    pen = plane_z + radius - center[2]
    if pen <= 0.0:
        return None
    force = _damped_normal_force(pen, vel[2], cfg.desk_stiffness, m_eff, cfg)
    if force <= 0.0:
        return None
    normal = np.array([0.0, 0.0, 1.0])
    point = np.array([center[0], center[1], plane_z])
    return ContactRecord(pair, finger, point, normal, force, pen)


def _sphere_sphere_contact(pair, finger, center_a, vel_a, radius_a, center_b, vel_b, radius_b, m_eff, cfg):
    delta = center_a - center_b
    dist = float(np.linalg.norm(delta))
    pen = radius_a + radius_b - dist
    if pen <= 0.0:
        return None
    normal = delta / dist if dist > 1e-9 else np.array([0.0, 0.0, 1.0])
    sep_rate = float(np.dot(vel_a - vel_b, normal))
    force = _damped_normal_force(pen, sep_rate, cfg.contact_stiffness, m_eff, cfg)
    if force <= 0.0:
        return None
    point = center_b + normal * radius_b
    return ContactRecord(pair, finger, point, normal, force, pen)


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # np.cross's axis machinery dominates single-vector calls
    return np.array(
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    )


def _point_velocity(g: GripperState, point: np.ndarray) -> np.ndarray:
    return g.lin_vel + _cross(g.ang_vel, point - g.base_pos)


def _collect_contacts(state: WorldState) -> list[ContactRecord]:
    cfg = state.config
    model = state.model
    g = state.gripper
    contacts: list[ContactRecord] = []
    tips = fingertip_positions(model, g.base_pos, g.base_quat, g.q)
    duck_vel = g.lin_vel if state.attached else state.duck_vel
    duck_m = cfg.duck_mass
    up = quat_rotate(g.base_quat, np.array([0.0, 0.0, 1.0]))
    for i, tip in enumerate(tips):
        tip_vel = _point_velocity(g, tip)
        c = _sphere_plane_contact(
            f"finger{i}:desk", i, tip, tip_vel, model.fingertip_radius, cfg.desk_height, cfg.base_mass, cfg
        )
        if c:
            contacts.append(c)
        pad = model.fingers[i].pad_length
        ref = tip
        if pad > 0.0:
            # flat finger pad: contact acts at the closest point of the pad
            # segment running from the tip up the finger axis
            s = float(np.dot(state.duck_pos - tip, up))
            ref = tip + up * min(max(s, 0.0), pad)
        c = _sphere_sphere_contact(
            f"finger{i}:duck", i, ref, _point_velocity(g, ref), model.fingertip_radius, state.duck_pos, duck_vel, cfg.duck_radius, duck_m, cfg
        )
        if c:
            contacts.append(c)
    palm_vel = _point_velocity(g, g.base_pos)
    c = _sphere_plane_contact("palm:desk", None, g.base_pos, palm_vel, model.palm_radius, cfg.desk_height, cfg.base_mass, cfg)
    if c:
        contacts.append(c)
    c = _sphere_sphere_contact(
        "palm:duck", None, g.base_pos, palm_vel, model.palm_radius, state.duck_pos, duck_vel, cfg.duck_radius, duck_m, cfg
    )
    if c:
        contacts.append(c)
    if not state.attached:
        c = _sphere_plane_contact(
            "duck:desk", None, state.duck_pos, state.duck_vel, cfg.duck_radius, cfg.desk_height, duck_m, cfg
        )
        if c:
            contacts.append(c)
    return contacts


def _is_finite_state(state: WorldState) -> bool:
    g = state.gripper
    total = (
        float(g.base_pos.sum()) + float(g.base_quat.sum()) + float(g.lin_vel.sum())
        + float(g.ang_vel.sum()) + float(g.q.sum()) + float(state.duck_pos.sum())
        + float(state.duck_vel.sum())
    )
    return math.isfinite(total)


def step(
    world: WorldState, reference: GripperReference, dt: float | None = None
) -> tuple[WorldState, list[ContactRecord], list[TaskEvent]]:
    """Advance one fixed step under the given reference command."""
    cfg = world.config
    dt = cfg.dt if dt is None else dt
    model = world.model
    if reference.joints.shape != (model.dof,):
        raise ValueError(f"reference joint dim {reference.joints.shape} != {model.dof}")

    state = world.copy()
    state.x_ref = np.asarray(reference.base_pos, dtype=float).copy()
    state.q_ref = quat_normalize(np.asarray(reference.base_quat, dtype=float))
    state.omega_ref = np.asarray(reference.omega_ref, dtype=float).copy()
    state.joint_ref = model.clamp_joints(np.asarray(reference.joints, dtype=float))

    contacts = _collect_contacts(state)
    control, rendered = base_pd_wrench(state, cfg.gains)
    state.last_rendered = rendered

    g = state.gripper
    force = control.force.copy()
    torque = control.torque.copy()
    duck_force = np.zeros(3)
    for c in contacts:
        if c.pair.endswith(":desk") and not c.pair.startswith("duck"):
            f = c.force * c.normal
            force += f
            torque += _cross(c.point - g.base_pos, f)
        elif c.pair == "duck:desk":
            duck_force += c.force * c.normal
        elif not state.attached:
            # finger/palm against the free duck: reaction pair
            f = c.force * c.normal
            force += f
            torque += _cross(c.point - g.base_pos, f)
            duck_force -= f
    if state.attached:
        force[2] -= cfg.duck_mass * GRAVITY  # carried weight loads the base
    if cfg.base_disturbance > 0.0:
        decay = math.exp(-dt / cfg.disturbance_tau)
        state.disturbance = state.disturbance * decay + state.rng.normal(
            0.0, cfg.base_disturbance * math.sqrt(1.0 - decay * decay), 3
        )
        force += state.disturbance

    # semi-implicit Euler: velocities first, then poses
    g.lin_vel = g.lin_vel + force * (dt / cfg.base_mass)
    g.ang_vel = g.ang_vel + torque * (dt / cfg.base_inertia)
    g.base_pos = g.base_pos + g.lin_vel * dt
    g.base_quat = quat_integrate(g.base_quat, g.ang_vel, dt)

    # rate-limited first-order joint servo
    rate = np.full(model.dof, cfg.joint_rate)
    if model.kind is GripperKind.FRANKA:
        rate[:] = cfg.jaw_rate
    delta = np.clip(state.joint_ref - g.q, -rate * dt, rate * dt)
    g.q = model.clamp_joints(g.q + delta)
    g.qd = delta / dt

    # peak-hold grip tracker: attack instantly, release over ~25 ms
    state.grip_hold *= 0.85
    for c in contacts:
        if c.finger is not None and c.pair.endswith(":duck"):
            if c.force >= state.grip_hold[c.finger]:
                state.grip_hold[c.finger] = c.force
                state.grip_normals[c.finger] = c.normal

    events: list[TaskEvent] = []
    if state.attached:
        state.duck_pos = g.base_pos + quat_rotate(g.base_quat, state.attach_local)
        state.duck_vel = _point_velocity(g, state.duck_pos)
        closure = model.closure_fraction(state.joint_ref)
        # release on a deliberate retreat of the closure command; a fully
        # open command always counts, however shallow the grasp was
        if closure < state.attach_closure - cfg.release_retreat or closure <= 0.02:
            state.attached = False
            events.append(TaskEvent(EventKind.GRASP_RELEASED, state.t + dt))
    else:
        if any(c.pair == "duck:desk" for c in contacts):
            # sliding resistance: stands in for tangential friction so a
            # two-finger squeeze can center on the duck instead of ejecting it
            duck_force[0] -= cfg.duck_slide_damping * state.duck_vel[0]
            duck_force[1] -= cfg.duck_slide_damping * state.duck_vel[1]
        state.duck_vel = state.duck_vel + (duck_force / cfg.duck_mass + np.array([0.0, 0.0, -GRAVITY])) * dt
        state.duck_pos = state.duck_pos + state.duck_vel * dt
        floor = cfg.desk_height + cfg.duck_radius - 0.01  # hard penetration bound
        if state.duck_pos[2] < floor:
            state.duck_pos[2] = floor
            if state.duck_vel[2] < 0.0:
                state.duck_vel[2] = 0.0
        held = [i for i in range(len(model.fingers)) if state.grip_hold[i] >= cfg.grasp_force]
        if len(held) >= 2 and _opposing_normals(state.grip_normals, held):
            state.attached = True
            state.attach_local = quat_rotate(
                np.array([-g.base_quat[0], -g.base_quat[1], -g.base_quat[2], g.base_quat[3]]),
                state.duck_pos - g.base_pos,
            )
            state.attach_closure = model.closure_fraction(state.joint_ref)
            state.grip_hold[:] = 0.0
            events.append(TaskEvent(EventKind.GRASP_ATTACHED, state.t + dt))

    state.t = world.t + dt

    if not state._tray_done and check_success(state):
        state._tray_done = True
        events.append(TaskEvent(EventKind.DUCK_IN_TRAY, state.t))
    if not state._timed_out and state.t >= cfg.timeout:
        state._timed_out = True
        events.append(TaskEvent(EventKind.TIMEOUT, state.t))
    state.events.extend(events)

    if not _is_finite_state(state):
        if cfg.on_instability == "substep" and dt > cfg.dt / 16:
            half, contacts_a, ev_a = step(world, reference, dt / 2)
            full, contacts_b, ev_b = step(half, reference, dt / 2)
            return full, contacts_a + contacts_b, ev_a + ev_b
        raise FloatingPointError(f"non-finite world state at t={state.t:.4f}")

    return state, contacts, events


def _opposing_normals(normals: np.ndarray, fingers: list[int]) -> bool:
    """True when at least one pair of held fingers pushes from distinct sides."""
    for a in range(len(fingers)):
        for b in range(a + 1, len(fingers)):
            if float(np.dot(normals[fingers[a]], normals[fingers[b]])) < -0.1:
                return True
    return False


def sim_finger_torques(world: WorldState, contacts: list[ContactRecord]) -> np.ndarray:
    """Average joint torque per gripper finger from this step's contacts.

    Each contact normal force maps through the finger's moment arms at the
    current joint angles (prismatic jaws use their fixed equivalent arm);
    fingers without contacts read zero.
    """
    model = world.model
    taus = np.zeros(len(model.fingers))
    per_finger_force = np.zeros(len(model.fingers))
    for c in contacts:
        if c.finger is not None:
            per_finger_force[c.finger] += c.force
    for i, chain in enumerate(model.fingers):
        f = per_finger_force[i]
        if f <= 0.0:
            continue
        if chain.prismatic:
            taus[i] = f * model.prismatic_arm
            continue
        joints = model.finger_joint_values(world.gripper.q, i)
        flex = joints[1:] if chain.has_abduction else joints
        arms = finger_moment_arms(chain.inter_joint_lengths(), flex[::-1], chain.tip_distance)
        taus[i] = f * float(np.mean(arms))
    return taus


def events_to_jsonl(world: WorldState) -> str:
    """Episode event log as JSON lines."""
    return "".join(
        json.dumps({"kind": e.kind.value, "t": e.t}, separators=(",", ":")) + "\n" for e in world.events
    )


def check_success(world: WorldState) -> bool:
    """Duck released at rest inside the tray region."""
    if world.attached:
        return False
    lo = np.array(world.config.tray_min)
    hi = np.array(world.config.tray_max)
    inside = bool(np.all(world.duck_pos >= lo) and np.all(world.duck_pos <= hi))
    return inside and float(np.linalg.norm(world.duck_vel)) < 0.05
