"""Per-step wiring of simulation, retargeting and feedback rendering.

One EpisodeSession owns a world and advances it one reference at a time,
producing both the physical quantities that get logged (solved fingertip
forces and the rendered palm wrench, always computed) and the
condition-gated FeedbackCommand that a demonstrator actually perceives.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .haptics import (
    FeedbackCommand,
    FeedbackCondition,
    N_HUMAN_FINGERS,
    PwmCalibration,
    compose_feedback,
    solve_fingertip_force,
)
from .kinematics import DEFAULT_HUMAN_FINGERS, GripperKind, GripperModel, build_gripper
from .retarget import HumanHandPose, RetargetMap, default_retarget_map, retarget_pose
from .simworld import (
    ContactRecord,
    EventKind,
    GripperReference,
    TaskEvent,
    WorldConfig,
    WorldState,
    init_world,
    sim_finger_torques,
    step,
)

NEUTRAL_FLEXIONS = np.zeros(3)


@dataclass
class StepResult:
    world: WorldState
    contacts: list[ContactRecord]
    events: list[TaskEvent]
    reference: GripperReference
    obs_before: np.ndarray  # proprioceptive state the reference was issued from
    finger_forces: np.ndarray  # (5,) solved per demonstrator finger, ungated
    palm_force: float  # |rendered force|, ungated
    command: FeedbackCommand  # what the demonstrator perceives
    pose: HumanHandPose | None

    @property
    def done(self) -> bool:
        return any(e.kind in (EventKind.DUCK_IN_TRAY, EventKind.TIMEOUT) for e in self.events)


class EpisodeSession:
    """Single episode: world + feedback pipeline for one gripper/condition."""

    def __init__(
        self,
        config: WorldConfig,
        kind: GripperKind,
        condition: FeedbackCondition,
        model: GripperModel | None = None,
        rmap: RetargetMap | None = None,
        calibration: PwmCalibration | None = None,
        human_fingers=DEFAULT_HUMAN_FINGERS,
    ):
        self.config = config
        self.kind = kind
        self.condition = condition
        self.model = model if model is not None else build_gripper(kind)
        self.rmap = rmap if rmap is not None else default_retarget_map(kind)
        self.calibration = calibration if calibration is not None else PwmCalibration()
        self.human_fingers = human_fingers
        self.world = init_world(config, kind, self.model)
        self.feedback = FeedbackCommand.zero(condition)

    def step_with_pose(self, pose: HumanHandPose) -> StepResult:
        ref = retarget_pose(pose, self.rmap, self.model)
        return self.step_with_reference(ref, pose)

    def step_with_reference(self, ref: GripperReference, pose: HumanHandPose | None = None) -> StepResult:
        obs_before = self.world.observation()
        world, contacts, events = step(self.world, ref)
        taus = sim_finger_torques(world, contacts)
        solved = np.zeros(len(self.model.fingers))
        human_forces = np.zeros(N_HUMAN_FINGERS)
        for g_finger, h_finger in self.rmap.feedback_map.items():
            flexions = pose.finger_flexions(h_finger) if pose is not None else NEUTRAL_FLEXIONS
            f = solve_fingertip_force(float(taus[g_finger]), self.human_fingers[h_finger], flexions)
            solved[g_finger] = f
            human_forces[h_finger] = max(human_forces[h_finger], f)
        command = compose_feedback(
            self.condition, solved, world.last_rendered, self.rmap.feedback_map, self.calibration, world.t
        )
        self.world = world
        self.feedback = command
        return StepResult(
            world=world,
            contacts=contacts,
            events=events,
            reference=ref,
            obs_before=obs_before,
            finger_forces=human_forces,
            palm_force=float(np.linalg.norm(world.last_rendered.force)),
            command=command,
            pose=pose,
        )

    def active_human_fingers(self) -> list[int]:
        return sorted(set(self.rmap.feedback_map.values()))
