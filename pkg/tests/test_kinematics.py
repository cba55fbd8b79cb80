import json
import math

import numpy as np
import pytest

from hapticloop.geometry import Pose, quat_from_rotvec, quat_normalize, quat_rotate
from hapticloop.kinematics import (
    DEFAULT_HUMAN_FINGERS,
    GripperKind,
    GripperState,
    HumanFingerGeometry,
    average_torque,
    build_gripper,
    finger_moment_arms,
    forward_kinematics,
    human_moment_arms,
    load_gripper_config,
)


def make_state(model, base_pos=None, base_quat=None, q=None):
    return GripperState(
        base_pos=np.zeros(3) if base_pos is None else np.asarray(base_pos, dtype=float),
        base_quat=np.array([0.0, 0.0, 0.0, 1.0]) if base_quat is None else quat_normalize(np.asarray(base_quat, dtype=float)),
        lin_vel=np.zeros(3),
        ang_vel=np.zeros(3),
        q=model.home_joints() if q is None else np.asarray(q, dtype=float),
        qd=np.zeros(model.dof),
    )


# ---------------------------------------------------------------------------
# dimension table


@pytest.mark.parametrize(
    "kind,dof,total,fingers",
    [
        (GripperKind.FRANKA, 1, 7, 2),
        (GripperKind.RUTH, 3, 9, 3),
        (GripperKind.MANO, 20, 26, 5),
    ],
)
def test_dimension_table(kind, dof, total, fingers):
    model = build_gripper(kind)
    assert model.dof == dof
    assert model.total_dim == total
    assert len(model.fingers) == fingers


def test_franka_jaw_limits():
    model = build_gripper(GripperKind.FRANKA)
    assert model.joint_limits[0, 0] == 0.0
    assert model.joint_limits[0, 1] == pytest.approx(0.08)


def test_joint_limits_are_ordered():
    for kind in GripperKind:
        model = build_gripper(kind)
        assert np.all(model.joint_limits[:, 0] < model.joint_limits[:, 1])


# ---------------------------------------------------------------------------
# moment arms (nested torque formulas)


def test_moment_arms_straight_finger():
    m = finger_moment_arms((0.045, 0.025), (0.0, 0.0, 0.0), 0.015)
    assert m == pytest.approx([0.015, 0.040, 0.085])


def test_moment_arm_single_joint():
    m = finger_moment_arms((), (0.0,), 0.04)
    assert m == pytest.approx([0.04])


def test_moment_arm_right_angle_folds_back():
    # q2 = q3 = pi/2 makes the proximal term cos(pi) = -1
    m = finger_moment_arms((0.045, 0.025), (0.0, math.pi / 2, math.pi / 2), 0.015)
    assert m[2] == pytest.approx(m[1] - 0.045)


def test_moment_arms_nest():
    rng = np.random.default_rng(0)
    for _ in range(200):
        l1, l2 = rng.uniform(0.01, 0.08, 2)
        d = rng.uniform(0.005, 0.03)
        q = rng.uniform(-1.5, 1.5, 3)
        m = finger_moment_arms((l1, l2), q, d)
        assert m[1] - m[0] == pytest.approx(l2 * math.cos(q[2]), abs=1e-12)
        assert m[2] - m[1] == pytest.approx(l1 * math.cos(q[1] + q[2]), abs=1e-12)


def test_moment_arm_rejects_bad_distance():
    with pytest.raises(ValueError):
        finger_moment_arms((0.04, 0.02), (0.0, 0.0, 0.0), 0.0)


def test_average_torque_example():
    m = np.array([0.015, 0.040, 0.085])
    assert average_torque(m, 2.0) == pytest.approx(0.0933333333, abs=1e-9)


def test_average_torque_zero_force():
    assert average_torque(np.array([0.02, 0.04]), 0.0) == 0.0


def test_average_torque_is_linear():
    rng = np.random.default_rng(1)
    for _ in range(100):
        arms = rng.uniform(0.01, 0.1, rng.integers(1, 4))
        f = rng.uniform(-10, 10)
        alpha = rng.uniform(-3, 3)
        assert average_torque(arms, alpha * f) == pytest.approx(alpha * average_torque(arms, f), abs=1e-12)


def test_human_moment_arms_proximal_first_order():
    geom = HumanFingerGeometry((0.045, 0.025), 0.015)
    arms = human_moment_arms(geom, (0.0, 0.0, 0.0))
    assert arms == pytest.approx([0.015, 0.040, 0.085])


def test_human_geometry_validation():
    with pytest.raises(ValueError):
        HumanFingerGeometry((0.04, -0.01), 0.015)
    with pytest.raises(ValueError):
        HumanFingerGeometry((0.04, 0.02), 0.0)


# ---------------------------------------------------------------------------
# forward kinematics


def test_fk_straight_chain_is_mount_plus_offsets():
    model = build_gripper(GripperKind.RUTH)
    state = make_state(model, q=np.zeros(3))
    poses = forward_kinematics(model, state)
    for chain, pose in zip(model.fingers, poses):
        reach = sum(chain.segment_lengths)
        expected = np.asarray(chain.mount_pos) + np.array([0.0, 0.0, -reach])
        assert pose.pos == pytest.approx(expected, abs=1e-12)


def test_fk_translation_equivariance():
    model = build_gripper(GripperKind.MANO)
    rng = np.random.default_rng(2)
    q = model.clamp_joints(rng.uniform(-0.3, 1.0, model.dof))
    base = forward_kinematics(model, make_state(model, q=q))
    t = np.array([0.3, -0.2, 0.5])
    moved = forward_kinematics(model, make_state(model, base_pos=t, q=q))
    for a, b in zip(base, moved):
        assert b.pos - a.pos == pytest.approx(t, abs=1e-12)


def test_fk_rotation_equivariance_random_transforms():
    model = build_gripper(GripperKind.RUTH)
    rng = np.random.default_rng(3)
    for _ in range(100):
        q = model.clamp_joints(rng.uniform(0.0, 1.2, model.dof))
        rot = quat_from_rotvec(rng.uniform(-2, 2, 3))
        plain = forward_kinematics(model, make_state(model, q=q))
        rotated = forward_kinematics(model, make_state(model, base_quat=rot, q=q))
        for a, b in zip(plain, rotated):
            assert b.pos == pytest.approx(quat_rotate(rot, a.pos), abs=1e-9)


def test_fk_rejects_dimension_mismatch():
    model = build_gripper(GripperKind.FRANKA)
    state = make_state(model)
    state.q = np.zeros(3)
    with pytest.raises(ValueError):
        forward_kinematics(model, state)


def test_franka_jaw_separation_matches_dof():
    model = build_gripper(GripperKind.FRANKA)
    for jaw in (0.0, 0.04, 0.08):
        poses = forward_kinematics(model, make_state(model, q=np.array([jaw])))
        gap = np.linalg.norm(poses[0].pos - poses[1].pos)
        assert gap == pytest.approx(jaw, abs=1e-12)


# ---------------------------------------------------------------------------
# closure fraction and config loading


def test_closure_fraction_endpoints():
    franka = build_gripper(GripperKind.FRANKA)
    assert franka.closure_fraction(np.array([0.08])) == pytest.approx(0.0)
    assert franka.closure_fraction(np.array([0.0])) == pytest.approx(1.0)
    ruth = build_gripper(GripperKind.RUTH)
    assert ruth.closure_fraction(np.zeros(3)) == pytest.approx(0.0)
    mano = build_gripper(GripperKind.MANO)
    assert mano.closure_fraction(np.zeros(20)) == pytest.approx(0.0)
    assert mano.closure_fraction(np.full(20, -0.5)) == pytest.approx(0.0)


def test_gripper_config_roundtrip(tmp_path):
    cfg = {
        "version": 1,
        "grippers": {
            "ruth": {
                "fingers": [
                    {"segment_lengths": [0.04, 0.03]},
                ],
                "fingertip_radius": 0.012,
            }
        },
    }
    path = tmp_path / "grippers.json"
    path.write_text(json.dumps(cfg))
    model = load_gripper_config(path, GripperKind.RUTH)
    assert model.fingers[0].segment_lengths == (0.04, 0.03)
    assert model.fingers[1].segment_lengths == (0.035, 0.025)  # default kept
    assert model.fingertip_radius == 0.012
    # kinds not overridden fall back to built-ins
    franka = load_gripper_config(path, GripperKind.FRANKA)
    assert franka.total_dim == 7


def test_gripper_config_rejects_unknown_version(tmp_path):
    path = tmp_path / "grippers.json"
    path.write_text(json.dumps({"version": 99, "grippers": {}}))
    with pytest.raises(ValueError):
        load_gripper_config(path, GripperKind.FRANKA)


def test_default_human_fingers_are_valid():
    assert len(DEFAULT_HUMAN_FINGERS) == 5
    for geom in DEFAULT_HUMAN_FINGERS:
        assert geom.contact_distance > 0
