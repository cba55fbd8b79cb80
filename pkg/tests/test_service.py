import asyncio
import itertools
import json

import numpy as np
import pytest

from hapticloop.demos import read_demonstration
from hapticloop.retarget import HAND_DOF
from hapticloop.service import (
    CLIENT_TYPES,
    Envelope,
    PROTOCOL_VERSION,
    SessionMachine,
    SessionPhase,
    serve,
)
from hapticloop.simworld import WorldConfig


def env(type_, seq, payload=None):
    return Envelope(type=type_, seq=seq, t=0.0, payload=payload or {})


def pose_payload(pos=(0.4, 0.0, 0.25), closure=None, steps=1):
    joints = [0.0] * HAND_DOF
    if closure is not None:
        for f in range(5):
            joints[4 * f + 1] = closure
    return {"pose": {"pos": list(pos), "quat": [0.0, 0.0, 0.0, 1.0], "q": joints}, "steps": steps}


def configured_machine(tmp_path, condition="fpff", gripper="mano", seed=7):
    machine = SessionMachine(WorldConfig(), out_dir=tmp_path)
    machine.handle(env("hello", 1))
    replies = machine.handle(env("configure", 2, {"gripper": gripper, "condition": condition, "seed": seed}))
    assert replies[0].type == "state"
    return machine


# ---------------------------------------------------------------------------
# envelope encoding


def test_envelope_round_trip():
    e = Envelope(type="input", seq=12, t=3.5, payload={"pose": {"pos": [1, 2, 3]}})
    again = Envelope.from_json(e.to_json())
    assert again == e


def test_envelope_round_trip_fuzzed():
    rng = np.random.default_rng(0)
    for _ in range(200):
        e = Envelope(
            type=str(rng.choice(["hello", "state", "feedback", "event", "error", "input"])),
            seq=int(rng.integers(0, 2**53)),
            t=float(rng.uniform(0, 1e6)),
            payload={"k": [float(v) for v in rng.normal(0, 1e3, rng.integers(0, 5))], "s": "x" * int(rng.integers(0, 9))},
        )
        assert Envelope.from_json(e.to_json()) == e


def test_envelope_rejects_bad_version():
    with pytest.raises(ValueError):
        Envelope.from_json(json.dumps({"v": 2, "type": "hello", "seq": 1}))


def test_envelope_rejects_non_object():
    with pytest.raises(ValueError):
        Envelope.from_json("[1,2,3]")


# ---------------------------------------------------------------------------
# session machine


def test_hello_lists_grippers_and_conditions(tmp_path):
    machine = SessionMachine(WorldConfig(), out_dir=tmp_path)
    (reply,) = machine.handle(env("hello", 1))
    assert reply.type == "hello"
    assert reply.payload["protocol"] == PROTOCOL_VERSION
    assert set(reply.payload["grippers"]) == {"franka", "ruth", "mano"}
    assert set(reply.payload["conditions"]) == {"nff", "fff", "fpff"}


def test_configure_then_input_streams_state_and_feedback(tmp_path):
    machine = configured_machine(tmp_path)
    replies = machine.handle(env("input", 3, pose_payload(steps=4)))
    types = [r.type for r in replies]
    assert types[-2:] == ["state", "feedback"]
    state = replies[-2].payload
    assert state["gripper"] == "mano"
    assert len(state["joints"]) == 20
    assert len(state["fingertips"]) == 5
    assert machine.session.world.t == pytest.approx(4 * machine.session.config.dt)


def test_input_before_configure_resets_session(tmp_path):
    machine = SessionMachine(WorldConfig(), out_dir=tmp_path)
    machine.handle(env("hello", 1))
    (reply,) = machine.handle(env("input", 2, pose_payload()))
    assert reply.type == "error"
    assert reply.payload["code"] == "protocol"
    assert machine.phase is SessionPhase.AWAITING_CONFIG


def test_malformed_json_preserves_session(tmp_path):
    machine = configured_machine(tmp_path)
    (reply,) = machine.handle_raw(b"this is not json")
    assert reply.type == "error"
    assert reply.payload["code"] == "malformed"
    assert machine.phase is SessionPhase.READY


def test_unknown_type_is_malformed_not_reset(tmp_path):
    machine = configured_machine(tmp_path)
    (reply,) = machine.handle(env("frobnicate", 99))
    assert reply.type == "error"
    assert machine.phase is SessionPhase.READY


def test_seq_must_increase(tmp_path):
    machine = configured_machine(tmp_path)
    machine.handle(env("input", 5, pose_payload()))
    (reply,) = machine.handle(env("input", 5, pose_payload()))
    assert reply.type == "error"


def test_record_start_stop_writes_trajectory(tmp_path):
    machine = configured_machine(tmp_path, condition="fff", gripper="franka")
    (ack,) = machine.handle(env("record_start", 3, {"participant": "tester"}))
    assert ack.type == "record_start"
    assert machine.phase is SessionPhase.RECORDING
    for seq in range(4, 10):
        machine.handle(env("input", seq, pose_payload(steps=8)))
    (stop,) = machine.handle(env("record_stop", 10))
    assert stop.type == "record_stop"
    assert machine.phase is SessionPhase.READY
    demo = read_demonstration(stop.payload["file"])
    assert demo.header.condition.value == "fff"
    assert demo.header.participant == "tester"
    assert len(demo.samples) == stop.payload["samples"] == 48


def test_record_stop_without_recording_is_protocol_error(tmp_path):
    machine = configured_machine(tmp_path)
    (reply,) = machine.handle(env("record_stop", 3))
    assert reply.type == "error"
    assert reply.payload["code"] == "protocol"
    assert machine.phase is SessionPhase.AWAITING_CONFIG  # session reset


def test_zero_order_hold_advances_with_last_reference(tmp_path):
    machine = configured_machine(tmp_path, gripper="franka", condition="nff")
    machine.handle(env("input", 3, pose_payload(pos=(0.45, 0.05, 0.2), steps=1)))
    ref_before = machine.session.world.joint_ref.copy()
    x_ref_before = machine.session.world.x_ref.copy()
    t0 = machine.session.world.t
    # no new input: advancing uses the held pose
    events = machine._advance(17)
    assert machine.session.world.t == pytest.approx(t0 + 17 * machine.session.config.dt)
    assert np.allclose(machine.session.world.x_ref, x_ref_before)
    assert np.allclose(machine.session.world.joint_ref, ref_before)


def test_fpff_feedback_carries_palm_wrench_on_contact(tmp_path):
    machine = configured_machine(tmp_path, gripper="mano", condition="fpff", seed=3)
    # command the palm into the desk and hold it there
    replies = None
    for seq in range(3, 9):
        replies = machine.handle(env("input", seq, pose_payload(pos=(0.4, 0.0, 0.02), steps=200)))
    feedback = replies[-1].payload
    assert np.linalg.norm(feedback["palm"]["force"]) > 0.5


def test_nff_feedback_is_all_zero_under_contact(tmp_path):
    machine = configured_machine(tmp_path, gripper="mano", condition="nff", seed=3)
    replies = None
    for seq in range(3, 9):
        replies = machine.handle(env("input", seq, pose_payload(pos=(0.4, 0.0, 0.02), steps=200)))
    feedback = replies[-1].payload
    assert np.linalg.norm(feedback["palm"]["force"]) == 0.0
    assert all(v == 0.0 for v in feedback["forces"])


# ---------------------------------------------------------------------------
# exhaustive small-step model check


LEGAL_PHASES = {SessionPhase.AWAITING_CONFIG, SessionPhase.READY, SessionPhase.RECORDING, SessionPhase.FINISHED}


def _expected_next(phase: SessionPhase, msg_type: str) -> SessionPhase:
    """Reference transition table for the session machine."""
    if msg_type in ("hello",):
        return phase
    if msg_type == "configure":
        # reconfiguring mid-recording is a protocol violation: session reset
        return SessionPhase.AWAITING_CONFIG if phase is SessionPhase.RECORDING else SessionPhase.READY
    if msg_type == "input":
        return phase if phase in (SessionPhase.READY, SessionPhase.RECORDING) else SessionPhase.AWAITING_CONFIG
    if msg_type == "record_start":
        return SessionPhase.RECORDING if phase is SessionPhase.READY else SessionPhase.AWAITING_CONFIG
    if msg_type == "record_stop":
        return SessionPhase.READY if phase is SessionPhase.RECORDING else SessionPhase.AWAITING_CONFIG
    return phase


@pytest.mark.parametrize("length", [1, 2, 3])
def test_session_machine_never_reaches_undefined_state_short(tmp_path, length):
    _enumerate_sequences(tmp_path, length)


def test_session_machine_never_reaches_undefined_state_deep(tmp_path):
    _enumerate_sequences(tmp_path, 6)


def _enumerate_sequences(tmp_path, length, alphabet=CLIENT_TYPES, stride=1):
    payloads = {
        "configure": {"gripper": "franka", "condition": "nff", "seed": 1},
        "input": pose_payload(steps=1),
        "record_start": {},
        "record_stop": {},
        "hello": {},
    }
    sequences = list(itertools.product(alphabet, repeat=length))[::stride]
    for sequence in sequences:
        machine = SessionMachine(WorldConfig(), out_dir=tmp_path)
        phase = machine.phase
        for seq_no, msg_type in enumerate(sequence, start=1):
            replies = machine.handle(env(msg_type, seq_no, payloads[msg_type]))
            assert replies, f"no reply for {msg_type} in phase {phase}"
            assert machine.phase in LEGAL_PHASES
            expected = _expected_next(phase, msg_type)
            assert machine.phase is expected, f"{phase} --{msg_type}--> {machine.phase}, expected {expected}"
            phase = machine.phase


# ---------------------------------------------------------------------------
# live websocket integration


async def _ws_session(tmp_path):
    import websockets

    ready = asyncio.Event()
    task = asyncio.create_task(
        serve(bind="127.0.0.1:18766", world_config=WorldConfig(), out_dir=tmp_path, real_time_factor=0.0, ready=ready)
    )
    await asyncio.wait_for(ready.wait(), 5)
    results = {}
    async with websockets.connect("ws://127.0.0.1:18766") as ws:
        seq = 0

        async def send(type_, payload):
            nonlocal seq
            seq += 1
            await ws.send(Envelope(type=type_, seq=seq, t=0.0, payload=payload).to_json())

        await send("hello", {})
        results["hello"] = Envelope.from_json(await ws.recv())
        await send("configure", {"gripper": "franka", "condition": "fff", "seed": 2})
        results["configure"] = Envelope.from_json(await ws.recv())
        await send("record_start", {})
        results["record_start"] = Envelope.from_json(await ws.recv())
        await send("input", pose_payload(pos=(0.4, 0.0, 0.2), steps=24))
        got = [Envelope.from_json(await ws.recv())]
        while got[-1].type != "feedback":
            got.append(Envelope.from_json(await ws.recv()))
        results["input"] = got
        await send("record_stop", {})
        results["record_stop"] = Envelope.from_json(await ws.recv())
    task.cancel()
    try:
        await task
    except asyncio.CancelledError:
        pass
    return results


def test_websocket_end_to_end(tmp_path):
    results = asyncio.run(_ws_session(tmp_path))
    assert results["hello"].type == "hello"
    assert results["configure"].type == "state"
    assert results["record_start"].type == "record_start"
    assert results["input"][-2].type == "state"
    assert results["input"][-1].type == "feedback"
    stop = results["record_stop"]
    assert stop.type == "record_stop"
    demo = read_demonstration(stop.payload["file"])
    assert len(demo.samples) == 24
