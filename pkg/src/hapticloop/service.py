"""Session service: the simulator behind a JSON message protocol.

One interactive session at a time. The client configures a gripper and
feedback condition, then streams demonstrator hand poses; the service
advances the world under zero-order hold, returning state and feedback
messages, and can record the session to a trajectory file.

The protocol is transport-agnostic JSON envelopes
``{"v": 1, "type": ..., "seq": ..., "t": ..., "payload": {...}}`` carried
either over WebSocket or newline-delimited TCP with identical payloads.
The session logic itself is a synchronous state machine (SessionMachine) so
it can be driven and model-checked without any sockets.
"""

from __future__ import annotations

import asyncio
import json
import os
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .demos import Demonstration, TrajectoryRecorder, write_demonstration
from .haptics import FeedbackCondition
from .kinematics import GripperKind, forward_kinematics
from .retarget import HAND_DOF, HumanHandPose
from .session import EpisodeSession
from .simworld import WorldConfig

PROTOCOL_VERSION = 1
DEFAULT_BIND_ENV = "HAPTICLOOP_BIND"
DEFAULT_BIND = "127.0.0.1:8765"

CLIENT_TYPES = ("hello", "configure", "input", "record_start", "record_stop")


class SessionPhase(str, Enum):
    AWAITING_CONFIG = "AwaitingConfig"
    READY = "Ready"
    RECORDING = "Recording"
    FINISHED = "Finished"


class ProtocolError(Exception):
    """Client message violates the session protocol; resets the session."""


@dataclass
class Envelope:
    type: str
    seq: int
    t: float
    payload: dict

    def to_json(self) -> str:
        return json.dumps(
            {"v": PROTOCOL_VERSION, "type": self.type, "seq": self.seq, "t": self.t, "payload": self.payload},
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, raw: str | bytes) -> "Envelope":
        data = json.loads(raw)
        if not isinstance(data, dict):
            raise ValueError("envelope must be an object")
        if data.get("v") != PROTOCOL_VERSION:
            raise ValueError(f"unsupported protocol version {data.get('v')!r}")
        if not isinstance(data.get("type"), str) or not isinstance(data.get("seq"), int):
            raise ValueError("envelope needs a string type and integer seq")
        return cls(type=data["type"], seq=data["seq"], t=float(data.get("t", 0.0)), payload=data.get("payload") or {})


def _pose_from_payload(payload: dict) -> HumanHandPose:
    pose = payload.get("pose") or {}
    joints = pose.get("q")
    if joints is None:
        joints = HumanHandPose.expand_joints(pose.get("closure"))
    joints = np.asarray(joints, dtype=float)
    if joints.shape != (HAND_DOF,):
        raise ValueError(f"pose.q must have {HAND_DOF} entries")
    return HumanHandPose(
        palm_pos=np.asarray(pose.get("pos", (0.0, 0.0, 0.0)), dtype=float),
        palm_quat=np.asarray(pose.get("quat", (0.0, 0.0, 0.0, 1.0)), dtype=float),
        joints=joints,
    )


class SessionMachine:
    """Synchronous protocol core: message in, list of reply envelopes out."""

    def __init__(self, world_config: WorldConfig | None = None, out_dir: str | Path = "."):
        self.base_config = world_config if world_config is not None else WorldConfig()
        self.out_dir = Path(out_dir)
        self.phase = SessionPhase.AWAITING_CONFIG
        self.session: EpisodeSession | None = None
        self.recorder: TrajectoryRecorder | None = None
        self.last_pose: HumanHandPose | None = None
        self.recordings = 0
        self._seq = 0
        self._client_seq = None

    # -- replies ------------------------------------------------------------

    def _reply(self, type_: str, payload: dict) -> Envelope:
        self._seq += 1
        t = self.session.world.t if self.session is not None else 0.0
        return Envelope(type=type_, seq=self._seq, t=t, payload=payload)

    def _error(self, code: str, message: str) -> Envelope:
        return self._reply("error", {"code": code, "message": message})

    def _state_payload(self) -> dict:
        world = self.session.world
        g = world.gripper
        tips = forward_kinematics(self.session.model, g)
        return {
            "session": self.phase.value,
            "gripper": self.session.kind.value,
            "condition": self.session.condition.value,
            "time": world.t,
            "base": {"pos": [float(v) for v in g.base_pos], "quat": [float(v) for v in g.base_quat]},
            "joints": [float(v) for v in g.q],
            "fingertips": [[float(v) for v in p.pos] for p in tips],
            "duck": {"pos": [float(v) for v in world.duck_pos], "radius": world.config.duck_radius},
            "tray": {"min": list(world.config.tray_min), "max": list(world.config.tray_max)},
            "attached": world.attached,
            "recording": self.phase is SessionPhase.RECORDING,
        }

    def _feedback_payload(self) -> dict:
        cmd = self.session.feedback
        return {
            "condition": cmd.condition.value,
            "forces": [float(v) for v in cmd.forces],
            "duties": [float(v) for v in cmd.duties],
            "palm": {
                "force": [float(v) for v in cmd.palm.force],
                "torque": [float(v) for v in cmd.palm.torque],
            },
        }

    # -- protocol -----------------------------------------------------------

    def handle_raw(self, raw: str | bytes) -> list[Envelope]:
        """Decode and dispatch; malformed input never kills the session."""
        try:
            msg = Envelope.from_json(raw)
        except (ValueError, json.JSONDecodeError) as exc:
            return [self._error("malformed", str(exc))]
        return self.handle(msg)

    def handle(self, msg: Envelope) -> list[Envelope]:
        if msg.type not in CLIENT_TYPES:
            return [self._error("malformed", f"unknown message type {msg.type!r}")]
        if self._client_seq is not None and msg.seq <= self._client_seq:
            return [self._error("malformed", "client seq must be strictly increasing")]
        self._client_seq = msg.seq
        try:
            if msg.type == "hello":
                return self._on_hello()
            if msg.type == "configure":
                return self._on_configure(msg.payload)
            if msg.type == "input":
                return self._on_input(msg.payload)
            if msg.type == "record_start":
                return self._on_record_start(msg.payload)
            return self._on_record_stop()
        except ProtocolError as exc:
            self.reset()
            return [self._error("protocol", str(exc))]
        except (ValueError, KeyError, TypeError) as exc:
            return [self._error("malformed", str(exc))]

    def reset(self) -> None:
        self.phase = SessionPhase.AWAITING_CONFIG
        self.session = None
        self.recorder = None
        self.last_pose = None

    def _on_hello(self) -> list[Envelope]:
        return [
            self._reply(
                "hello",
                {
                    "protocol": PROTOCOL_VERSION,
                    "grippers": [k.value for k in GripperKind],
                    "conditions": [c.value for c in FeedbackCondition],
                },
            )
        ]

    def _on_configure(self, payload: dict) -> list[Envelope]:
        if self.phase is SessionPhase.RECORDING:
            raise ProtocolError("cannot reconfigure while recording")
        kind = GripperKind(payload["gripper"])
        condition = FeedbackCondition(payload["condition"])
        seed = int(payload.get("seed", 0))
        data = self.base_config.to_dict()
        data["seed"] = seed
        data.update(payload.get("world", {}))
        self.session = EpisodeSession(WorldConfig.from_dict(data), kind, condition)
        self.last_pose = None
        self.phase = SessionPhase.READY
        return [self._reply("state", self._state_payload())]

    def _advance(self, steps: int) -> list[Envelope]:
        events = []
        if self.last_pose is None:
            return events
        for _ in range(steps):
            result = self.session.step_with_pose(self.last_pose)
            if self.recorder is not None:
                self.recorder.add(result)
            for e in result.events:
                events.append(self._reply("event", {"kind": e.kind.value, "t": e.t}))
        return events

    def _on_input(self, payload: dict) -> list[Envelope]:
        if self.phase not in (SessionPhase.READY, SessionPhase.RECORDING):
            raise ProtocolError("input before configure")
        self.last_pose = _pose_from_payload(payload)
        steps = int(payload.get("steps", 1))
        if not 1 <= steps <= 10_000:
            raise ValueError("steps must be in [1, 10000]")
        replies = self._advance(steps)
        replies.append(self._reply("state", self._state_payload()))
        replies.append(self._reply("feedback", self._feedback_payload()))
        return replies

    def _on_record_start(self, payload: dict) -> list[Envelope]:
        if self.phase is not SessionPhase.READY:
            raise ProtocolError("record_start requires a configured, idle session")
        self.recorder = TrajectoryRecorder(self.session, participant=str(payload.get("participant", "live")))
        self.phase = SessionPhase.RECORDING
        return [self._reply("record_start", {"participant": self.recorder.header.participant})]

    def _on_record_stop(self) -> list[Envelope]:
        if self.phase is not SessionPhase.RECORDING:
            raise ProtocolError("record_stop without an active recording")
        demo = self.recorder.finalize()
        name = f"live_{self.session.kind.value}_{self.session.condition.value}_{self.recordings:03d}.traj.jsonl"
        path = self.out_dir / name
        write_demonstration(demo, path)
        self.recordings += 1
        self.recorder = None
        self.phase = SessionPhase.READY
        return [
            self._reply(
                "record_stop",
                {
                    "file": str(path),
                    "samples": len(demo.samples),
                    "success": demo.outcome.success,
                    "exec_time": demo.outcome.exec_time,
                },
            )
        ]


async def _drive_clock(machine: SessionMachine, send, real_time_factor: float, stop: asyncio.Event):
    """Advance sim time against the wall clock and heartbeat state messages.

    With factor 0 the world only advances on explicit input messages (used
    by deterministic protocol tests)."""
    if real_time_factor <= 0.0:
        await stop.wait()
        return
    heartbeat = 1.0 / 30.0
    last_beat = time.monotonic()
    behind = 0.0
    prev = time.monotonic()
    while not stop.is_set():
        await asyncio.sleep(0.005)
        now = time.monotonic()
        if machine.session is not None and machine.last_pose is not None:
            behind += (now - prev) * real_time_factor
            dt = machine.session.config.dt
            steps = int(behind / dt)
            if steps > 0:
                behind -= steps * dt
                for env in machine._advance(min(steps, 240)):
                    await send(env)
        prev = now
        if machine.session is not None and now - last_beat >= heartbeat:
            last_beat = now
            await send(machine._reply("state", machine._state_payload()))


async def serve(
    bind: str | None = None,
    world_config: WorldConfig | None = None,
    out_dir: str | Path = ".",
    real_time_factor: float = 1.0,
    tcp: bool = False,
    ready: asyncio.Event | None = None,
):
    """Run the session service until cancelled (WebSocket by default)."""
    bind = bind or os.environ.get(DEFAULT_BIND_ENV, DEFAULT_BIND)
    host, port_str = bind.rsplit(":", 1)
    port = int(port_str)
    machine = SessionMachine(world_config, out_dir)
    busy = asyncio.Lock()

    if tcp:

        async def handle_tcp(reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
            if busy.locked():
                writer.close()
                return
            async with busy:
                machine.reset()
                stop = asyncio.Event()

                async def send(env: Envelope):
                    writer.write(env.to_json().encode() + b"\n")
                    await writer.drain()

                clock = asyncio.create_task(_drive_clock(machine, send, real_time_factor, stop))
                try:
                    while True:
                        line = await reader.readline()
                        if not line:
                            break
                        for env in machine.handle_raw(line):
                            await send(env)
                finally:
                    stop.set()
                    clock.cancel()
                    writer.close()

        server = await asyncio.start_server(handle_tcp, host, port)
        if ready is not None:
            ready.set()
        async with server:
            await server.serve_forever()
        return

    from websockets.asyncio.server import serve as ws_serve

    async def handle_ws(connection):
        if busy.locked():
            await connection.close(code=1013, reason="session in use")
            return
        async with busy:
            machine.reset()
            stop = asyncio.Event()

            async def send(env: Envelope):
                await connection.send(env.to_json())

            clock = asyncio.create_task(_drive_clock(machine, send, real_time_factor, stop))
            try:
                async for raw in connection:
                    for env in machine.handle_raw(raw):
                        await send(env)
            finally:
                stop.set()
                clock.cancel()

    async with ws_serve(handle_ws, host, port):
        if ready is not None:
            ready.set()
        await asyncio.Future()
