"""Interactive session server: 60 Hz tick loop plus wire transports.

The session core is synchronous and single-writer: message handlers only
validate and enqueue intents, and the tick loop applies them at tick
boundaries before stepping the simulator.  The asyncio layer adds a
WebSocket endpoint for UI clients (browsers cannot send datagrams), a raw
UDP port for pose packets, a /health HTTP route, and per-client bounded
send queues so a slow client can never stall the loop.
"""

from __future__ import annotations

import asyncio
import http
import json
import logging
from collections import deque
from dataclasses import dataclass
import numpy as np

from .encoder import ObsConfig, RewardCoeffs, RewardWeights, observe, reward
from .motion import MotionClip, resample_speed
from .policy import GaussianPolicy, forward
from .schedulers import (
    Command,
    CommandScheduler,
    DatasetScheduler,
    PoseBuffer,
    SchedulerExhausted,
    StitchScheduler,
    stream_next,
)
from .simkit import (
    CharacterModel,
    Perturbation,
    SimConfig,
    SimulationDiverged,
    apply_impulse,
    forward_kinematics,
    lift_above_ground,
    state_from_character,
    step,
)
from .wire import (
    Ack,
    ApplyImpulse,
    ClipLibrary,
    EnqueueClip,
    ErrorMsg,
    Hello,
    Pause,
    PosePacket,
    ProtocolMessage,
    Resume,
    SelectScheduler,
    SetCommand,
    SetSpeedRatio,
    StateFrame,
    WireError,
    deserialize,
    serialize,
)

log = logging.getLogger("marionette.service")

SERVICE_VERSION = 1
SCHEDULER_KINDS = ("dataset", "stitch", "command", "stream")


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8765
    pose_port: int = 8766
    tick_rate: float = 60.0
    tau: int = 1
    max_send_queue: int = 128
    speed_ratio_bounds: tuple[float, float] = (0.25, 4.0)


class Session:
    """One simulated character, one active scheduler, one tick owner."""

    def __init__(
        self,
        model: CharacterModel,
        clips: list[MotionClip],
        policy: GaussianPolicy | None = None,
        sim: SimConfig | None = None,
        config: ServiceConfig | None = None,
        weights: RewardWeights | None = None,
        coeffs: RewardCoeffs | None = None,
        perturbation: Perturbation | None = None,
    ):
        self.model = model
        self.clips = {c.id: c for c in clips}
        self.policy = policy
        self.sim = sim or SimConfig()
        self.config = config or ServiceConfig()
        self.weights = weights or RewardWeights()
        self.coeffs = coeffs or RewardCoeffs()
        self.perturbation = perturbation
        self.obs_cfg = ObsConfig()
        self.tick_count = 0
        self.paused = False
        self.status = "running"
        self.speed_ratio = 1.0
        self.intents: deque[ProtocolMessage] = deque()
        self.pose_buffer = PoseBuffer()
        self.stitch = StitchScheduler()
        self.command_sched: CommandScheduler | None = None
        gaits = {cid: c for cid, c in self.clips.items() if c.has_velocities}
        if gaits:
            self.command_sched = CommandScheduler(gaits)
        self.active = "stitch"
        self.dataset_sched: DatasetScheduler | None = None
        first = next(iter(clips), None)
        if first is not None:
            init = first.frames[0]
            self.state = lift_above_ground(model, state_from_character(model, init))
        else:
            from .simkit import default_state

            self.state = default_state(model)
        self.last_safe = self.state.copy()
        self.last_targets: list | None = None
        self._fk_cache = None  # post-step state reused as next tick's observation

    # -- message handling (validate + enqueue; mutation happens in tick) --

    def handle_message(self, msg: ProtocolMessage) -> ProtocolMessage:
        """Validate a client message; enqueue its effect for the next tick.

        Returns the ack or error to send back.  Invalid messages leave the
        session untouched.
        """
        seq = getattr(msg, "seq", -1)
        if isinstance(msg, EnqueueClip):
            if msg.clip_id not in self.clips:
                return ErrorMsg(seq, "unknown_clip", msg.clip_id)
            clip = self.clips[msg.clip_id]
            if not clip.has_velocities:
                return ErrorMsg(seq, "clip_without_velocities", msg.clip_id)
        elif isinstance(msg, SetCommand):
            if self.command_sched is None or msg.gait not in self.command_sched.gaits:
                return ErrorMsg(seq, "unknown_gait", msg.gait)
        elif isinstance(msg, ApplyImpulse):
            try:
                self.model.link_index(msg.body)
            except KeyError:
                return ErrorMsg(seq, "unknown_body", msg.body)
            if len(msg.impulse) != 3 or not np.all(np.isfinite(msg.impulse)):
                return ErrorMsg(seq, "bad_impulse", str(msg.impulse))
        elif isinstance(msg, SetSpeedRatio):
            lo, hi = self.config.speed_ratio_bounds
            if not (lo <= msg.ratio <= hi):
                return ErrorMsg(seq, "ratio_out_of_bounds", str(msg.ratio))
        elif isinstance(msg, SelectScheduler):
            if msg.kind not in SCHEDULER_KINDS:
                return ErrorMsg(seq, "unknown_scheduler", msg.kind)
            if msg.kind == "dataset":
                if msg.clip_id is None or msg.clip_id not in self.clips:
                    return ErrorMsg(seq, "unknown_clip", str(msg.clip_id))
        elif isinstance(msg, PosePacket):
            # pose packets bypass the intent queue: the buffer is lock-guarded
            self.pose_buffer.ingest_packet(msg)
            return Ack(seq)
        elif not isinstance(msg, (Pause, Resume)):
            return ErrorMsg(seq, "unknown_tag", type(msg).__name__)
        self.intents.append(msg)
        return Ack(seq)

    def _apply_intents(self) -> None:
        while self.intents:
            msg = self.intents.popleft()
            if isinstance(msg, EnqueueClip):
                clip = self.clips[msg.clip_id]
                if self.speed_ratio != 1.0:
                    clip = resample_speed(clip, self.speed_ratio)
                self.stitch.push(clip)
                if self.active == "stitch":
                    self.paused = False
                    self.status = "running"
            elif isinstance(msg, SetCommand):
                self.command_sched.set_command(Command(msg.heading, msg.speed, msg.gait))
            elif isinstance(msg, ApplyImpulse):
                self.state = apply_impulse(
                    self.state, self.model, msg.body, np.asarray(msg.impulse)
                )
                self._fk_cache = None
            elif isinstance(msg, SetSpeedRatio):
                self.speed_ratio = msg.ratio
            elif isinstance(msg, Pause):
                self.paused = True
                self.status = "paused"
            elif isinstance(msg, Resume):
                self.paused = False
                self.status = "running"
            elif isinstance(msg, SelectScheduler):
                self.active = msg.kind
                if msg.kind == "dataset":
                    clip = self.clips[msg.clip_id]
                    if self.speed_ratio != 1.0:
                        clip = resample_speed(clip, self.speed_ratio)
                    self.dataset_sched = DatasetScheduler(clip)
                    init = lift_above_ground(
                        self.model, state_from_character(self.model, clip.frames[0])
                    )
                    self.state = init
                    self._fk_cache = None
                self.paused = False
                self.status = "running"

    def _next_targets(self):
        tau = self.config.tau
        if self.active == "dataset":
            if self.dataset_sched is None:
                raise SchedulerExhausted("no dataset clip selected")
            return self.dataset_sched.next(tau)
        if self.active == "stitch":
            return self.stitch.next(tau)
        if self.active == "command":
            if self.command_sched is None:
                raise SchedulerExhausted("no gait clips available")
            return self.command_sched.next(tau)
        return stream_next(self.pose_buffer, tau)

    def tick(self) -> StateFrame | None:
        """One control step: intents, schedule, act, simulate, score.

        Returns the frame to broadcast, or None while paused.
        """
        self._apply_intents()
        if self.paused:
            return None
        try:
            targets = self._next_targets()
        except SchedulerExhausted as e:
            self.paused = True
            self.status = f"exhausted: {e}"
            return StateFrame(
                self.tick_count,
                forward_kinematics(self.model, self.state.q, self.state.qd),
                None, {}, 0.0, buffer_len=len(self.stitch), status=self.status,
            )
        if self._fk_cache is None:
            self._fk_cache = forward_kinematics(self.model, self.state.q, self.state.qd)
        actual = self._fk_cache
        if self.policy is not None:
            obs = observe(actual, targets, self.obs_cfg)
            action = forward(self.policy.mean_net, obs)
            torques = np.clip(action, -1.0, 1.0) * self.model.effort_limits
        else:
            torques = np.zeros(self.model.num_actuated)
        if (
            self.perturbation is not None
            and self.tick_count > 0
            and self.tick_count % self.perturbation.period_steps == 0
        ):
            body = self.perturbation.target_body or self.model.links[0].name
            self.state = apply_impulse(self.state, self.model, body, self.perturbation.impulse)
        try:
            self.state = step(self.model, self.state, torques, self.sim)
            self.last_safe = self.state.copy()
        except SimulationDiverged as e:
            self.state = self.last_safe.copy()
            self._fk_cache = None
            self.tick_count += 1
            return StateFrame(
                self.tick_count, actual, targets[0],
                {}, 0.0, buffer_len=len(self.stitch), status=f"diverged: {e}",
            )
        actual = forward_kinematics(self.model, self.state.q, self.state.qd)
        self._fk_cache = actual
        total, terms = reward(actual, targets[0], self.weights, self.coeffs)
        self.tick_count += 1
        self.last_targets = targets
        return StateFrame(
            self.tick_count,
            actual,
            targets[0],
            {k: round(float(v), 9) for k, v in terms.named().items()},
            round(float(total), 9),
            buffer_len=len(self.stitch),
            status=self.status,
        )

    def clip_library(self) -> ClipLibrary:
        return ClipLibrary(
            [
                {
                    "id": c.id,
                    "label_path": c.label_path,
                    "frames": c.num_frames,
                    "fps": c.fps,
                }
                for c in self.clips.values()
            ]
        )


def tick(session: Session):
    return session.tick()


def handle_message(session: Session, msg: ProtocolMessage) -> ProtocolMessage:
    return session.handle_message(msg)


# ---------------------------------------------------------------------------
# asyncio transports


class _PoseProtocol(asyncio.DatagramProtocol):
    def __init__(self, session: Session):
        self.session = session

    def datagram_received(self, data: bytes, addr) -> None:
        self.session.pose_buffer.ingest(data)


class SessionServer:
    def __init__(self, session: Session, config: ServiceConfig | None = None):
        self.session = session
        self.config = config or session.config
        self.clients: dict[object, asyncio.Queue] = {}
        self.seq_cache: dict[object, dict[int, bytes]] = {}
        self._stop = asyncio.Event()
        self.frames_sent = 0

    def request_stop(self) -> None:
        self._stop.set()

    async def _client_writer(self, ws, queue: asyncio.Queue) -> None:
        while True:
            data = await queue.get()
            await ws.send(data)

    async def _handle_client(self, ws) -> None:
        queue: asyncio.Queue = asyncio.Queue(maxsize=self.config.max_send_queue)
        self.clients[ws] = queue
        self.seq_cache[ws] = {}
        writer = asyncio.create_task(self._client_writer(ws, queue))
        try:
            model = self.session.model
            # joints are links[1:]; parent index re-based so -1 means the root
            parents = [l.parent - 1 for l in model.links[1:]]
            await queue.put(serialize(Hello(
                SERVICE_VERSION, model.name, model.num_joints,
                joint_parents=parents, body_names=[l.name for l in model.links],
            )))
            await queue.put(serialize(self.session.clip_library()))
            async for raw in ws:
                try:
                    msg = deserialize(raw)
                except WireError as e:
                    await queue.put(serialize(ErrorMsg(-1, e.code, str(e))))
                    continue
                seq = getattr(msg, "seq", -1)
                cache = self.seq_cache[ws]
                if seq in cache:  # idempotent re-ack, no double application
                    await queue.put(cache[seq])
                    continue
                reply = serialize(self.session.handle_message(msg))
                cache[seq] = reply
                await queue.put(reply)
        finally:
            writer.cancel()
            self.clients.pop(ws, None)
            self.seq_cache.pop(ws, None)

    def _broadcast(self, data: bytes) -> None:
        dead = []
        for ws, queue in self.clients.items():
            try:
                queue.put_nowait(data)
            except asyncio.QueueFull:
                dead.append(ws)  # slow client: drop the connection, not the loop
        for ws in dead:
            self.clients.pop(ws, None)
            self.seq_cache.pop(ws, None)
            asyncio.ensure_future(ws.close(code=1013, reason="send queue overflow"))

    async def _tick_loop(self) -> None:
        period = 1.0 / self.config.tick_rate
        loop = asyncio.get_running_loop()
        next_due = loop.time()
        while not self._stop.is_set():
            frame = self.session.tick()
            if frame is not None:
                self._broadcast(serialize(frame))
                self.frames_sent += 1
            next_due += period
            delay = next_due - loop.time()
            if delay > 0:
                await asyncio.sleep(delay)
            elif delay < -period:  # truly fell behind: drop the missed slots
                next_due = loop.time()
                await asyncio.sleep(0)
            else:  # sub-period jitter: keep the schedule, yield once
                await asyncio.sleep(0)

    async def run(self) -> None:
        import websockets

        def health(connection, request):
            if request.path == "/health":
                body = json.dumps({"version": SERVICE_VERSION, "status": "ok"}).encode()
                return connection.respond(http.HTTPStatus.OK, body.decode() + "\n")
            return None

        async with websockets.serve(
            self._handle_client, self.config.host, self.config.port,
            process_request=health,
        ):
            loop = asyncio.get_running_loop()
            transport, _ = await loop.create_datagram_endpoint(
                lambda: _PoseProtocol(self.session),
                local_addr=(self.config.host, self.config.pose_port),
            )
            log.info(
                "serving ws://%s:%d (pose datagrams on %d)",
                self.config.host, self.config.port, self.config.pose_port,
            )
            try:
                await self._tick_loop()
            finally:
                transport.close()


def serve(session: Session, config: ServiceConfig | None = None) -> None:
    """Blocking entry point; returns after request_stop or SIGINT."""
    server = SessionServer(session, config)
    try:
        asyncio.run(server.run())
    except KeyboardInterrupt:
        log.info("interrupted; shutting down")
