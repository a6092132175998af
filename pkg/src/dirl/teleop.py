"""Websocket teleoperation bridge: a fixed-rate tick loop owns the simulator,
applies the latest human action, streams frames, and records episodes with the
same labeling semantics as autonomous collection (e-stop counts as collision)."""

import asyncio
import base64
import contextlib
import io
import json
import math
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
from PIL import Image
from starlette.applications import Starlette
from starlette.routing import WebSocketRoute
from starlette.websockets import WebSocket, WebSocketDisconnect

from .config import TASK_OBSTACLES
from .runner import finalize_episode
from .sim.core import Action, Simulator
from .store import SOURCE_EXPERT, EpisodeStore, Frame

ZERO_ACTION = Action(steering=0.0, throttle=0.0)
STALENESS_SECONDS = 0.5
DEFAULT_TICK_PERIOD = 0.1


@dataclass(frozen=True)
class SessionState:
    mode: str = "drive"  # drive | record | eval-monitor
    tick: int = 0
    latest_action: Action = ZERO_ACTION
    action_time: float = -math.inf  # monotonic receipt time of latest_action
    estop: bool = False
    recording_episode_id: Optional[str] = None

    @property
    def recording(self) -> bool:
        return self.recording_episode_id is not None


def effective_action(state: SessionState, now: float) -> Action:
    """Zero while e-stopped or when the newest action is older than 0.5 s."""
    if state.estop:
        return ZERO_ACTION
    if now - state.action_time > STALENESS_SECONDS:
        return ZERO_ACTION
    return state.latest_action


def _finite(value) -> bool:
    return isinstance(value, (int, float)) and math.isfinite(value)


def handle_message(
    state: SessionState, msg: dict, now: float, next_episode_index: int = 0
) -> Tuple[SessionState, Optional[dict], List[tuple]]:
    """Pure protocol transition: returns (new state, reply-or-None, effects).

    Effects are interpreted by the service loop: ("finalize", collided),
    ("reset_sim",), ("config", task, seed)."""
    if not isinstance(msg, dict) or "type" not in msg:
        return state, {"type": "error", "message": "message must be an object with a type"}, []
    kind = msg["type"]

    if kind == "action":
        steering = msg.get("steering")
        throttle = msg.get("throttle")
        if not (_finite(steering) and _finite(throttle)):
            return state, {"type": "error", "message": "action fields must be finite numbers"}, []
        if state.estop:
            return state, None, []  # e-stop pins the car until reset
        action = Action(steering=float(steering), throttle=float(throttle)).clamped()
        return replace(state, latest_action=action, action_time=now), None, []

    if kind == "estop":
        effects = []
        new = replace(state, estop=True, latest_action=ZERO_ACTION)
        if state.recording:
            effects.append(("finalize", True))
            new = replace(new, recording_episode_id=None, mode="drive")
        return new, None, effects

    if kind == "reset":
        effects = []
        new = replace(state, estop=False, latest_action=ZERO_ACTION)
        if state.recording:
            effects.append(("finalize", False))
            new = replace(new, recording_episode_id=None, mode="drive")
        effects.append(("reset_sim",))
        return new, None, effects

    if kind == "record":
        on = msg.get("on")
        if not isinstance(on, bool):
            return state, {"type": "error", "message": "record needs a boolean 'on'"}, []
        if on:
            if state.recording:
                return state, None, []
            episode_id = f"teleop-{next_episode_index:04d}"
            return replace(state, recording_episode_id=episode_id, mode="record"), None, []
        if not state.recording:
            return state, None, []
        return (
            replace(state, recording_episode_id=None, mode="drive"),
            None,
            [("finalize", False)],
        )

    if kind == "config":
        task = msg.get("task")
        seed = msg.get("seed")
        if task not in TASK_OBSTACLES or not isinstance(seed, int):
            return state, {"type": "error", "message": "config needs task easy|hard and an integer seed"}, []
        effects = []
        new = state
        if state.recording:
            effects.append(("finalize", False))
            new = replace(new, recording_episode_id=None, mode="drive")
        effects.append(("config", task, seed))
        return new, None, effects

    return state, {"type": "error", "message": f"unknown message type {kind!r}"}, []


def encode_frame_png(image_u8: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(image_u8).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


class TeleopServer:
    """One tick loop, one driver, any number of frame watchers.

    Slow clients lose frames (bounded per-client queues) but never stall the
    loop; the trajectory log records exactly what was applied each tick."""

    def __init__(self, sim: Simulator, store: Optional[EpisodeStore], tick_period: float = DEFAULT_TICK_PERIOD):
        self.sim = sim
        self.store = store
        self.tick_period = tick_period
        self.state = SessionState()
        self.clients: Dict[WebSocket, asyncio.Queue] = {}
        self.recorded_frames: List[Frame] = []
        self.episode_counter = store.n_episodes if store is not None else 0
        self.trajectory: List[tuple] = []  # (seq, wall, x, y, heading, speed, steering, throttle)
        self.last_collision = False
        self._last_obs = None
        self._task: Optional[asyncio.Task] = None
        self._running = False

    # -- message path -------------------------------------------------------

    def on_text(self, text: str, now: float) -> Optional[dict]:
        try:
            msg = json.loads(text)
        except json.JSONDecodeError:
            return {"type": "error", "message": "malformed JSON"}
        prev = self.state
        self.state, reply, effects = handle_message(msg=msg, state=prev, now=now, next_episode_index=self.episode_counter)
        for effect in effects:
            self._apply_effect(effect)
        if self.state.recording and not prev.recording:
            self.recorded_frames = []
            self._last_obs = None  # re-observe at the next tick
        return reply

    def _apply_effect(self, effect: tuple) -> None:
        kind = effect[0]
        if kind == "finalize":
            collided = effect[1]
            frames = self.recorded_frames
            self.recorded_frames = []
            if frames and self.store is not None:
                episode_id = f"teleop-{self.episode_counter:04d}"
                record = finalize_episode(frames, self.sim.cfg.dt, episode_id, SOURCE_EXPERT, collided)
                self.store.append_episode(record)
                self.episode_counter += 1
        elif kind == "reset_sim":
            self.sim.reset_pose(self.sim.safe_pose_near(0.0))
            self._last_obs = None
            self.last_collision = False
        elif kind == "config":
            _, task, seed = effect
            self.sim.reset(TASK_OBSTACLES[task], seed=seed)
            self.sim.reset_pose(self.sim.safe_pose_near(0.0))
            self._last_obs = None
            self.last_collision = False

    # -- tick loop -----------------------------------------------------------

    def tick(self, now: float) -> dict:
        """One control step: apply the buffered action, advance the sim,
        handle collision bookkeeping, and build the broadcast frame."""
        if self._last_obs is None:
            self._last_obs = self.sim.observe()
        action = effective_action(self.state, now)
        if self.state.recording:
            self.recorded_frames.append(
                Frame(
                    image=self._last_obs.image_u8,
                    speed=self._last_obs.speed,
                    action=action,
                    expert_action=action,
                    collision=0,
                )
            )
        self.sim.step(action)
        collided = self.sim.collided()
        seq = self.state.tick
        self.trajectory.append(
            (
                seq,
                now,
                self.sim.state.x,
                self.sim.state.y,
                self.sim.state.heading,
                self.sim.state.speed,
                action.steering,
                action.throttle,
            )
        )
        if collided:
            if self.state.recording:
                self._apply_effect(("finalize", True))
                self.state = replace(self.state, recording_episode_id=None, mode="drive")
            self.sim.reset_pose(self.sim.safe_pose_near(self.sim.progress() * self.sim.track.total_length))
        self.last_collision = collided
        self._last_obs = self.sim.observe()
        frame = {
            "type": "frame",
            "seq": seq,
            "image": encode_frame_png(self._last_obs.image_u8),
            "speed": float(self._last_obs.speed),
            "collision": bool(collided),
            "recording": self.state.recording,
            "lap_progress": float(self.sim.progress()),
        }
        self.state = replace(self.state, tick=self.state.tick + 1)
        return frame

    def broadcast(self, frame: dict) -> None:
        for q in self.clients.values():
            if q.full():
                try:
                    q.get_nowait()  # drop the oldest frame, never block the loop
                except asyncio.QueueEmpty:
                    pass
            q.put_nowait(frame)

    async def run(self) -> None:
        loop = asyncio.get_running_loop()
        next_t = loop.time()
        self._running = True
        while self._running:
            now = loop.time()
            frame = self.tick(now)
            self.broadcast(frame)
            next_t += self.tick_period
            delay = next_t - loop.time()
            if delay < 0:
                next_t = loop.time()  # fell behind; don't try to catch up in a burst
                delay = 0.0
            await asyncio.sleep(delay)

    def start(self) -> None:
        self._task = asyncio.get_event_loop().create_task(self.run())

    async def stop(self) -> None:
        self._running = False
        if self._task is not None:
            self._task.cancel()
            try:
                await self._task
            except asyncio.CancelledError:
                pass
            self._task = None


def create_app(
    sim: Simulator, store: Optional[EpisodeStore] = None, tick_period: float = DEFAULT_TICK_PERIOD
) -> Starlette:
    server = TeleopServer(sim, store, tick_period=tick_period)

    async def ws_endpoint(websocket: WebSocket) -> None:
        await websocket.accept()
        queue: asyncio.Queue = asyncio.Queue(maxsize=4)
        server.clients[websocket] = queue

        async def sender() -> None:
            while True:
                payload = await queue.get()
                await websocket.send_text(json.dumps(payload))

        send_task = asyncio.create_task(sender())
        loop = asyncio.get_running_loop()
        try:
            while True:
                text = await websocket.receive_text()
                reply = server.on_text(text, loop.time())
                if reply is not None:
                    queue.put_nowait(reply)
        except WebSocketDisconnect:
            pass
        finally:
            send_task.cancel()
            server.clients.pop(websocket, None)

    @contextlib.asynccontextmanager
    async def lifespan(app):
        server.start()
        try:
            yield
        finally:
            await server.stop()

    app = Starlette(routes=[WebSocketRoute("/ws", ws_endpoint)], lifespan=lifespan)
    app.state.teleop = server
    return app


def serve(
    sim: Simulator,
    store: Optional[EpisodeStore],
    port: int,
    host: str = "127.0.0.1",
    tick_period: float = DEFAULT_TICK_PERIOD,
) -> None:
    """Blocking entry point used by the CLI."""
    import uvicorn

    app = create_app(sim, store, tick_period=tick_period)
    uvicorn.run(app, host=host, port=port, log_level="warning")
