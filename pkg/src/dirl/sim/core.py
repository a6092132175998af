"""Car dynamics, collision tests, resets, and lap bookkeeping.

The dynamics are a kinematic bicycle with a first-order throttle-to-speed
response, stepped with explicit Euler at a fixed dt. All functions here are
pure; `Simulator` adds the mutable episode plumbing plus a global step
counter used to assert that training phases never touch the environment.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import CrowdedTrackError
from . import kernels
from .track import Track


@dataclass(frozen=True)
class Action:
    steering: float  # [-1, 1]
    throttle: float  # [0, 1]

    def clamped(self) -> "Action":
        return Action(
            steering=min(1.0, max(-1.0, self.steering)),
            throttle=min(1.0, max(0.0, self.throttle)),
        )

    def as_array(self) -> np.ndarray:
        return np.array([self.steering, self.throttle], dtype=np.float64)


@dataclass(frozen=True)
class CarState:
    x: float
    y: float
    heading: float  # radians
    speed: float  # m/s, >= 0
    steering_angle: float = 0.0  # front-wheel angle, radians


@dataclass(frozen=True)
class Obstacle:
    x: float
    y: float
    radius: float
    color_id: int = 0


@dataclass
class Observation:
    """Ego view plus the speed scalar. `image_u8` is the canonical render;
    `image` exposes it as float intensities in [0, 1]."""

    image_u8: np.ndarray  # (H, W, 3) uint8
    speed: float

    @property
    def image(self) -> np.ndarray:
        return self.image_u8.astype(np.float32) / 255.0


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.1
    v_max: float = 2.0
    a_max: float = 2.0
    drag: float = 1.0  # 1/s
    delta_max: float = 0.5  # radians
    wheelbase: float = 0.2
    car_radius: float = 0.10
    image_size: int = 48
    view_size: float = 3.0  # meters covered by the image edge
    fence_width: float = 0.12
    obstacle_radius_min: float = 0.10
    obstacle_radius_max: float = 0.15
    obstacle_margin: float = 0.05  # clearance kept between obstacle and fence
    obstacle_spacing: float = 0.35  # extra gap required between obstacle rims
    spawn_clearance: float = 1.0  # arc length around the start kept obstacle-free
    rng_seed: int = 0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        for name in ("v_max", "a_max", "delta_max", "wheelbase", "car_radius", "view_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.drag < 0:
            raise ValueError("drag must be non-negative")

    @property
    def resolution(self) -> float:
        return self.view_size / self.image_size


# render palette: background, fence band, road; obstacles by color_id
BASE_PALETTE = np.array(
    [[15, 15, 18], [200, 60, 60], [105, 105, 110]], dtype=np.uint8
)
OBSTACLE_PALETTE = np.array(
    [[235, 160, 40], [70, 110, 230], [180, 70, 200], [60, 200, 120]], dtype=np.uint8
)


def step(state: CarState, action: Action, cfg: SimConfig) -> CarState:
    """Advance one tick. Inputs are clamped; the result respects the state bounds."""
    a = action.clamped()
    v = state.speed + (a.throttle * cfg.a_max - cfg.drag * state.speed) * cfg.dt
    v = min(cfg.v_max, max(0.0, v))
    delta = a.steering * cfg.delta_max
    heading = state.heading + (v / cfg.wheelbase) * math.tan(delta) * cfg.dt
    x = state.x + v * cfg.dt * math.cos(heading)
    y = state.y + v * cfg.dt * math.sin(heading)
    return CarState(x=x, y=y, heading=heading, speed=v, steering_angle=delta)


def check_collision(state: CarState, track: Track, obstacles, cfg: SimConfig) -> bool:
    """True iff the car footprint disc leaves the corridor or touches an obstacle."""
    d2, _ = kernels.nearest_point(state.x, state.y, track.geometry)
    limit = track.half_width - cfg.car_radius
    if limit <= 0 or d2 > limit * limit:
        return True
    for ob in obstacles:
        dx = state.x - ob.x
        dy = state.y - ob.y
        r = ob.radius + cfg.car_radius
        if dx * dx + dy * dy < r * r:
            return True
    return False


def lap_progress(state: CarState, track: Track) -> float:
    """Arc-length fraction in [0, 1) of the nearest centerline point."""
    _, s = kernels.nearest_point(state.x, state.y, track.geometry)
    frac = s / track.total_length
    return frac if frac < 1.0 else 0.0


def start_pose(track: Track, speed: float = 0.0) -> CarState:
    p = track.point_at(0.0)
    return CarState(x=float(p[0]), y=float(p[1]), heading=track.heading_at(0.0), speed=speed)


def sample_obstacles(
    track: Track, n_obstacles: int, seed: int, cfg: SimConfig, max_attempts_per_obstacle: int = 300
):
    """Rejection-sample non-overlapping obstacles inside the corridor.

    Deterministic in `seed`. Raises CrowdedTrackError when placement cannot be
    satisfied, which signals an over-crowded configuration rather than a bug.
    """
    if n_obstacles < 0:
        raise ValueError("n_obstacles must be >= 0")
    rng = np.random.default_rng(seed)
    obstacles = []
    total = track.total_length
    attempts = 0
    budget = max_attempts_per_obstacle * max(1, n_obstacles)
    while len(obstacles) < n_obstacles:
        if attempts >= budget:
            raise CrowdedTrackError(
                f"could not place {n_obstacles} obstacles after {attempts} attempts"
            )
        attempts += 1
        radius = float(rng.uniform(cfg.obstacle_radius_min, cfg.obstacle_radius_max))
        s = float(rng.uniform(0.0, total))
        # keep the spawn straight clear so reset() never starts in contact
        arc_to_start = min(s, total - s)
        if arc_to_start < cfg.spawn_clearance:
            continue
        max_lat = track.half_width - radius - cfg.obstacle_margin
        if max_lat <= 0:
            continue
        lat = float(rng.uniform(-max_lat, max_lat))
        p = track.point_at(s) + track.normal_at(s) * lat
        ok = True
        for ob in obstacles:
            dx = p[0] - ob.x
            dy = p[1] - ob.y
            need = radius + ob.radius + cfg.obstacle_spacing
            if dx * dx + dy * dy < need * need:
                ok = False
                break
        if ok:
            color = int(rng.integers(0, len(OBSTACLE_PALETTE)))
            obstacles.append(Obstacle(x=float(p[0]), y=float(p[1]), radius=radius, color_id=color))
    return obstacles


def reset(track: Track, n_obstacles: int, seed: int, cfg: SimConfig):
    """Car at the start pose, speed 0, with a deterministic obstacle layout."""
    return start_pose(track), sample_obstacles(track, n_obstacles, seed, cfg)


class Simulator:
    """Owns one episode's mutable state and counts every dynamics step.

    The class-level `total_steps` counter is the offline-training tripwire:
    world-model and policy training must leave it untouched.
    """

    total_steps = 0

    def __init__(self, track: Track, cfg: SimConfig, obstacles=(), state: CarState = None):
        self.track = track
        self.cfg = cfg
        self.obstacles = list(obstacles)
        self.state = state if state is not None else start_pose(track)
        self.steps = 0

    def reset(self, n_obstacles: int, seed: int):
        self.state, self.obstacles = reset(self.track, n_obstacles, seed, self.cfg)
        return self.state

    def reset_pose(self, state: CarState):
        self.state = state
        return self.state

    def step(self, action: Action) -> CarState:
        self.state = step(self.state, action, self.cfg)
        self.steps += 1
        Simulator.total_steps += 1
        return self.state

    def collided(self) -> bool:
        return check_collision(self.state, self.track, self.obstacles, self.cfg)

    def progress(self) -> float:
        return lap_progress(self.state, self.track)

    def observe(self) -> Observation:
        from .render import render_observation

        return render_observation(self.state, self.track, self.obstacles, self.cfg)

    def safe_pose_near(self, s: float, advance: float = 0.3) -> CarState:
        """Centerline pose at arc s, nudged forward until collision-free.

        Used for post-intervention resets: the collision point may sit next to
        an obstacle, so the respawn walks downstream in `advance` steps.
        """
        total = self.track.total_length
        for k in range(int(total / advance) + 1):
            sk = self.track.wrap_arc(s + k * advance)
            p = self.track.point_at(sk)
            cand = CarState(
                x=float(p[0]), y=float(p[1]), heading=self.track.heading_at(sk), speed=0.0
            )
            if not check_collision(cand, self.track, self.obstacles, self.cfg):
                return cand
        raise CrowdedTrackError("no collision-free centerline pose exists")
