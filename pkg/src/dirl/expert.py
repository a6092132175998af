"""Scripted demonstrator: pure pursuit with obstacle-avoiding lateral offsets,
a curvature-scheduled target speed, and block-scheduled recovery noise."""

import math
from dataclasses import dataclass

import numpy as np

from .sim.core import Action, CarState, SimConfig
from .sim.track import Track


@dataclass(frozen=True)
class ExpertConfig:
    lookahead: float = 0.4  # base pure-pursuit goal distance, meters
    lookahead_speed_gain: float = 0.3  # extra lookahead per m/s
    # (curvature threshold 1/m, target speed m/s); the entry with the largest
    # threshold <= upcoming curvature wins
    speed_profile: tuple = ((0.0, 1.6), (0.35, 1.1), (0.7, 0.8))
    speed_window: float = 1.4  # meters of track scanned for upcoming curvature
    avoidance_offsets: tuple = (0.0, -0.12, 0.12, -0.24, 0.24, -0.33, 0.33)
    avoidance_window: float = 1.3  # meters of path scanned for obstacle cost
    avoidance_clearance: float = 0.12  # clearance sought beyond touching distance
    offset_cost_weight: float = 0.25
    avoid_speed_scale: float = 0.75
    throttle_gain: float = 2.0
    noise_amplitude: float = 0.3
    noise_fraction: float = 0.5
    noise_block: float = 3.0  # seconds per on/off block

    def __post_init__(self):
        if self.lookahead <= 0:
            raise ValueError("lookahead must be positive")
        if not 0.0 <= self.noise_amplitude <= 1.0:
            raise ValueError("noise_amplitude must be in [0, 1]")
        if not 0.0 <= self.noise_fraction <= 1.0:
            raise ValueError("noise_fraction must be in [0, 1]")


def _offset_cost(track: Track, s: float, offset: float, obstacles, cfg: ExpertConfig, sim_cfg):
    cost = cfg.offset_cost_weight * abs(offset)
    if not obstacles:
        return cost
    n_pts = 8
    for i in range(n_pts):
        arc = s + cfg.avoidance_window * (i + 1) / n_pts
        p = track.point_at(arc) + track.normal_at(arc) * offset
        for ob in obstacles:
            need = ob.radius + sim_cfg.car_radius + cfg.avoidance_clearance
            d = math.hypot(p[0] - ob.x, p[1] - ob.y)
            if d < need:
                cost += need - d
    return cost


def _obstacle_near(track: Track, s: float, obstacles, cfg: ExpertConfig, sim_cfg) -> bool:
    for ob in obstacles:
        _, s_ob = track.nearest(ob.x, ob.y)
        ahead = track.wrap_arc(s_ob - s)
        if ahead < cfg.avoidance_window + sim_cfg.car_radius:
            return True
    return False


def expert_action(
    state: CarState, track: Track, obstacles, cfg: ExpertConfig, sim_cfg: SimConfig
) -> Action:
    """Pure pursuit toward a lookahead point on the least-cost lateral offset."""
    _, s = track.nearest(state.x, state.y)
    usable = track.half_width - sim_cfg.car_radius - 0.02

    best_offset = 0.0
    best_cost = math.inf
    for off in cfg.avoidance_offsets:
        if abs(off) > usable:
            continue
        c = _offset_cost(track, s, off, obstacles, cfg, sim_cfg)
        if c < best_cost:
            best_cost = c
            best_offset = off

    lookahead = cfg.lookahead + cfg.lookahead_speed_gain * state.speed
    arc = s + lookahead
    goal = track.point_at(arc) + track.normal_at(arc) * best_offset

    dx = goal[0] - state.x
    dy = goal[1] - state.y
    ch = math.cos(state.heading)
    sh = math.sin(state.heading)
    fwd = ch * dx + sh * dy
    lat = -sh * dx + ch * dy
    d2 = fwd * fwd + lat * lat
    curvature = 0.0 if d2 < 1e-12 else 2.0 * lat / d2
    delta = math.atan(curvature * sim_cfg.wheelbase)
    steering = max(-1.0, min(1.0, delta / sim_cfg.delta_max))

    kappa = track.max_curvature(s, cfg.speed_window)
    target = cfg.speed_profile[0][1]
    for threshold, v in cfg.speed_profile:
        if kappa >= threshold:
            target = v
    if best_offset != 0.0 or _obstacle_near(track, s, obstacles, cfg, sim_cfg):
        target *= cfg.avoid_speed_scale

    throttle = (sim_cfg.drag * target + cfg.throttle_gain * (target - state.speed)) / sim_cfg.a_max
    throttle = max(0.0, min(1.0, throttle))
    return Action(steering=steering, throttle=throttle)


def noise_active(step_index: int, dt: float, cfg: ExpertConfig) -> bool:
    """Block schedule: each period of 2 * noise_block seconds starts quiet and
    ends with a noise-on stretch covering noise_fraction of the period."""
    if cfg.noise_fraction <= 0.0:
        return False
    period = 2.0 * cfg.noise_block
    t = (step_index * dt) % period
    return t >= (1.0 - cfg.noise_fraction) * period


def inject_noise(expert: Action, rng: np.random.Generator, active: bool, cfg: ExpertConfig) -> Action:
    """Uniform [-amplitude, amplitude] perturbation on both components, clamped."""
    if not active:
        return expert
    noise = rng.uniform(-cfg.noise_amplitude, cfg.noise_amplitude, size=2)
    return Action(
        steering=expert.steering + float(noise[0]),
        throttle=expert.throttle + float(noise[1]),
    ).clamped()
