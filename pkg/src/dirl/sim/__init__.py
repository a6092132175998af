from .track import Track, stadium_track, default_track, load_track, save_track
from .core import (
    Action,
    CarState,
    Obstacle,
    Observation,
    SimConfig,
    Simulator,
    check_collision,
    lap_progress,
    reset,
    sample_obstacles,
    start_pose,
    step,
)
from .render import render_image, render_observation

__all__ = [
    "Track",
    "stadium_track",
    "default_track",
    "load_track",
    "save_track",
    "Action",
    "CarState",
    "Obstacle",
    "Observation",
    "SimConfig",
    "Simulator",
    "check_collision",
    "lap_progress",
    "reset",
    "sample_obstacles",
    "start_pose",
    "step",
    "render_image",
    "render_observation",
]
