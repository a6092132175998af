"""Ego-centric top-down observation rendering."""

import numpy as np

from . import kernels
from .core import BASE_PALETTE, OBSTACLE_PALETTE, CarState, Observation, SimConfig
from .track import Track


def render_image(
    state: CarState, track: Track, obstacles, cfg: SimConfig, use_numba=None
) -> np.ndarray:
    """Rasterize the car-centered, heading-aligned view (forward = up) as uint8."""
    n = len(obstacles)
    ox = np.empty(n, dtype=np.float64)
    oy = np.empty(n, dtype=np.float64)
    orad = np.empty(n, dtype=np.float64)
    ocid = np.empty(n, dtype=np.int64)
    for i, ob in enumerate(obstacles):
        ox[i] = ob.x
        oy[i] = ob.y
        orad[i] = ob.radius
        ocid[i] = ob.color_id % len(OBSTACLE_PALETTE)
    return kernels.render_pixels(
        cfg.image_size,
        cfg.image_size,
        state.x,
        state.y,
        state.heading,
        cfg.resolution,
        track.geometry,
        track.half_width,
        cfg.fence_width,
        ox,
        oy,
        orad,
        ocid,
        BASE_PALETTE,
        OBSTACLE_PALETTE,
        use_numba=use_numba,
    )


def render_observation(state: CarState, track: Track, obstacles, cfg: SimConfig) -> Observation:
    return Observation(image_u8=render_image(state, track, obstacles, cfg), speed=state.speed)
