"""Closed-polyline track geometry and the plain-text track file format."""

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

TRACK_MAGIC = "DIRLTRACK 1"


@dataclass
class TrackGeometry:
    """Per-segment arrays for the kernels. Segment k runs vertex k -> k+1 (wrapping)."""

    ax: np.ndarray
    ay: np.ndarray
    ux: np.ndarray
    uy: np.ndarray
    seg_len: np.ndarray
    cum_len: np.ndarray
    total_length: float
    seg_curvature: np.ndarray  # |heading change| per meter around each segment start


def _segments_intersect(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(p3, p4, p1)
    d2 = orient(p3, p4, p2)
    d3 = orient(p1, p2, p3)
    d4 = orient(p1, p2, p4)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))


@dataclass
class Track:
    """Closed centerline polyline (counterclockwise forward) with a corridor half width.

    `points` holds each vertex once; the closing segment from the last vertex
    back to the first is implicit.
    """

    points: np.ndarray
    half_width: float
    name: str = "custom"
    _geo: TrackGeometry = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 2 or self.points.shape[0] < 3:
            raise ValueError("track needs at least 3 (x, y) points")
        if self.half_width <= 0:
            raise ValueError("half_width must be positive")
        self._geo = self._build_geometry()
        self._check_simple()

    def _build_geometry(self) -> TrackGeometry:
        pts = self.points
        nxt = np.roll(pts, -1, axis=0)
        dx = nxt[:, 0] - pts[:, 0]
        dy = nxt[:, 1] - pts[:, 1]
        seg_len = np.sqrt(dx * dx + dy * dy)
        if np.any(seg_len <= 0):
            raise ValueError("degenerate (zero-length) track segment")
        ux = dx / seg_len
        uy = dy / seg_len
        cum = np.concatenate([[0.0], np.cumsum(seg_len)])
        total = float(cum[-1])
        headings = np.arctan2(uy, ux)
        # curvature assigned to each segment from the turn at its start vertex
        prev_len = np.roll(seg_len, 1)
        turn_at_start = np.abs(_wrap_angle(headings - np.roll(headings, 1)))
        curv = turn_at_start / (0.5 * (seg_len + prev_len))
        return TrackGeometry(
            ax=pts[:, 0].copy(),
            ay=pts[:, 1].copy(),
            ux=ux,
            uy=uy,
            seg_len=seg_len,
            cum_len=cum[:-1].copy(),
            total_length=total,
            seg_curvature=curv,
        )

    def _check_simple(self):
        pts = self.points
        n = pts.shape[0]
        segs = [(pts[k], pts[(k + 1) % n]) for k in range(n)]
        for a in range(n):
            for b in range(a + 2, n):
                if a == 0 and b == n - 1:
                    continue  # adjacent through the wrap
                if _segments_intersect(segs[a][0], segs[a][1], segs[b][0], segs[b][1]):
                    raise ValueError(f"self-intersecting centerline (segments {a} and {b})")

    @property
    def total_length(self) -> float:
        return self._geo.total_length

    @property
    def geometry(self) -> TrackGeometry:
        return self._geo

    def wrap_arc(self, s: float) -> float:
        return float(s % self._geo.total_length)

    def _locate(self, s: float):
        s = self.wrap_arc(s)
        k = int(np.searchsorted(self._geo.cum_len, s, side="right") - 1)
        return k, s - self._geo.cum_len[k]

    def point_at(self, s: float) -> np.ndarray:
        k, t = self._locate(s)
        g = self._geo
        return np.array([g.ax[k] + g.ux[k] * t, g.ay[k] + g.uy[k] * t])

    def tangent_at(self, s: float) -> np.ndarray:
        k, _ = self._locate(s)
        return np.array([self._geo.ux[k], self._geo.uy[k]])

    def normal_at(self, s: float) -> np.ndarray:
        """Left-hand normal; positive lateral offsets are toward the inside on a CCW track."""
        k, _ = self._locate(s)
        return np.array([-self._geo.uy[k], self._geo.ux[k]])

    def heading_at(self, s: float) -> float:
        k, _ = self._locate(s)
        return float(math.atan2(self._geo.uy[k], self._geo.ux[k]))

    def nearest(self, x: float, y: float):
        """(distance, arc_length) of the centerline point closest to (x, y)."""
        d2, s = kernels.nearest_point(x, y, self._geo)
        return math.sqrt(d2), s

    def max_curvature(self, s0: float, window: float) -> float:
        """Largest centerline curvature over the arc window [s0, s0 + window]."""
        g = self._geo
        n = len(g.seg_len)
        k, t = self._locate(s0)
        best = float(g.seg_curvature[k])
        remaining = min(window, g.total_length) - (float(g.seg_len[k]) - t)
        while remaining > 0:
            k = (k + 1) % n
            if g.seg_curvature[k] > best:
                best = float(g.seg_curvature[k])
            remaining -= float(g.seg_len[k])
        return best


def _wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


def stadium_track(
    straight: float = 2.9,
    radius: float = 1.9,
    half_width: float = 0.45,
    spacing: float = 0.1,
    name: str = "stadium",
) -> Track:
    """Counterclockwise stadium: two straights joined by two U-shaped ends.

    Defaults give a 6.7 m x 3.8 m centerline bounding box.
    """
    pts = []
    n_straight = max(2, int(round(straight / spacing)))
    n_arc = max(8, int(round(math.pi * radius / spacing)))
    hx = straight / 2.0
    # bottom straight, left -> right
    for i in range(n_straight):
        pts.append((-hx + straight * i / n_straight, -radius))
    # right U-turn
    for i in range(n_arc):
        a = -math.pi / 2 + math.pi * i / n_arc
        pts.append((hx + radius * math.cos(a), radius * math.sin(a)))
    # top straight, right -> left
    for i in range(n_straight):
        pts.append((hx - straight * i / n_straight, radius))
    # left U-turn
    for i in range(n_arc):
        a = math.pi / 2 + math.pi * i / n_arc
        pts.append((-hx + radius * math.cos(a), radius * math.sin(a)))
    return Track(np.array(pts), half_width, name=name)


def default_track() -> Track:
    return stadium_track()


def save_track(track: Track, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(TRACK_MAGIC + "\n")
        f.write(f"half_width {float(track.half_width)!r}\n")
        for x, y in track.points:
            f.write(f"{float(x)!r} {float(y)!r}\n")


def load_track(path) -> Track:
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines or lines[0] != TRACK_MAGIC:
        raise ValueError(f"not a track file (expected header {TRACK_MAGIC!r})")
    if not lines[1].startswith("half_width "):
        raise ValueError("missing half_width line")
    half_width = float(lines[1].split()[1])
    pts = [tuple(float(v) for v in ln.split()) for ln in lines[2:]]
    return Track(np.array(pts), half_width, name="file")
