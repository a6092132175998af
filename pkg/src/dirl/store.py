"""Episode dataset: on-disk binary episodes, collision back-labeling, and the
two sampling modes used for training (contiguous windows and filtered frames)."""

import json
import math
import os
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import InsufficientDataError
from .sim.core import Action

EPISODE_MAGIC = b"DIRLEP01"

SOURCE_EXPERT = "expert"
SOURCE_POLICY = "policy"


@dataclass(frozen=True)
class Frame:
    image: np.ndarray  # (h, w, 3) uint8
    speed: float
    action: Action  # executed action
    expert_action: Optional[Action]  # absent for policy-collected data
    collision: int  # 0 or 1

    def __post_init__(self):
        if self.image.dtype != np.uint8 or self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError("frame image must be (h, w, 3) uint8")
        if self.collision not in (0, 1):
            raise ValueError("collision label must be 0 or 1")


@dataclass(frozen=True)
class EpisodeRecord:
    id: str
    source: str  # "expert" or "policy"
    dt: float
    frames: Tuple[Frame, ...]
    ended_in_collision: bool

    def __post_init__(self):
        if self.source not in (SOURCE_EXPERT, SOURCE_POLICY):
            raise ValueError(f"unknown episode source {self.source!r}")
        if not self.frames:
            raise ValueError("episode must contain at least one frame")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.ended_in_collision and self.frames[-1].collision != 1:
            raise ValueError("collision episode must end with a c=1 frame")

    def __len__(self) -> int:
        return len(self.frames)


def collision_label_count(dt: float) -> int:
    """Number of trailing frames marked c=1, covering the final 0.5 s of a
    collision episode including the impact frame (5 at 10 Hz)."""
    return int(math.floor(0.5 / dt + 0.5))


def back_label_collisions(episode: EpisodeRecord) -> EpisodeRecord:
    """Mark the trailing min(k, T) frames of a collision episode with c=1."""
    if not episode.ended_in_collision:
        raise ValueError("back-labeling applies only to collision episodes")
    k = min(collision_label_count(episode.dt), len(episode.frames))
    start = len(episode.frames) - k
    frames = tuple(
        replace(f, collision=1 if i >= start else 0) for i, f in enumerate(episode.frames)
    )
    return replace(episode, frames=frames)


def _pack_action(a: Action) -> bytes:
    return struct.pack("<2f", a.steering, a.throttle)


def write_episode(path, episode: EpisodeRecord) -> None:
    h, w = episode.frames[0].image.shape[:2]
    meta = {
        "id": episode.id,
        "source": episode.source,
        "dt": episode.dt,
        "width": w,
        "height": h,
        "n_frames": len(episode.frames),
        "ended_in_collision": episode.ended_in_collision,
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as f:
        f.write(EPISODE_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for fr in episode.frames:
            if fr.image.shape[:2] != (h, w):
                raise ValueError("all frames in an episode must share image shape")
            f.write(np.ascontiguousarray(fr.image).tobytes())
            f.write(struct.pack("<f", fr.speed))
            f.write(_pack_action(fr.action))
            if fr.expert_action is None:
                f.write(b"\x00" + struct.pack("<2f", 0.0, 0.0))
            else:
                f.write(b"\x01" + _pack_action(fr.expert_action))
            f.write(bytes([fr.collision]))
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def read_episode(path) -> EpisodeRecord:
    with open(path, "rb") as f:
        magic = f.read(len(EPISODE_MAGIC))
        if magic != EPISODE_MAGIC:
            raise ValueError(f"{path}: bad episode magic {magic!r}")
        (blob_len,) = struct.unpack("<I", f.read(4))
        meta = json.loads(f.read(blob_len).decode("utf-8"))
        h, w = meta["height"], meta["width"]
        img_bytes = h * w * 3
        frames = []
        for _ in range(meta["n_frames"]):
            img = np.frombuffer(f.read(img_bytes), dtype=np.uint8).reshape(h, w, 3).copy()
            (speed,) = struct.unpack("<f", f.read(4))
            a = Action(*struct.unpack("<2f", f.read(8)))
            present = f.read(1)[0]
            vals = struct.unpack("<2f", f.read(8))
            a_star = Action(*vals) if present else None
            c = f.read(1)[0]
            frames.append(
                Frame(image=img, speed=speed, action=a, expert_action=a_star, collision=c)
            )
    return EpisodeRecord(
        id=meta["id"],
        source=meta["source"],
        dt=meta["dt"],
        frames=tuple(frames),
        ended_in_collision=meta["ended_in_collision"],
    )


class EpisodeStore:
    """Directory of episode files plus a JSON manifest; episodes stay resident
    in memory for sampling. Single writer, any number of readers after flush.

    root=None gives a memory-only store (used for derived datasets that never
    need to outlive the process)."""

    MANIFEST = "manifest.json"

    def __init__(self, root=None):
        self.root = Path(root) if root is not None else None
        self.episodes: List[EpisodeRecord] = []
        if self.root is None:
            return
        self.root.mkdir(parents=True, exist_ok=True)
        manifest = self.root / self.MANIFEST
        if manifest.exists():
            names = json.loads(manifest.read_text())["episodes"]
            for name in names:
                self.episodes.append(read_episode(self.root / name))

    def _write_manifest(self) -> None:
        names = [f"{ep.id}.ep" for ep in self.episodes]
        tmp = self.root / (self.MANIFEST + ".tmp")
        tmp.write_text(json.dumps({"episodes": names}, sort_keys=True, indent=1))
        os.replace(tmp, self.root / self.MANIFEST)

    def append_episode(self, episode: EpisodeRecord) -> None:
        labels = [f.collision for f in episode.frames]
        if episode.ended_in_collision:
            k = min(collision_label_count(episode.dt), len(episode.frames))
            expect = [0] * (len(labels) - k) + [1] * k
            if labels != expect:
                raise ValueError("collision episode must be back-labeled before append")
        elif any(labels):
            raise ValueError("non-collision episode carries c=1 frames")
        if any(ep.id == episode.id for ep in self.episodes):
            raise ValueError(f"duplicate episode id {episode.id!r}")
        if self.root is not None:
            write_episode(self.root / f"{episode.id}.ep", episode)
        self.episodes.append(episode)
        if self.root is not None:
            self._write_manifest()

    @property
    def n_episodes(self) -> int:
        return len(self.episodes)

    @property
    def n_frames(self) -> int:
        return sum(len(ep) for ep in self.episodes)

    @property
    def collision_frame_count(self) -> int:
        return sum(f.collision for ep in self.episodes for f in ep.frames)

    def sequence_starts(self, length: int) -> List[Tuple[int, int]]:
        """All (episode_index, start) pairs admitting a contiguous window."""
        starts = []
        for i, ep in enumerate(self.episodes):
            for t in range(len(ep) - length + 1):
                starts.append((i, t))
        return starts

    def sample_sequences(
        self, n: int, length: int, rng: np.random.Generator
    ) -> List[Sequence[Frame]]:
        """n contiguous within-episode windows, uniform over all valid starts."""
        starts = self.sequence_starts(length)
        if not starts:
            raise InsufficientDataError(
                f"no episode admits a window of length {length}"
            )
        picks = rng.integers(len(starts), size=n)
        out = []
        for p in picks:
            i, t = starts[p]
            out.append(self.episodes[i].frames[t : t + length])
        return out

    def frame_anchors(
        self, collision_free_expert_only: bool, horizon: int = 1
    ) -> List[Tuple[int, int]]:
        """(episode_index, t) pairs eligible under the sampling filter.

        With the filter on, an anchor needs `horizon` consecutive frames, all
        collision-free with expert actions recorded, from an expert episode."""
        anchors = []
        for i, ep in enumerate(self.episodes):
            if collision_free_expert_only and ep.source != SOURCE_EXPERT:
                continue
            for t in range(len(ep)):
                if not collision_free_expert_only:
                    anchors.append((i, t))
                    continue
                if t + horizon > len(ep):
                    continue
                window = ep.frames[t : t + horizon]
                if all(f.collision == 0 and f.expert_action is not None for f in window):
                    anchors.append((i, t))
        return anchors

    def sample_frames(
        self,
        n: int,
        rng: np.random.Generator,
        collision_free_expert_only: bool = False,
        horizon: int = 1,
    ) -> List[Frame]:
        anchors = self.frame_anchors(collision_free_expert_only, horizon)
        if not anchors:
            raise InsufficientDataError("no frame satisfies the sampling filter")
        picks = rng.integers(len(anchors), size=n)
        return [self.episodes[anchors[p][0]].frames[anchors[p][1]] for p in picks]

    def sample_il_batch(
        self, n: int, horizon: int, rng: np.random.Generator
    ) -> Tuple[List[Frame], np.ndarray]:
        """Anchor frames plus their next `horizon` expert actions as targets,
        drawn under the collision-free expert filter. Targets are (n, horizon, 2)."""
        anchors = self.frame_anchors(True, horizon)
        if not anchors:
            raise InsufficientDataError("no frame satisfies the sampling filter")
        picks = rng.integers(len(anchors), size=n)
        frames = []
        targets = np.empty((n, horizon, 2), dtype=np.float32)
        for row, p in enumerate(picks):
            i, t = anchors[p]
            ep = self.episodes[i]
            frames.append(ep.frames[t])
            for j in range(horizon):
                a = ep.frames[t + j].expert_action
                targets[row, j, 0] = a.steering
                targets[row, j, 1] = a.throttle
        return frames, targets
