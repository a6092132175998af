"""Shared fixtures: a tiny config profile and small synthetic datasets."""

import numpy as np
import pytest
import torch

from dirl.config import RunConfig, apply_overrides
from dirl.sim.core import Action
from dirl.store import EpisodeRecord, EpisodeStore, Frame, back_label_collisions

torch.set_num_threads(1)

TINY_OVERRIDES = {
    "sim.image_size": "32",
    "world_model.hidden_dim": "32",
    "world_model.conv_channels": "8,16,16,32",
    "world_model.image_feature_dim": "32",
    "world_model.speed_feature_dim": "8",
    "world_model.action_feature_dim": "8",
    "world_model.batch_size": "8",
    "world_model.batches_per_epoch": "4",
    "world_model.max_epochs": "2",
    "policy.conv_channels": "8,16,16,32",
    "policy.hidden_dim": "32",
    "policy.image_feature_dim": "32",
    "policy.speed_feature_dim": "8",
    "policy.il_batch_size": "16",
    "policy.il_batches_per_epoch": "4",
    "policy.il_max_epochs": "2",
    "policy.refine_batch_size": "4",
    "policy.refine_batches_per_epoch": "2",
    "policy.refine_max_epochs": "1",
    "dirl.max_steps": "60",
    "dirl.expert_episodes": "3",
    "dirl.eval_trials": "1",
    "dirl.eval_laps": "1",
    "dirl.eval_step_cap": "80",
    "dirl.iterations": "1",
}


@pytest.fixture(scope="session")
def tiny_cfg() -> RunConfig:
    return apply_overrides(RunConfig(), dict(TINY_OVERRIDES))


# Smallest profile that still exercises every pipeline stage; used where only
# plumbing is under test.
MICRO_OVERRIDES = {
    "sim.image_size": "32",
    "world_model.horizon": "4",
    "world_model.hidden_dim": "16",
    "world_model.conv_channels": "4,8,8,16",
    "world_model.image_feature_dim": "16",
    "world_model.speed_feature_dim": "4",
    "world_model.action_feature_dim": "4",
    "world_model.batch_size": "4",
    "world_model.batches_per_epoch": "2",
    "world_model.max_epochs": "1",
    "policy.horizon": "4",
    "policy.hidden_dim": "16",
    "policy.conv_channels": "4,8,8,16",
    "policy.image_feature_dim": "16",
    "policy.speed_feature_dim": "4",
    "policy.il_batch_size": "8",
    "policy.il_batches_per_epoch": "2",
    "policy.il_max_epochs": "1",
    "policy.refine_batch_size": "2",
    "policy.refine_batches_per_epoch": "1",
    "policy.refine_max_epochs": "1",
    "dirl.expert_episodes": "2",
    "dirl.episodes_per_iteration": "1",
    "dirl.max_steps": "40",
    "dirl.iterations": "1",
    "dirl.eval_trials": "1",
    "dirl.eval_laps": "1",
    "dirl.eval_step_cap": "60",
}


def micro_cfg(**extra: str) -> RunConfig:
    return apply_overrides(RunConfig(), {**MICRO_OVERRIDES, **extra})


def synthetic_frame(rng: np.random.Generator, size: int, collision: int = 0,
                    with_expert: bool = True) -> Frame:
    img = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
    a = Action(float(rng.uniform(-1, 1)), float(rng.uniform(0, 1)))
    a_star = Action(float(rng.uniform(-1, 1)), float(rng.uniform(0, 1))) if with_expert else None
    return Frame(
        image=img,
        speed=float(rng.uniform(0, 2)),
        action=a,
        expert_action=a_star,
        collision=collision,
    )


def synthetic_episode(rng: np.random.Generator, n_frames: int, dt: float = 0.1,
                      size: int = 8, collision: bool = False, episode_id: str = "ep",
                      source: str = "expert", with_expert: bool = True) -> EpisodeRecord:
    frames = [synthetic_frame(rng, size, with_expert=with_expert) for _ in range(n_frames)]
    if collision:
        frames[-1] = synthetic_frame(rng, size, collision=1, with_expert=with_expert)
    rec = EpisodeRecord(
        id=episode_id, source=source, dt=dt,
        frames=tuple(frames), ended_in_collision=collision,
    )
    return back_label_collisions(rec) if collision else rec


@pytest.fixture
def synth_store(tmp_path) -> EpisodeStore:
    """Disk store with 2 clean expert episodes and 1 collision episode."""
    rng = np.random.default_rng(7)
    store = EpisodeStore(tmp_path / "data")
    store.append_episode(synthetic_episode(rng, 30, size=8, episode_id="a"))
    store.append_episode(synthetic_episode(rng, 25, size=8, episode_id="b", collision=True))
    store.append_episode(synthetic_episode(rng, 20, size=8, episode_id="c"))
    return store
