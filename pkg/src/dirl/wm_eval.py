"""Held-out quality metrics for a trained world model.

Scores the same windows the trainer held out of gradient updates: one-step
speed error against the persistence baseline (predict the current speed), and
recall of collisions anywhere inside the prediction horizon.
"""

from typing import Optional

import torch

from .world_model import WorldModel, _window_tensors, holdout_split


def wm_quality(
    model: WorldModel,
    store,
    threshold: float = 0.5,
    batch_size: int = 64,
    windows: Optional[list] = None,
) -> dict:
    """Metrics over held-out windows (or an explicit window list).

    A window is collision-positive when any of its target frames carries a
    collision label; the model flags it when the predicted risk anywhere in
    the horizon reaches `threshold`."""
    cfg = model.config
    if windows is None:
        all_windows = store.sequence_starts(cfg.horizon + 1)
        _, windows = holdout_split(all_windows, store.n_episodes, cfg.holdout_fraction)
    if not windows:
        raise ValueError("no held-out windows to score")

    model.eval()
    abs_err = baseline_err = 0.0
    true_pos = positives = flagged = 0
    with torch.no_grad():
        for i in range(0, len(windows), batch_size):
            chunk = windows[i : i + batch_size]
            images, speeds, actions, _, t_speeds, t_colls = _window_tensors(
                store.episodes, chunk, cfg.horizon
            )
            pred = model(images, speeds, actions)
            abs_err += float((pred.speed_means()[:, 0] - t_speeds[:, 0]).abs().sum())
            baseline_err += float((speeds - t_speeds[:, 0]).abs().sum())
            window_risk = pred.collision_risk().max(dim=1).values
            is_pos = (t_colls == 1).any(dim=1)
            is_flagged = window_risk >= threshold
            true_pos += int((is_pos & is_flagged).sum())
            positives += int(is_pos.sum())
            flagged += int(is_flagged.sum())
    n = len(windows)
    return {
        "windows": n,
        "positive_windows": positives,
        "flagged_windows": flagged,
        "one_step_speed_mae": abs_err / n,
        "baseline_speed_mae": baseline_err / n,
        "collision_recall": (true_pos / positives) if positives else float("nan"),
    }
