"""Gaussian action-sequence policy: imitation pre-training and offline
refinement through imagined world-model rollouts."""

import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import seeding
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import InsufficientDataError
from .sim.core import Action
from .world_model import ConvEncoder, WorldModel, observation_tensors


@dataclass(frozen=True)
class PolicyConfig:
    horizon: int = 10
    image_size: int = 48
    image_feature_dim: int = 128
    speed_feature_dim: int = 32
    hidden_dim: int = 128
    conv_channels: Tuple[int, ...] = (16, 32, 64, 128)
    sigma_floor: float = 1e-3
    il_learning_rate: float = 1e-3
    il_batch_size: int = 128
    il_batches_per_epoch: int = 40
    il_max_epochs: int = 60
    refine_learning_rate: float = 1e-5
    refine_batch_size: int = 36
    refine_batches_per_epoch: int = 25
    refine_max_epochs: int = 12
    plateau_patience: int = 5
    plateau_rel_tol: float = 0.01
    w_speed: float = 1.0
    w_collision: float = 50.0
    w_uncertainty: float = 1.0
    v_max: float = 2.0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.image_size % 16 != 0:
            raise ValueError("image_size must be divisible by 16")
        if self.sigma_floor <= 0:
            raise ValueError("sigma_floor must be positive")
        for name in ("il_learning_rate", "refine_learning_rate", "v_max"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("w_speed", "w_collision", "w_uncertainty"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass
class PolicyOutput:
    """Pre-squash means and positive standard deviations, both (..., H, 2)."""

    mu: torch.Tensor
    sigma: torch.Tensor


class PolicyNet(nn.Module):
    """Image + speed encoders feeding dense layers that emit an H-step
    Gaussian action plan. Encoders are separate from the world model's."""

    def __init__(self, config: PolicyConfig):
        super().__init__()
        self.config = config
        c = config
        self.image_encoder = ConvEncoder(c.image_size, c.conv_channels, c.image_feature_dim)
        self.speed_encoder = nn.Sequential(
            nn.Linear(1, c.speed_feature_dim),
            nn.ReLU(),
            nn.Linear(c.speed_feature_dim, c.speed_feature_dim),
        )
        self.trunk = nn.Sequential(
            nn.Linear(c.image_feature_dim + c.speed_feature_dim, c.hidden_dim),
            nn.ReLU(),
            nn.Linear(c.hidden_dim, c.hidden_dim),
            nn.ReLU(),
        )
        self.mu_head = nn.Linear(c.hidden_dim, c.horizon * 2)
        self.sigma_head = nn.Linear(c.hidden_dim, c.horizon * 2)

    def forward(self, images: torch.Tensor, speeds: torch.Tensor) -> PolicyOutput:
        c = self.config
        s = c.image_size
        if images.shape[-3:] != (3, s, s):
            raise ValueError(f"expected images shaped (..., 3, {s}, {s}), got {tuple(images.shape)}")
        feat = torch.cat(
            [self.image_encoder(images), self.speed_encoder(speeds.unsqueeze(-1))], dim=-1
        )
        h = self.trunk(feat)
        b = images.shape[0]
        mu = self.mu_head(h).view(b, c.horizon, 2)
        sigma = F.softplus(self.sigma_head(h)).view(b, c.horizon, 2) + c.sigma_floor
        return PolicyOutput(mu=mu, sigma=sigma)


def squash_actions(pre: torch.Tensor) -> torch.Tensor:
    """Map unconstrained (..., 2) pre-actions into [-1,1] steering x [0,1] throttle."""
    return torch.stack([torch.tanh(pre[..., 0]), torch.sigmoid(pre[..., 1])], dim=-1)


def policy_forward(model: PolicyNet, obs) -> PolicyOutput:
    img, speed = observation_tensors(obs)
    with torch.no_grad():
        out = model(img, speed)
    return PolicyOutput(mu=out.mu.squeeze(0), sigma=out.sigma.squeeze(0))


def sample_actions(out: PolicyOutput, eps: torch.Tensor) -> torch.Tensor:
    """Reparametrized draw squash(mu + sigma * eps); differentiable in mu, sigma."""
    return squash_actions(out.mu + out.sigma * eps)


def act(model: PolicyNet, obs) -> Action:
    """Deployment action: squashed mean of the first planned step."""
    out = policy_forward(model, obs)
    a = squash_actions(out.mu[0])
    return Action(steering=float(a[0]), throttle=float(a[1]))


def il_loss(out: PolicyOutput, expert_actions: torch.Tensor) -> torch.Tensor:
    """Mean absolute error between squashed means and expert actions."""
    return torch.abs(squash_actions(out.mu) - expert_actions).mean()


def _check_pairing(policy: PolicyNet, world_model: WorldModel) -> None:
    if policy.config.horizon != world_model.config.horizon:
        raise ValueError(
            f"policy horizon {policy.config.horizon} != world model horizon "
            f"{world_model.config.horizon}"
        )
    if policy.config.image_size != world_model.config.image_size:
        raise ValueError("policy and world model disagree on image size")


def refinement_loss_terms(
    policy: PolicyNet,
    world_model: WorldModel,
    images: torch.Tensor,
    speeds: torch.Tensor,
    eps: torch.Tensor,
    config: PolicyConfig,
) -> Dict[str, torch.Tensor]:
    """Batch-mean imagined costs: speed (negated, v_max-normalized), collision
    risk, and total evidential uncertainty, each summed over the horizon."""
    _check_pairing(policy, world_model)
    out = policy(images, speeds)
    actions = sample_actions(out, eps)
    pred = world_model(images, speeds, actions)
    j_speed = (-pred.speed_means() / config.v_max).sum(dim=-1).mean()
    j_coll = pred.collision_risk().sum(dim=-1).mean()
    j_unc = (
        (
            pred.image_uncertainty()
            + pred.speed_uncertainty()
            + pred.collision_uncertainty()
        )
        .sum(dim=-1)
        .mean()
    )
    return {"speed": j_speed, "collision": j_coll, "uncertainty": j_unc}


def refinement_loss(
    policy: PolicyNet,
    world_model: WorldModel,
    images: torch.Tensor,
    speeds: torch.Tensor,
    eps: torch.Tensor,
    config: PolicyConfig,
) -> torch.Tensor:
    terms = refinement_loss_terms(policy, world_model, images, speeds, eps, config)
    return (
        config.w_speed * terms["speed"]
        + config.w_collision * terms["collision"]
        + config.w_uncertainty * terms["uncertainty"]
    )


def _frame_tensors(frames) -> Tuple[torch.Tensor, torch.Tensor]:
    images = (
        torch.from_numpy(np.stack([f.image for f in frames]))
        .to(torch.float32)
        .div_(255.0)
        .permute(0, 3, 1, 2)
    )
    speeds = torch.tensor([f.speed for f in frames], dtype=torch.float32)
    return images, speeds


def train_policy_il(
    store,
    config: PolicyConfig,
    seed: int = 0,
    progress: Optional[callable] = None,
) -> Tuple[PolicyNet, List[dict]]:
    """L1 imitation on collision-free expert anchors until holdout plateau."""
    rng = seeding.rng_for(seed, seeding.POLICY_IL)
    torch.manual_seed(seeding.derive_seed(seed, seeding.POLICY_IL))
    h = config.horizon
    anchors = store.frame_anchors(True, h)
    if not anchors:
        raise InsufficientDataError("no collision-free expert anchors available")

    idx = rng.permutation(len(anchors))
    n_hold = max(1, int(0.1 * len(anchors)))
    hold_idx = idx[:n_hold][: 2 * config.il_batch_size]
    train_idx = idx[n_hold:]
    if len(train_idx) == 0:
        raise InsufficientDataError("not enough anchors for a train/holdout split")

    def gather(indices) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        frames = []
        targets = np.empty((len(indices), h, 2), dtype=np.float32)
        for row, a_i in enumerate(indices):
            ep_i, t = anchors[a_i]
            ep = store.episodes[ep_i]
            frames.append(ep.frames[t])
            for j in range(h):
                a = ep.frames[t + j].expert_action
                targets[row, j, 0] = a.steering
                targets[row, j, 1] = a.throttle
        images, speeds = _frame_tensors(frames)
        return images, speeds, torch.from_numpy(targets)

    hold_tensors = gather(hold_idx)
    model = PolicyNet(config)
    opt = torch.optim.Adam(model.parameters(), lr=config.il_learning_rate)
    history: List[dict] = []
    best = math.inf
    stale = 0
    for epoch in range(config.il_max_epochs):
        model.train()
        total = 0.0
        for _ in range(config.il_batches_per_epoch):
            picks = train_idx[rng.integers(len(train_idx), size=config.il_batch_size)]
            images, speeds, targets = gather(picks)
            loss = il_loss(model(images, speeds), targets)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach())
        model.eval()
        with torch.no_grad():
            h_loss = float(il_loss(model(hold_tensors[0], hold_tensors[1]), hold_tensors[2]))
        history.append(
            {
                "epoch": epoch,
                "train_loss": total / config.il_batches_per_epoch,
                "holdout_loss": h_loss,
            }
        )
        if progress is not None:
            progress(history[-1])
        if math.isinf(best) or h_loss < best - config.plateau_rel_tol * max(abs(best), 1e-8):
            best = h_loss
            stale = 0
        else:
            stale += 1
            if stale >= config.plateau_patience:
                break
    model.eval()
    return model, history


def refine_policy(
    policy: PolicyNet,
    world_model: WorldModel,
    store,
    config: PolicyConfig,
    seed: int = 0,
    progress: Optional[callable] = None,
) -> Tuple[PolicyNet, List[dict]]:
    """Descend the imagined-rollout cost with world-model parameters frozen.

    Entirely offline: only stored observations are touched, never the
    simulator. Plateau is judged on a frozen evaluation batch with fixed
    exploration noise.
    """
    _check_pairing(policy, world_model)
    rng = seeding.rng_for(seed, seeding.POLICY_REFINE)
    torch_seed = seeding.derive_seed(seed, seeding.POLICY_REFINE)
    torch.manual_seed(torch_seed)
    gen = torch.Generator().manual_seed(torch_seed)

    anchors = store.frame_anchors(False, 1)
    if not anchors:
        raise InsufficientDataError("store holds no frames to refine on")

    frozen = []
    for p in world_model.parameters():
        frozen.append((p, p.requires_grad))
        p.requires_grad_(False)
    world_model.eval()

    h = config.horizon

    def batch(indices):
        frames = [store.episodes[anchors[i][0]].frames[anchors[i][1]] for i in indices]
        return _frame_tensors(frames)

    eval_idx = rng.choice(len(anchors), size=min(len(anchors), config.refine_batch_size), replace=False)
    eval_images, eval_speeds = batch(eval_idx)
    eval_eps = torch.randn(len(eval_idx), h, 2, generator=gen)

    opt = torch.optim.Adam(policy.parameters(), lr=config.refine_learning_rate)
    history: List[dict] = []
    best = math.inf
    stale = 0
    try:
        for epoch in range(config.refine_max_epochs):
            policy.train()
            total = 0.0
            for _ in range(config.refine_batches_per_epoch):
                picks = rng.integers(len(anchors), size=config.refine_batch_size)
                images, speeds = batch(picks)
                eps = torch.randn(len(picks), h, 2, generator=gen)
                loss = refinement_loss(policy, world_model, images, speeds, eps, config)
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += float(loss.detach())
            policy.eval()
            with torch.no_grad():
                e_loss = float(
                    refinement_loss(policy, world_model, eval_images, eval_speeds, eval_eps, config)
                )
            history.append(
                {
                    "epoch": epoch,
                    "train_loss": total / config.refine_batches_per_epoch,
                    "eval_loss": e_loss,
                }
            )
            if progress is not None:
                progress(history[-1])
            rel_floor = max(abs(best), 1e-8)
            if math.isinf(best) or e_loss < best - config.plateau_rel_tol * rel_floor:
                best = e_loss
                stale = 0
            else:
                stale += 1
                if stale >= config.plateau_patience:
                    break
    finally:
        for p, flag in frozen:
            p.requires_grad_(flag)
    policy.eval()
    return policy, history


def save_policy(path, model: PolicyNet, meta: Optional[dict] = None) -> None:
    tensors = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    cfg = asdict(model.config)
    cfg["conv_channels"] = list(model.config.conv_channels)
    if meta:
        cfg["meta"] = meta
    save_checkpoint(path, "policy", cfg, tensors)


def load_policy(path) -> PolicyNet:
    kind, cfg, tensors = load_checkpoint(path)
    if kind != "policy":
        raise ValueError(f"checkpoint holds a {kind!r}, not a policy")
    cfg.pop("meta", None)
    cfg["conv_channels"] = tuple(cfg["conv_channels"])
    model = PolicyNet(PolicyConfig(**cfg))
    model.load_state_dict({k: torch.from_numpy(v) for k, v in tensors.items()})
    model.eval()
    return model
