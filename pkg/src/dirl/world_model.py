"""Action-conditioned evidential world model.

One observation seeds a three-layer recurrent core that is driven purely by
embedded future actions; the three layers decode, respectively, per-pixel image
NIG maps, a speed NIG, and collision evidence for each predicted step.
"""

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import seeding
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import InsufficientDataError
from .evidential import (
    NIGParams,
    evidence_activation,
    evidential_class_loss,
    evidential_class_output,
    nig_activation,
    nig_loss,
    nig_uncertainty,
)


@dataclass(frozen=True)
class WorldModelConfig:
    horizon: int = 10
    image_size: int = 48
    image_feature_dim: int = 128
    speed_feature_dim: int = 32
    action_feature_dim: int = 32
    hidden_dim: int = 128
    recurrent_layers: int = 3
    conv_channels: Tuple[int, ...] = (16, 32, 64, 128)
    w_image: float = 1.0
    w_speed: float = 1.0
    w_collision: float = 1.0
    evidential_lambda: float = 0.01
    learning_rate: float = 5e-4
    batch_size: int = 32
    batches_per_epoch: int = 100
    max_epochs: int = 60
    plateau_patience: int = 5
    plateau_rel_tol: float = 0.01
    holdout_fraction: float = 0.1
    # fraction of each batch drawn from collision-labeled windows; collision
    # frames are ~1% of the data, far too rare for uniform sampling to teach
    # the risk head anything
    collision_window_fraction: float = 0.25

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not 0.0 <= self.collision_window_fraction < 1.0:
            raise ValueError("collision_window_fraction must be in [0, 1)")
        if self.recurrent_layers != 3:
            raise ValueError(
                "exactly 3 recurrent layers: they feed the image, speed and "
                "collision heads in order"
            )
        if self.image_size % 16 != 0:
            raise ValueError("image_size must be divisible by 16 (4 downsampling stages)")
        if len(self.conv_channels) != 4:
            raise ValueError("conv_channels must list 4 stage widths")
        for name in ("image_feature_dim", "speed_feature_dim", "action_feature_dim", "hidden_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("w_image", "w_speed", "w_collision", "evidential_lambda"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


class ResidualBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        if stride != 1 or c_in != c_out:
            self.skip = nn.Conv2d(c_in, c_out, 1, stride=stride)
        else:
            self.skip = nn.Identity()

    def forward(self, x):
        h = F.relu(self.conv1(x))
        h = self.conv2(h)
        return F.relu(h + self.skip(x))


class ConvEncoder(nn.Module):
    """Four stride-2 residual blocks, then a dense projection."""

    def __init__(self, image_size: int, channels: Tuple[int, ...], out_dim: int):
        super().__init__()
        self.stem = nn.Conv2d(3, channels[0], 3, padding=1)
        blocks = []
        c_prev = channels[0]
        for c in channels:
            blocks.append(ResidualBlock(c_prev, c, stride=2))
            c_prev = c
        self.blocks = nn.Sequential(*blocks)
        spatial = image_size // 16
        self.proj = nn.Linear(channels[-1] * spatial * spatial, out_dim)

    def forward(self, images):
        h = F.relu(self.stem(images))
        h = self.blocks(h)
        return self.proj(h.flatten(1))


class ImageDecoder(nn.Module):
    """Dense seed then four (nearest-upsample, conv) stages back to full
    resolution, emitting 4 NIG parameter maps per color channel."""

    def __init__(self, hidden_dim: int, image_size: int, channels: Tuple[int, ...]):
        super().__init__()
        self.base = image_size // 16
        rev = list(reversed(channels))
        self.seed = nn.Linear(hidden_dim, rev[0] * self.base * self.base)
        self.c0 = rev[0]
        convs = []
        c_prev = rev[0]
        for c in rev[1:] + [rev[-1]]:
            convs.append(nn.Conv2d(c_prev, c, 3, padding=1))
            c_prev = c
        self.convs = nn.ModuleList(convs)
        self.head = nn.Conv2d(c_prev, 12, 3, padding=1)

    def forward(self, h):
        x = F.relu(self.seed(h)).view(-1, self.c0, self.base, self.base)
        for conv in self.convs:
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = F.relu(conv(x))
        return self.head(x)


@dataclass
class RolloutPrediction:
    """Evidential predictions for steps t+1..t+H; leading dims are batch."""

    image_params: NIGParams  # tensors (..., H, 3, S, S)
    speed_params: NIGParams  # tensors (..., H)
    collision_evidence: torch.Tensor  # (..., H, 2); class 1 = collision

    @property
    def horizon(self) -> int:
        return self.collision_evidence.shape[-2]

    def mean_images(self) -> torch.Tensor:
        return self.image_params.gamma

    def speed_means(self) -> torch.Tensor:
        return self.speed_params.gamma

    def collision_risk(self) -> torch.Tensor:
        probs, _ = evidential_class_output(self.collision_evidence)
        return probs[..., 1]

    def image_uncertainty(self) -> torch.Tensor:
        u = nig_uncertainty(self.image_params)
        return u.mean(dim=(-3, -2, -1))

    def speed_uncertainty(self) -> torch.Tensor:
        return nig_uncertainty(self.speed_params)

    def collision_uncertainty(self) -> torch.Tensor:
        _, u_c = evidential_class_output(self.collision_evidence)
        return u_c


class WorldModel(nn.Module):
    def __init__(self, config: WorldModelConfig):
        super().__init__()
        self.config = config
        c = config
        self.image_encoder = ConvEncoder(c.image_size, c.conv_channels, c.image_feature_dim)
        self.speed_encoder = nn.Sequential(
            nn.Linear(1, c.speed_feature_dim),
            nn.ReLU(),
            nn.Linear(c.speed_feature_dim, c.speed_feature_dim),
        )
        self.h0_proj = nn.Linear(c.image_feature_dim + c.speed_feature_dim, 3 * c.hidden_dim)
        self.action_embed = nn.Sequential(
            nn.Linear(2, c.action_feature_dim),
            nn.ReLU(),
            nn.Linear(c.action_feature_dim, c.action_feature_dim),
        )
        self.gru1 = nn.GRUCell(c.action_feature_dim, c.hidden_dim)
        self.gru2 = nn.GRUCell(c.hidden_dim, c.hidden_dim)
        self.gru3 = nn.GRUCell(c.hidden_dim, c.hidden_dim)
        self.image_decoder = ImageDecoder(c.hidden_dim, c.image_size, c.conv_channels)
        self.speed_head = nn.Sequential(
            nn.Linear(c.hidden_dim, 64), nn.ReLU(), nn.Linear(64, 4)
        )
        self.collision_head = nn.Sequential(
            nn.Linear(c.hidden_dim, 64), nn.ReLU(), nn.Linear(64, 2)
        )

    def encode(self, images: torch.Tensor, speeds: torch.Tensor) -> torch.Tensor:
        """Concatenated image and speed features; image part first."""
        s = self.config.image_size
        if images.shape[-3:] != (3, s, s):
            raise ValueError(f"expected images shaped (..., 3, {s}, {s}), got {tuple(images.shape)}")
        f_i = self.image_encoder(images)
        f_s = self.speed_encoder(speeds.unsqueeze(-1))
        return torch.cat([f_i, f_s], dim=-1)

    def forward(self, images: torch.Tensor, speeds: torch.Tensor, actions: torch.Tensor) -> RolloutPrediction:
        """Roll the recurrent core over an action sequence.

        images (B, 3, S, S) in [0, 1]; speeds (B,); actions (B, H, 2).
        """
        c = self.config
        if actions.ndim != 3 or actions.shape[-1] != 2:
            raise ValueError("actions must be (batch, horizon, 2)")
        if actions.shape[1] != c.horizon:
            raise ValueError(f"action sequence length {actions.shape[1]} != horizon {c.horizon}")
        b = images.shape[0]
        h0 = self.h0_proj(self.encode(images, speeds)).view(b, 3, c.hidden_dim)
        h1, h2, h3 = h0[:, 0], h0[:, 1], h0[:, 2]
        a_feat = self.action_embed(actions)
        h1s: List[torch.Tensor] = []
        h2s: List[torch.Tensor] = []
        h3s: List[torch.Tensor] = []
        for t in range(c.horizon):
            h1 = self.gru1(a_feat[:, t], h1)
            h2 = self.gru2(h1, h2)
            h3 = self.gru3(h2, h3)
            h1s.append(h1)
            h2s.append(h2)
            h3s.append(h3)
        hs1 = torch.stack(h1s, dim=1)  # (B, H, hidden)
        hs2 = torch.stack(h2s, dim=1)
        hs3 = torch.stack(h3s, dim=1)

        s = c.image_size
        img_raw = self.image_decoder(hs1.reshape(b * c.horizon, c.hidden_dim))
        img_raw = img_raw.view(b, c.horizon, 4, 3, s, s)
        image_params = nig_activation(img_raw, dim=2)
        speed_params = nig_activation(self.speed_head(hs2), dim=-1)
        collision_evidence = evidence_activation(self.collision_head(hs3))
        return RolloutPrediction(
            image_params=image_params,
            speed_params=speed_params,
            collision_evidence=collision_evidence,
        )


def observation_tensors(obs) -> Tuple[torch.Tensor, torch.Tensor]:
    """Single Observation -> (images (1,3,S,S), speeds (1,)) float32."""
    img = torch.from_numpy(obs.image).permute(2, 0, 1).unsqueeze(0)
    speed = torch.tensor([obs.speed], dtype=torch.float32)
    return img, speed


def rollout(model: WorldModel, obs, actions) -> RolloutPrediction:
    """Predict H future steps for one observation under a concrete action plan."""
    c = model.config
    if len(actions) != c.horizon:
        raise ValueError(f"need exactly {c.horizon} actions, got {len(actions)}")
    img, speed = observation_tensors(obs)
    a = torch.tensor(
        [[ac.steering, ac.throttle] for ac in actions], dtype=torch.float32
    ).unsqueeze(0)
    with torch.no_grad():
        pred = model(img, speed, a)
    return RolloutPrediction(
        image_params=NIGParams(*(t.squeeze(0) for t in pred.image_params)),
        speed_params=NIGParams(*(t.squeeze(0) for t in pred.speed_params)),
        collision_evidence=pred.collision_evidence.squeeze(0),
    )


def world_model_loss_terms(
    pred: RolloutPrediction,
    truth_images: torch.Tensor,
    truth_speeds: torch.Tensor,
    truth_collisions: torch.Tensor,
    config: WorldModelConfig,
) -> Dict[str, torch.Tensor]:
    lam = config.evidential_lambda
    l_image = nig_loss(pred.image_params, truth_images, lam).mean()
    l_speed = nig_loss(pred.speed_params, truth_speeds, lam).mean()
    y = F.one_hot(truth_collisions.long(), num_classes=2).to(truth_images.dtype)
    l_coll = evidential_class_loss(pred.collision_evidence, y).mean()
    return {"image": l_image, "speed": l_speed, "collision": l_coll}


def world_model_loss(
    pred: RolloutPrediction,
    truth_images: torch.Tensor,
    truth_speeds: torch.Tensor,
    truth_collisions: torch.Tensor,
    config: WorldModelConfig,
) -> torch.Tensor:
    terms = world_model_loss_terms(pred, truth_images, truth_speeds, truth_collisions, config)
    return (
        config.w_image * terms["image"]
        + config.w_speed * terms["speed"]
        + config.w_collision * terms["collision"]
    )


def _window_tensors(episodes, windows, horizon: int):
    """Stack (episode_index, start) windows into training tensors."""
    imgs, speeds, actions, t_imgs, t_speeds, t_colls = [], [], [], [], [], []
    for ep_i, t0 in windows:
        frames = episodes[ep_i].frames[t0 : t0 + horizon + 1]
        first = frames[0]
        imgs.append(first.image)
        speeds.append(first.speed)
        actions.append([[f.action.steering, f.action.throttle] for f in frames[:horizon]])
        t_imgs.append(np.stack([f.image for f in frames[1:]]))
        t_speeds.append([f.speed for f in frames[1:]])
        t_colls.append([f.collision for f in frames[1:]])
    images = torch.from_numpy(np.stack(imgs)).to(torch.float32).div_(255.0).permute(0, 3, 1, 2)
    truth_images = (
        torch.from_numpy(np.stack(t_imgs)).to(torch.float32).div_(255.0).permute(0, 1, 4, 2, 3)
    )
    return (
        images,
        torch.tensor(speeds, dtype=torch.float32),
        torch.tensor(actions, dtype=torch.float32),
        truth_images,
        torch.tensor(t_speeds, dtype=torch.float32),
        torch.tensor(t_colls, dtype=torch.int64),
    )


def holdout_split(windows, n_episodes: int, holdout_fraction: float):
    """(train, holdout) windows: every tenth episode is held out when the
    store has at least ten episodes, otherwise a tail slice of the windows."""
    if n_episodes >= 10:
        hold = [w for w in windows if w[0] % 10 == 7]
        train = [w for w in windows if w[0] % 10 != 7]
    else:
        n_hold = max(1, int(len(windows) * holdout_fraction))
        hold = windows[-n_hold:]
        train = windows[:-n_hold]
    return train, hold


def train_world_model(
    store,
    config: WorldModelConfig,
    seed: int = 0,
    progress: Optional[callable] = None,
) -> Tuple[WorldModel, List[dict]]:
    """Fit the world model on stored windows until the holdout loss plateaus.

    Holdout = windows from every tenth episode (when the store has at least
    ten episodes; otherwise a tail slice of the window list).
    """
    rng = seeding.rng_for(seed, seeding.WORLD_MODEL)
    torch.manual_seed(seeding.derive_seed(seed, seeding.WORLD_MODEL))
    length = config.horizon + 1
    all_windows = store.sequence_starts(length)
    if not all_windows:
        raise InsufficientDataError(f"no episode admits a window of length {length}")

    train, hold = holdout_split(all_windows, store.n_episodes, config.holdout_fraction)
    if not train or not hold:
        raise InsufficientDataError("not enough windows for a train/holdout split")

    hold_cap = min(len(hold), 4 * config.batch_size)
    hold_idx = rng.choice(len(hold), size=hold_cap, replace=False)
    hold_batch = [hold[i] for i in hold_idx]

    model = WorldModel(config)
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    history: List[dict] = []
    best = math.inf
    stale = 0

    def holdout_loss() -> float:
        model.eval()
        total = 0.0
        n = 0
        with torch.no_grad():
            for i in range(0, len(hold_batch), config.batch_size):
                chunk = hold_batch[i : i + config.batch_size]
                tensors = _window_tensors(store.episodes, chunk, config.horizon)
                pred = model(tensors[0], tensors[1], tensors[2])
                loss = world_model_loss(pred, tensors[3], tensors[4], tensors[5], config)
                total += float(loss) * len(chunk)
                n += len(chunk)
        model.train()
        return total / n

    def window_has_collision(w) -> bool:
        ep_i, t0 = w
        frames = store.episodes[ep_i].frames[t0 + 1 : t0 + 1 + config.horizon]
        return any(f.collision for f in frames)

    positive = [w for w in train if window_has_collision(w)]
    n_pos = (
        min(int(round(config.collision_window_fraction * config.batch_size)), config.batch_size - 1)
        if positive
        else 0
    )

    for epoch in range(config.max_epochs):
        model.train()
        train_total = 0.0
        for _ in range(config.batches_per_epoch):
            picks = rng.integers(len(train), size=config.batch_size - n_pos)
            batch = [train[p] for p in picks]
            if n_pos:
                batch += [positive[p] for p in rng.integers(len(positive), size=n_pos)]
            tensors = _window_tensors(store.episodes, batch, config.horizon)
            pred = model(tensors[0], tensors[1], tensors[2])
            loss = world_model_loss(pred, tensors[3], tensors[4], tensors[5], config)
            opt.zero_grad()
            loss.backward()
            opt.step()
            train_total += float(loss.detach())
        h_loss = holdout_loss()
        history.append(
            {
                "epoch": epoch,
                "train_loss": train_total / config.batches_per_epoch,
                "holdout_loss": h_loss,
            }
        )
        if progress is not None:
            progress(history[-1])
        # additive threshold scaled by |best| stays correct when losses go negative
        if math.isinf(best) or h_loss < best - config.plateau_rel_tol * max(abs(best), 1e-8):
            best = h_loss
            stale = 0
        else:
            stale += 1
            if stale >= config.plateau_patience:
                break
    model.eval()
    return model, history


def save_world_model(path, model: WorldModel) -> None:
    tensors = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    cfg = asdict(model.config)
    cfg["conv_channels"] = list(model.config.conv_channels)
    save_checkpoint(path, "world_model", cfg, tensors)


def load_world_model(path) -> WorldModel:
    kind, cfg, tensors = load_checkpoint(path)
    if kind != "world_model":
        raise ValueError(f"checkpoint holds a {kind!r}, not a world model")
    cfg["conv_channels"] = tuple(cfg["conv_channels"])
    model = WorldModel(WorldModelConfig(**cfg))
    state = {k: torch.from_numpy(v) for k, v in tensors.items()}
    model.load_state_dict(state)
    model.eval()
    return model
