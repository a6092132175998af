"""End-to-end smoke pass over the torch modules at tiny scale."""

import copy
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import torch

from dirl.config import RunConfig, apply_overrides
from dirl.policy import PolicyConfig, load_policy, refine_policy, save_policy, train_policy_il
from dirl.runner import (
    collect_expert_data,
    evaluate,
    policy_actor,
    task_obstacles,
)
from dirl.sim.core import Simulator
from dirl.sim.track import default_track
from dirl.store import EpisodeStore
from dirl.world_model import (
    WorldModel,
    WorldModelConfig,
    load_world_model,
    save_world_model,
    train_world_model,
    world_model_loss,
)

torch.set_num_threads(1)


def log(msg):
    print(f"[{time.strftime('%H:%M:%S')}] {msg}", flush=True)


S = 32
cfg = apply_overrides(
    RunConfig(),
    {
        "sim.image_size": str(S),
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
        "policy.refine_max_epochs": "2",
        "dirl.max_steps": "80",
        "dirl.expert_episodes": "3",
    },
)
log(f"config ok, wm image_size={cfg.world_model.image_size} policy image_size={cfg.policy.image_size}")
assert cfg.world_model.image_size == S and cfg.policy.image_size == S

track = default_track()
tmp = Path(tempfile.mkdtemp())
store = EpisodeStore(tmp / "data")
collect_expert_data(store, track, cfg, 3)
log(f"collected {store.n_episodes} eps, {store.n_frames} frames, {store.collision_frame_count} collision frames")

# world model: forward shapes + one loss + short training run
wm_cfg = cfg.world_model
wm = WorldModel(wm_cfg)
B, H = 2, wm_cfg.horizon
img = torch.rand(B, 3, S, S)
spd = torch.rand(B)
act = torch.rand(B, H, 2) * 2 - 1
pred = wm(img, spd, act)
assert pred.image_params.gamma.shape == (B, H, 3, S, S), pred.image_params.gamma.shape
assert pred.speed_params.gamma.shape == (B, H)
assert pred.collision_evidence.shape == (B, H, 2)
assert pred.collision_risk().shape == (B, H)
loss = world_model_loss(
    pred, torch.rand(B, H, 3, S, S), torch.rand(B, H), torch.randint(0, 2, (B, H)), wm_cfg
)
loss.backward()
loss = loss.detach()
log(f"wm forward/loss ok: {float(loss):.4f}")

steps_before = Simulator.total_steps
wm, hist = train_world_model(store, wm_cfg, seed=cfg.master_seed)
assert Simulator.total_steps == steps_before, "training touched the simulator"
log(f"wm trained: {len(hist)} epochs, holdout {hist[-1]['holdout_loss']:.4f}")

ck = tmp / "wm.ckpt"
save_world_model(ck, wm)
wm2 = load_world_model(ck)
with torch.no_grad():
    p1 = wm(img, spd, act)
    p2 = wm2(img, spd, act)
assert torch.equal(p1.image_params.gamma, p2.image_params.gamma)
assert torch.equal(p1.collision_evidence, p2.collision_evidence)
log("wm checkpoint round-trip bit-identical")

# rollout helper
from dirl.sim.core import Action
sim_r = Simulator(track, cfg.sim)
sim_r.reset(2, seed=5)
sim_r.reset_pose(sim_r.safe_pose_near(0.0))
plan = [Action(0.1, 0.5) for _ in range(H)]
from dirl.world_model import rollout as wm_rollout
roll = wm_rollout(wm2, sim_r.observe(), plan)
assert roll.mean_images().shape == (H, 3, S, S)
assert roll.collision_risk().shape == (H,)
u = roll.image_uncertainty()
assert u.shape == (H,) and bool((u > 0).all())
log("rollout ok")

# policy: IL then refine
from dirl.policy import act as policy_act, squash_actions

pol, il_hist = train_policy_il(store, cfg.policy, seed=cfg.master_seed)
a0 = policy_act(pol, sim_r.observe())
assert -1.0 <= a0.steering <= 1.0 and 0.0 <= a0.throttle <= 1.0
out = pol(img, spd)
assert out.mu.shape == (B, cfg.policy.horizon, 2) and bool((out.sigma > 0).all())
log(f"IL ok: {len(il_hist)} epochs, loss {il_hist[-1]['train_loss']:.4f}")

pol_copy = copy.deepcopy(pol)
pol_ref, ref_hist = refine_policy(pol_copy, wm2, store, cfg.policy, seed=cfg.master_seed)
assert pol_ref is pol_copy
same = all(
    torch.equal(p, q) for p, q in zip(pol.parameters(), pol_ref.parameters())
)
assert not same, "refinement did not move the policy"
log(f"refine ok: {len(ref_hist)} epochs, eval {ref_hist[-1]['eval_loss']:.4f}")

pck = tmp / "pol.ckpt"
save_policy(pck, pol_ref, meta={"stage": "refined"})
pol2 = load_policy(pck)
with torch.no_grad():
    o1, o2 = pol_ref(img, spd), pol2(img, spd)
assert torch.equal(o1.mu, o2.mu) and torch.equal(o1.sigma, o2.sigma)
log("policy checkpoint round-trip bit-identical")

# evaluation plumbing
rep = evaluate(
    policy_actor(pol2), track, task_obstacles(track, cfg), cfg.sim,
    trials=1, laps=1, seed=cfg.master_seed, step_cap=120,
)
log(f"evaluate ok: completion {rep.completion_ratio:.1f}% interventions {rep.interventions} "
    f"avg {rep.avg_speed:.2f} top {rep.top_speed:.2f} time {rep.time_cost:.1f}")
d = rep.to_dict()
assert set(d) >= {"avg_speed", "top_speed", "interventions", "time_cost", "completion_ratio"}

log("ALL SMOKE CHECKS PASSED")
