"""Pipeline orchestration: scripted-expert data collection, the imitation ->
(world model -> refinement -> collection) loop, track evaluation with
interventions, and the noisy-demonstration comparison experiment."""

import copy
import csv
import json
import math
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from . import seeding
from .config import RunConfig, resolved_dict
from .expert import expert_action, inject_noise, noise_active
from .policy import PolicyNet, act, refine_policy, save_policy, train_policy_il
from .sim.core import Action, CarState, SimConfig, Simulator, sample_obstacles, start_pose
from .sim.track import Track, default_track
from .store import (
    SOURCE_EXPERT,
    SOURCE_POLICY,
    EpisodeRecord,
    EpisodeStore,
    Frame,
    back_label_collisions,
)
from .world_model import WorldModel, save_world_model, train_world_model

# An actor maps (observation, simulator) -> Action each tick. Learned policies
# only look at the observation; scripted actors may peek at simulator state.
Actor = Callable[[object, Simulator], Action]

TASK_INDEX = {"easy": 0, "hard": 1}

STALL_WINDOW_SECONDS = 10.0
STALL_DISTANCE = 0.1


def policy_actor(policy: PolicyNet) -> Actor:
    return lambda obs, sim: act(policy, obs)


def expert_actor(expert_cfg, sim_cfg: SimConfig) -> Actor:
    return lambda obs, sim: expert_action(sim.state, sim.track, sim.obstacles, expert_cfg, sim_cfg)


def finalize_episode(
    frames: List[Frame], dt: float, episode_id: str, source: str, collided: bool
) -> EpisodeRecord:
    """Wrap raw frames into a record; collision episodes get back-labeled."""
    if collided:
        frames = frames[:-1] + [replace(frames[-1], collision=1)]
    record = EpisodeRecord(
        id=episode_id, source=source, dt=dt, frames=tuple(frames), ended_in_collision=collided
    )
    if collided:
        record = back_label_collisions(record)
    return record


def run_episode(
    sim: Simulator,
    controller: Callable[[int, object, Simulator], Tuple[Action, Optional[Action]]],
    max_steps: int,
    episode_id: str,
    source: str,
) -> EpisodeRecord:
    """Drive one episode; stops at max_steps or on the first collision.

    The final frame of a collision episode is the one whose action caused the
    contact; the collided pose itself is never observed."""
    frames: List[Frame] = []
    collided = False
    for t in range(max_steps):
        obs = sim.observe()
        action, a_star = controller(t, obs, sim)
        frames.append(
            Frame(
                image=obs.image_u8,
                speed=obs.speed,
                action=action,
                expert_action=a_star,
                collision=0,
            )
        )
        sim.step(action)
        if sim.collided():
            collided = True
            break
    return finalize_episode(frames, sim.cfg.dt, episode_id, source, collided)


def collect_episode(
    policy: PolicyNet, sim: Simulator, store: Optional[EpisodeStore], max_steps: int,
    episode_id: str = "policy-0000",
) -> EpisodeRecord:
    """On-policy episode via act() each tick, back-labeled and appended."""
    record = run_episode(
        sim,
        lambda t, obs, s: (act(policy, obs), None),
        max_steps,
        episode_id,
        SOURCE_POLICY,
    )
    if store is not None:
        store.append_episode(record)
    return record


def perturb_expert_actions(
    store: EpisodeStore, sigma: float, seed: int, tau: float = 0.7
) -> EpisodeStore:
    """Corrupt the demonstration targets of a recorded dataset in place of a
    worse demonstrator: returns an in-memory copy whose expert actions carry
    added Gaussian drift with stationary std sigma, clamped to action ranges.

    The drift is an Ornstein-Uhlenbeck walk per action channel (time constant
    tau seconds, fresh walk per episode) rather than an independent draw per
    frame. Marginally each frame still sees N(0, sigma^2), but neighbouring
    frames share the drift the way an unsteady hand holds its bias for a
    beat. That correlation is what makes the corruption stick: independent
    zero-mean target noise washes out under an L1 imitation fit, whose
    conditional median is the clean action, while a drift shared across a
    whole stretch of track survives any amount of local averaging.

    Only the demonstration targets change; executed actions, images, and
    collision labels are what was actually driven and stay as recorded."""
    out = EpisodeStore(None)
    for index, ep in enumerate(store.episodes):
        if sigma <= 0.0:
            out.append_episode(ep)
            continue
        rng = seeding.rng_for(seed, seeding.NOISE, index)
        rho = math.exp(-ep.dt / tau)
        fresh = sigma * math.sqrt(1.0 - rho**2)
        drift = rng.normal(0.0, sigma, size=2)
        frames = []
        for f in ep.frames:
            if f.expert_action is None:
                frames.append(f)
            else:
                noisy = Action(
                    steering=f.expert_action.steering + float(drift[0]),
                    throttle=f.expert_action.throttle + float(drift[1]),
                ).clamped()
                frames.append(replace(f, expert_action=noisy))
            drift = drift * rho + rng.normal(0.0, fresh, size=2)
        out.append_episode(replace(ep, frames=tuple(frames)))
    return out


def collect_expert_data(
    store: EpisodeStore,
    track: Track,
    cfg: RunConfig,
    n_episodes: int,
    iteration: int = 0,
    n_obstacles: Optional[int] = None,
    progress: Optional[Callable] = None,
) -> None:
    """Scripted-expert episodes with block-scheduled recovery noise; start arcs
    and obstacle layouts vary per episode, failure episodes are kept."""
    sim_cfg = cfg.sim
    master = cfg.master_seed
    per_episode = cfg.dirl.n_obstacles if n_obstacles is None else n_obstacles
    for i in range(n_episodes):
        layout_seed = seeding.derive_seed(master, seeding.COLLECT, iteration, i)
        sim = Simulator(track, sim_cfg)
        sim.reset(per_episode, seed=layout_seed)
        arc_rng = seeding.rng_for(master, seeding.COLLECT, iteration, i)
        sim.reset_pose(sim.safe_pose_near(float(arc_rng.uniform(0.0, track.total_length))))
        noise_rng = seeding.rng_for(master, seeding.NOISE, iteration, i)

        def controller(t, obs, s):
            a_star = expert_action(s.state, track, s.obstacles, cfg.expert, sim_cfg)
            a = inject_noise(a_star, noise_rng, noise_active(t, sim_cfg.dt, cfg.expert), cfg.expert)
            return a, a_star

        record = run_episode(sim, controller, cfg.dirl.max_steps, f"expert-{i:04d}", SOURCE_EXPERT)
        store.append_episode(record)
        if progress is not None:
            progress({"episode": record.id, "frames": len(record), "collision": record.ended_in_collision})


@dataclass
class EvalReport:
    """Track-test metrics averaged over trials (top speed is the maximum)."""

    avg_speed: float
    top_speed: float
    interventions: float
    time_cost: float
    completion_ratio: float
    laps: int
    trials: List[dict] = field(default_factory=list)

    def __post_init__(self):
        if not (self.top_speed >= self.avg_speed >= 0.0):
            raise ValueError("need top_speed >= avg_speed >= 0")
        if not 0.0 <= self.completion_ratio <= 100.0:
            raise ValueError("completion_ratio must be in [0, 100]")

    def to_dict(self) -> dict:
        return {
            "avg_speed": self.avg_speed,
            "top_speed": self.top_speed,
            "interventions": self.interventions,
            "time_cost": self.time_cost,
            "completion_ratio": self.completion_ratio,
            "laps": self.laps,
            "trials": self.trials,
        }


def _wrap_delta(delta: float, total: float) -> float:
    """Arc difference wrapped into [-total/2, total/2)."""
    return (delta + 0.5 * total) % total - 0.5 * total


def evaluate(
    actor: Actor,
    track: Track,
    obstacles: Sequence,
    sim_cfg: SimConfig,
    trials: int = 3,
    laps: int = 5,
    seed: int = 0,
    step_cap: int = 6000,
    jitter_start: bool = True,
) -> EvalReport:
    """Run `trials` independent sessions of `laps` continuous laps each.

    A collision (or a stall: < 0.1 m progress over 10 s) counts one
    intervention and resets the car to a collision-free downstream centerline
    pose at zero speed; resets consume no simulated time."""
    total = track.total_length
    target = laps * total
    stall_window = int(round(STALL_WINDOW_SECONDS / sim_cfg.dt))
    per_trial = []
    for trial in range(trials):
        sim = Simulator(track, sim_cfg, obstacles=list(obstacles))
        rng = seeding.rng_for(seed, seeding.EVAL, trial)
        if jitter_start:
            sim.reset_pose(sim.safe_pose_near(float(rng.uniform(0.0, total))))
        else:
            sim.reset_pose(sim.safe_pose_near(0.0))
        _, s_prev = track.nearest(sim.state.x, sim.state.y)
        advance = 0.0
        speeds: List[float] = []
        interventions = 0
        first_failure_advance: Optional[float] = None
        recent = deque(maxlen=stall_window)
        steps = 0
        while advance < target - 1e-6 and steps < step_cap:
            obs = sim.observe()
            action = actor(obs, sim)
            sim.step(action)
            steps += 1
            speeds.append(sim.state.speed)
            _, s_now = track.nearest(sim.state.x, sim.state.y)
            advance += _wrap_delta(s_now - s_prev, total)
            s_prev = s_now

            stalled = len(recent) == stall_window and advance - recent[0] < STALL_DISTANCE
            recent.append(advance)
            if sim.collided() or stalled:
                interventions += 1
                if first_failure_advance is None:
                    first_failure_advance = advance
                pose = sim.safe_pose_near(s_now)
                sim.reset_pose(pose)
                _, s_prev = track.nearest(pose.x, pose.y)
                recent.clear()
        if first_failure_advance is None:
            completion = 100.0
        else:
            completion = 100.0 * min(max(first_failure_advance, 0.0), total) / total
        per_trial.append(
            {
                "trial": trial,
                "steps": steps,
                "time_cost": steps * sim_cfg.dt,
                "avg_speed": float(np.mean(speeds)) if speeds else 0.0,
                "top_speed": float(np.max(speeds)) if speeds else 0.0,
                "interventions": interventions,
                "completion_ratio": completion,
                "laps_done": advance / total,
            }
        )
    return EvalReport(
        avg_speed=float(np.mean([t["avg_speed"] for t in per_trial])),
        top_speed=float(np.max([t["top_speed"] for t in per_trial])),
        interventions=float(np.mean([t["interventions"] for t in per_trial])),
        time_cost=float(np.mean([t["time_cost"] for t in per_trial])),
        completion_ratio=float(np.mean([t["completion_ratio"] for t in per_trial])),
        laps=laps,
        trials=per_trial,
    )


def task_obstacles(track: Track, cfg: RunConfig) -> list:
    """The fixed per-task obstacle layout every method is scored against."""
    seed = seeding.derive_seed(cfg.master_seed, seeding.TASK, TASK_INDEX[cfg.dirl.task])
    return sample_obstacles(track, cfg.dirl.n_obstacles, seed, cfg.sim)


def evaluate_policy(policy: PolicyNet, track: Track, cfg: RunConfig) -> EvalReport:
    return evaluate(
        policy_actor(policy),
        track,
        task_obstacles(track, cfg),
        cfg.sim,
        trials=cfg.dirl.eval_trials,
        laps=cfg.dirl.eval_laps,
        seed=cfg.master_seed,
        step_cap=cfg.dirl.eval_step_cap,
    )


def write_json_report(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


METRIC_COLUMNS = [
    "method",
    "task",
    "avg_speed",
    "top_speed",
    "interventions",
    "time_cost",
    "completion_ratio",
]


def write_metrics_csv(path, rows: List[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=METRIC_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def run_dirl(
    cfg: RunConfig,
    out_dir,
    track: Optional[Track] = None,
    progress: Optional[Callable] = None,
) -> dict:
    """Full pipeline: expert bootstrap, imitation, then per iteration
    world-model training, offline refinement, on-policy collection, and a
    track evaluation. Returns the run-report payload (also written to disk)."""
    torch.set_num_threads(1)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    track = track or default_track()
    phases: List[dict] = []
    reports: List[dict] = []
    curves: Dict[str, object] = {}

    def note(phase: str, iteration: int) -> None:
        phases.append({"phase": phase, "iteration": iteration})
        if progress is not None:
            progress(phases[-1])

    store = EpisodeStore(out / "data")
    note("collect-expert", 0)
    collect_expert_data(store, track, cfg, cfg.dirl.expert_episodes)

    def training_view() -> EpisodeStore:
        # dirl.demo_sigma > 0 degrades the demonstration targets post hoc;
        # recomputed after each collection round so new episodes are included
        if cfg.dirl.demo_sigma <= 0.0:
            return store
        return perturb_expert_actions(
            store, cfg.dirl.demo_sigma,
            seeding.derive_seed(cfg.master_seed, seeding.NOISE, 7))

    note("train-il", 0)
    policy, il_curve = train_policy_il(training_view(), cfg.policy, seed=cfg.master_seed)
    curves["il"] = il_curve
    save_policy(ckpt_dir / "policy-il.ckpt", policy, meta={"stage": "il"})

    note("eval", 0)
    il_report = evaluate_policy(policy, track, cfg)
    reports.append({"method": "il", "iteration": 0, "report": il_report.to_dict()})

    world_model: Optional[WorldModel] = None
    wm_curves = {}
    for iteration in range(1, cfg.dirl.iterations + 1):
        view = training_view()
        note("train-world", iteration)
        world_model, wm_curve = train_world_model(view, cfg.world_model, seed=cfg.master_seed)
        wm_curves[str(iteration)] = wm_curve
        save_world_model(ckpt_dir / f"world-model-iter{iteration}.ckpt", world_model)

        note("refine-policy", iteration)
        policy, refine_curve = refine_policy(policy, world_model, view, cfg.policy, seed=cfg.master_seed)
        curves[f"refine-{iteration}"] = refine_curve
        save_policy(
            ckpt_dir / f"policy-iter{iteration}.ckpt",
            policy,
            meta={"stage": "refined", "iteration": iteration, "w_uncertainty": cfg.policy.w_uncertainty},
        )

        note("collect-policy", iteration)
        for j in range(cfg.dirl.episodes_per_iteration):
            layout_seed = seeding.derive_seed(cfg.master_seed, seeding.COLLECT, iteration, j)
            sim = Simulator(track, cfg.sim)
            sim.reset(cfg.dirl.n_obstacles, seed=layout_seed)
            arc_rng = seeding.rng_for(cfg.master_seed, seeding.COLLECT, iteration, j)
            sim.reset_pose(sim.safe_pose_near(float(arc_rng.uniform(0.0, track.total_length))))
            collect_episode(
                policy, sim, store, cfg.dirl.max_steps, episode_id=f"policy-i{iteration}-{j:04d}"
            )

        note("eval", iteration)
        report = evaluate_policy(policy, track, cfg)
        reports.append({"method": "dirl", "iteration": iteration, "report": report.to_dict()})
        if cfg.dirl.early_exit_on_zero_interventions and report.interventions == 0:
            break

    curves["world_model"] = wm_curves
    save_policy(ckpt_dir / "policy.ckpt", policy, meta={"stage": "final"})
    if world_model is not None:
        save_world_model(ckpt_dir / "world-model.ckpt", world_model)

    payload = {
        "config": resolved_dict(cfg),
        "phases": phases,
        "reports": reports,
        "curves": curves,
        "store": {
            "episodes": store.n_episodes,
            "frames": store.n_frames,
            "collision_frames": store.collision_frame_count,
        },
    }
    write_json_report(out / "run_report.json", payload)
    rows = [
        {
            "method": r["method"] if r["iteration"] == 0 else f"dirl-iter{r['iteration']}",
            "task": cfg.dirl.task,
            **{k: r["report"][k] for k in METRIC_COLUMNS[2:]},
        }
        for r in reports
    ]
    write_metrics_csv(out / "metrics.csv", rows)
    return payload


def noisy_demo_experiment(
    cfg: RunConfig,
    sigmas: Sequence[float],
    out_dir,
    track: Optional[Track] = None,
    progress: Optional[Callable] = None,
) -> List[dict]:
    """Imitation vs refined-policy metrics as demonstration noise grows.

    One dataset and one world model serve every noise level: the perturbation
    rewrites only the demonstration targets, and the world model conditions
    on executed actions, which the perturbation does not touch. Per level the
    targets are corrupted, a fresh policy is imitation-trained on them, and a
    copy is refined against the shared world model."""
    torch.set_num_threads(1)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    track = track or default_track()
    if cfg.dirl.demo_sigma != 0.0:
        raise ValueError("noisy-demo sweeps the corruption level; set dirl.demo_sigma = 0")

    store = EpisodeStore(out / "data")
    if progress is not None:
        progress({"phase": "collect-expert"})
    collect_expert_data(store, track, cfg, cfg.dirl.expert_episodes)

    if progress is not None:
        progress({"phase": "train-world"})
    world_model, _ = train_world_model(store, cfg.world_model, seed=cfg.master_seed)
    save_world_model(out / "world-model.ckpt", world_model)

    rows = []
    for sigma in sigmas:
        noisy = perturb_expert_actions(
            store, sigma, seeding.derive_seed(cfg.master_seed, seeding.NOISE, 7))

        if progress is not None:
            progress({"phase": "train-il", "sigma": sigma})
        il_policy, _ = train_policy_il(noisy, cfg.policy, seed=cfg.master_seed)
        il_report = evaluate_policy(il_policy, track, cfg)

        if progress is not None:
            progress({"phase": "refine", "sigma": sigma})
        refined = copy.deepcopy(il_policy)
        refined, _ = refine_policy(refined, world_model, noisy, cfg.policy, seed=cfg.master_seed)
        dirl_report = evaluate_policy(refined, track, cfg)

        rows.append(
            {
                "sigma": sigma,
                "il_completion_ratio": il_report.completion_ratio,
                "il_avg_speed": il_report.avg_speed,
                "il_interventions": il_report.interventions,
                "dirl_completion_ratio": dirl_report.completion_ratio,
                "dirl_avg_speed": dirl_report.avg_speed,
                "dirl_interventions": dirl_report.interventions,
            }
        )
    payload = {"config": resolved_dict(cfg), "rows": rows}
    write_json_report(out / "noisy_demo_report.json", payload)
    with open(out / "noisy_demo.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    return rows
