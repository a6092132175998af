"""Command-line entry points for every pipeline stage."""

import dataclasses
import json
import time
from pathlib import Path

import click
import numpy as np

from . import seeding
from .config import TASK_OBSTACLES, RunConfig, apply_overrides, load_config, resolved_dict
from .policy import load_policy, refine_policy, save_policy, train_policy_il
from .runner import (
    collect_expert_data,
    evaluate,
    noisy_demo_experiment,
    policy_actor,
    run_dirl,
    task_obstacles,
    write_json_report,
    write_metrics_csv,
)
from .sim.core import Simulator, sample_obstacles
from .sim.track import default_track, load_track
from .store import EpisodeStore
from .world_model import load_world_model, save_world_model, train_world_model


def _load_run_config(config_path, seed=None, overrides=None) -> RunConfig:
    cfg = load_config(config_path) if config_path else RunConfig()
    merged = dict(overrides or {})
    if seed is not None:
        merged["master_seed"] = str(seed)
    if merged:
        cfg = apply_overrides(cfg, merged)
    return cfg


def _track(track_path):
    return load_track(track_path) if track_path else default_track()


@click.group()
def main() -> None:
    """Imitation-bootstrapped model-based driving on a toy racing simulator."""


@main.command()
@click.option("--episodes", type=int, default=None, help="Expert episodes to record.")
@click.option("--noise-fraction", type=float, default=None, help="Fraction of time with injected noise.")
@click.option("--obstacles", type=int, default=None, help="Obstacles per episode layout.")
@click.option("--seed", type=int, default=None, help="Master seed.")
@click.option("--out", type=click.Path(), required=True, help="Dataset directory.")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--track", "track_path", type=click.Path(exists=True), default=None)
def collect(episodes, noise_fraction, obstacles, seed, out, config_path, track_path) -> None:
    """Record scripted-expert demonstration episodes into a dataset directory."""
    overrides = {}
    if episodes is not None:
        overrides["dirl.expert_episodes"] = str(episodes)
    if noise_fraction is not None:
        overrides["expert.noise_fraction"] = repr(noise_fraction)
    cfg = _load_run_config(config_path, seed, overrides)
    track = _track(track_path)
    out_dir = Path(out)
    store = EpisodeStore(out_dir)
    collect_expert_data(
        store,
        track,
        cfg,
        cfg.dirl.expert_episodes,
        n_obstacles=obstacles,
        progress=lambda info: click.echo(
            f"{info['episode']}: {info['frames']} frames"
            + (" (collision)" if info["collision"] else "")
        ),
    )
    write_json_report(
        out_dir / "collect_report.json",
        {
            "config": resolved_dict(cfg),
            "episodes": store.n_episodes,
            "frames": store.n_frames,
            "collision_frames": store.collision_frame_count,
        },
    )
    click.echo(f"collected {store.n_episodes} episodes, {store.n_frames} frames -> {out_dir}")


@main.command("train-world")
@click.option("--data", type=click.Path(exists=True), required=True, help="Dataset directory.")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), default=None, help="Checkpoint path.")
def train_world(data, config_path, seed, out) -> None:
    """Fit the world model on a stored dataset."""
    cfg = _load_run_config(config_path, seed)
    store = EpisodeStore(data)
    model, history = train_world_model(
        store,
        cfg.world_model,
        seed=cfg.master_seed,
        progress=lambda row: click.echo(
            f"epoch {row['epoch']}: train {row['train_loss']:.4f} holdout {row['holdout_loss']:.4f}"
        ),
    )
    out_path = Path(out) if out else Path(data) / "world-model.ckpt"
    save_world_model(out_path, model)
    write_json_report(
        out_path.with_suffix(".json"),
        {"config": resolved_dict(cfg), "history": history, "checkpoint": out_path.name},
    )
    click.echo(f"world model -> {out_path}")


@main.command("train-policy")
@click.option("--mode", type=click.Choice(["il", "refine"]), required=True)
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--world", "world_path", type=click.Path(exists=True), default=None, help="World-model checkpoint (refine mode).")
@click.option("--policy-in", type=click.Path(exists=True), default=None, help="Policy checkpoint to refine.")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), default=None, help="Checkpoint path.")
def train_policy(mode, data, world_path, policy_in, config_path, seed, out) -> None:
    """Imitation-train a policy, or refine one inside a trained world model."""
    cfg = _load_run_config(config_path, seed)
    store = EpisodeStore(data)
    echo = lambda row: click.echo(  # noqa: E731
        " ".join(f"{k} {v:.5f}" if isinstance(v, float) else f"{k} {v}" for k, v in row.items())
    )
    if mode == "il":
        policy, history = train_policy_il(store, cfg.policy, seed=cfg.master_seed, progress=echo)
        out_path = Path(out) if out else Path(data) / "policy-il.ckpt"
        save_policy(out_path, policy, meta={"stage": "il"})
    else:
        if world_path is None or policy_in is None:
            raise click.UsageError("refine mode needs --world and --policy-in")
        world_model = load_world_model(world_path)
        policy = load_policy(policy_in)
        policy, history = refine_policy(
            policy, world_model, store, cfg.policy, seed=cfg.master_seed, progress=echo
        )
        out_path = Path(out) if out else Path(data) / "policy-refined.ckpt"
        save_policy(
            out_path, policy, meta={"stage": "refined", "w_uncertainty": cfg.policy.w_uncertainty}
        )
    write_json_report(
        out_path.with_suffix(".json"),
        {"config": resolved_dict(cfg), "mode": mode, "history": history, "checkpoint": out_path.name},
    )
    click.echo(f"policy ({mode}) -> {out_path}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--iterations", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), default="runs/dirl")
@click.option("--track", "track_path", type=click.Path(exists=True), default=None)
def dirl(config_path, iterations, seed, out, track_path) -> None:
    """Run the full pipeline: imitation, then iterated reverie refinement."""
    overrides = {}
    if iterations is not None:
        overrides["dirl.iterations"] = str(iterations)
    cfg = _load_run_config(config_path, seed, overrides)
    payload = run_dirl(
        cfg,
        out,
        track=_track(track_path),
        progress=lambda info: click.echo(f"[{info['iteration']}] {info['phase']}"),
    )
    final = payload["reports"][-1]["report"]
    click.echo(
        f"done: completion {final['completion_ratio']:.1f}% "
        f"interventions {final['interventions']:.2f} avg speed {final['avg_speed']:.2f} m/s"
    )
    click.echo(f"report -> {Path(out) / 'run_report.json'}")


@main.command("eval")
@click.option("--policy", "policy_path", type=click.Path(exists=True), required=True)
@click.option("--task", type=click.Choice(sorted(TASK_OBSTACLES)), default="easy")
@click.option("--trials", type=int, default=3)
@click.option("--laps", type=int, default=5)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), default=None, help="Report path (JSON).")
@click.option("--track", "track_path", type=click.Path(exists=True), default=None)
def eval_cmd(policy_path, task, trials, laps, config_path, seed, out, track_path) -> None:
    """Score a policy checkpoint on the fixed per-task obstacle layout."""
    cfg = _load_run_config(config_path, seed, {"dirl.task": task})
    track = _track(track_path)
    policy = load_policy(policy_path)
    report = evaluate(
        policy_actor(policy),
        track,
        task_obstacles(track, cfg),
        cfg.sim,
        trials=trials,
        laps=laps,
        seed=cfg.master_seed,
        step_cap=cfg.dirl.eval_step_cap,
    )
    payload = {"config": resolved_dict(cfg), "task": task, "report": report.to_dict()}
    out_path = Path(out) if out else Path(policy_path).with_suffix(".eval.json")
    write_json_report(out_path, payload)
    write_metrics_csv(
        out_path.with_suffix(".csv"),
        [{"method": Path(policy_path).stem, "task": task, **report.to_dict()}],
    )
    click.echo(
        f"completion {report.completion_ratio:.1f}% interventions {report.interventions:.2f} "
        f"avg {report.avg_speed:.2f} m/s top {report.top_speed:.2f} m/s "
        f"time {report.time_cost:.1f} s"
    )
    click.echo(f"report -> {out_path}")


@main.command("noisy-demo")
@click.option("--sigmas", default="0,0.5,1.0", help="Comma-separated noise levels.")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), default="runs/noisy-demo")
@click.option("--track", "track_path", type=click.Path(exists=True), default=None)
def noisy_demo(sigmas, config_path, seed, out, track_path) -> None:
    """Compare imitation vs refinement as demonstration noise grows."""
    cfg = _load_run_config(config_path, seed)
    levels = [float(s) for s in sigmas.split(",") if s.strip()]
    rows = noisy_demo_experiment(
        cfg,
        levels,
        out,
        track=_track(track_path),
        progress=lambda info: click.echo(" ".join(f"{k}={v}" for k, v in info.items())),
    )
    for row in rows:
        click.echo(
            f"sigma {row['sigma']}: IL completion {row['il_completion_ratio']:.1f}% "
            f"-> refined {row['dirl_completion_ratio']:.1f}%"
        )


@main.command()
@click.option("--port", type=int, default=8700)
@click.option("--host", default="127.0.0.1")
@click.option("--data", type=click.Path(), default=None, help="Dataset directory for recordings.")
@click.option("--task", type=click.Choice(sorted(TASK_OBSTACLES)), default="easy")
@click.option("--seed", type=int, default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--track", "track_path", type=click.Path(exists=True), default=None)
@click.option("--tick-period", type=float, default=0.1, help="Seconds per control tick.")
def serve(port, host, data, task, seed, config_path, track_path, tick_period) -> None:
    """Serve the websocket teleoperation endpoint for the browser cockpit."""
    from .teleop import serve as teleop_serve

    cfg = _load_run_config(config_path, seed, {"dirl.task": task})
    track = _track(track_path)
    sim = Simulator(track, cfg.sim)
    layout_seed = seeding.derive_seed(cfg.master_seed, seeding.TASK, 0 if task == "easy" else 1)
    sim.reset(TASK_OBSTACLES[task], seed=layout_seed)
    sim.reset_pose(sim.safe_pose_near(0.0))
    store = EpisodeStore(data) if data else None
    click.echo(f"ws://{host}:{port}/ws (task {task}, tick {tick_period * 1000:.0f} ms)")
    teleop_serve(sim, store, port, host=host, tick_period=tick_period)


@main.command()
@click.option("--frames", type=int, default=200, help="Renders per backend.")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def benchmark(frames, config_path) -> None:
    """Time the compiled simulator kernels against their plain-numpy twins."""
    from .sim.kernels import HAVE_NUMBA, nearest_point
    from .sim.render import render_image

    cfg = _load_run_config(config_path)
    track = default_track()
    sim = Simulator(track, cfg.sim)
    sim.reset(4, seed=0)
    rng = np.random.default_rng(0)
    points = rng.uniform(-4.0, 4.0, size=(frames * 10, 2))

    results = {}
    modes = [("numpy", False)] + ([("numba", True)] if HAVE_NUMBA else [])
    for label, use_numba in modes:
        render_image(sim.state, track, sim.obstacles, cfg.sim, use_numba=use_numba)  # warm up
        t0 = time.perf_counter()
        for _ in range(frames):
            render_image(sim.state, track, sim.obstacles, cfg.sim, use_numba=use_numba)
        render_ms = (time.perf_counter() - t0) / frames * 1e3
        nearest_point(0.0, 0.0, track.geometry, use_numba=use_numba)
        t0 = time.perf_counter()
        for x, y in points:
            nearest_point(float(x), float(y), track.geometry, use_numba=use_numba)
        nearest_us = (time.perf_counter() - t0) / len(points) * 1e6
        results[label] = {"render_ms": render_ms, "nearest_us": nearest_us}
        click.echo(f"{label:6s} render {render_ms:8.3f} ms/frame   nearest {nearest_us:8.2f} us/query")
    if "numba" in results:
        speedup = results["numpy"]["render_ms"] / results["numba"]["render_ms"]
        click.echo(f"render speedup x{speedup:.1f}")
    if not HAVE_NUMBA:
        click.echo("numba unavailable; compiled path skipped")


if __name__ == "__main__":
    main()
