"""Run configuration: one composed dataclass, a flat key-value file format
(`section.field value`), and the resolved-config dict embedded in run reports."""

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Tuple

from .expert import ExpertConfig
from .policy import PolicyConfig
from .sim.core import SimConfig
from .world_model import WorldModelConfig

TASK_OBSTACLES = {"easy": 2, "hard": 8}


@dataclass(frozen=True)
class DirlConfig:
    iterations: int = 3
    expert_episodes: int = 100
    episodes_per_iteration: int = 10
    max_steps: int = 400  # per collected episode
    task: str = "easy"
    demo_sigma: float = 0.0  # stddev of post-hoc noise on recorded expert actions
    eval_trials: int = 3
    eval_laps: int = 5
    eval_step_cap: int = 6000  # per trial
    early_exit_on_zero_interventions: bool = True
    explore_on_collection: bool = False

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.task not in TASK_OBSTACLES:
            raise ValueError(f"task must be one of {sorted(TASK_OBSTACLES)}")
        if self.demo_sigma < 0:
            raise ValueError("demo_sigma must be non-negative")

    @property
    def n_obstacles(self) -> int:
        return TASK_OBSTACLES[self.task]


@dataclass(frozen=True)
class RunConfig:
    master_seed: int = 0
    sim: SimConfig = field(default_factory=SimConfig)
    expert: ExpertConfig = field(default_factory=ExpertConfig)
    world_model: WorldModelConfig = field(default_factory=WorldModelConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    dirl: DirlConfig = field(default_factory=DirlConfig)


_SECTIONS = ("sim", "expert", "world_model", "policy", "dirl")


def _parse_speed_profile(raw: str) -> Tuple[Tuple[float, float], ...]:
    pairs = []
    for chunk in raw.split(","):
        k, v = chunk.split(":")
        pairs.append((float(k), float(v)))
    return tuple(pairs)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ",".join(f"{k!r}:{v!r}" for k, v in value)
        return ",".join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(name: str, default, raw: str):
    if name == "speed_profile":
        return _parse_speed_profile(raw)
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        elem = type(default[0]) if default else float
        return tuple(elem(v) for v in raw.split(","))
    return raw


def parse_config_text(text: str, base: RunConfig = None) -> RunConfig:
    """Apply `key value` (or `key = value`) overrides on top of defaults.

    Unless set explicitly, net image sizes follow sim.image_size and the
    policy's speed normalizer follows sim.v_max.
    """
    base = base or RunConfig()
    overrides = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        parts = stripped.replace("=", " ", 1).split(None, 1)
        if len(parts) != 2:
            raise ValueError(f"config line {lineno}: expected 'key value', got {line!r}")
        overrides[parts[0].strip()] = parts[1].strip()
    return apply_overrides(base, overrides)


def apply_overrides(base: RunConfig, overrides: dict) -> RunConfig:
    section_kwargs = {name: {} for name in _SECTIONS}
    top_kwargs = {}
    for key, raw in overrides.items():
        if "." in key:
            section, name = key.split(".", 1)
            if section not in section_kwargs:
                raise ValueError(f"unknown config section {section!r}")
            sub = getattr(base, section)
            if not hasattr(sub, name):
                raise ValueError(f"unknown config key {key!r}")
            section_kwargs[section][name] = _coerce(name, getattr(sub, name), raw)
        else:
            if not hasattr(base, key) or key in _SECTIONS:
                raise ValueError(f"unknown config key {key!r}")
            top_kwargs[key] = _coerce(key, getattr(base, key), raw)

    sim = dataclasses.replace(base.sim, **section_kwargs["sim"])
    # keep the nets' input contract and speed normalizer in lockstep with the sim
    for dep_section, dep_name, value in (
        ("world_model", "image_size", sim.image_size),
        ("policy", "image_size", sim.image_size),
        ("policy", "v_max", sim.v_max),
    ):
        section_kwargs[dep_section].setdefault(dep_name, value)
    return RunConfig(
        master_seed=top_kwargs.get("master_seed", base.master_seed),
        sim=sim,
        expert=dataclasses.replace(base.expert, **section_kwargs["expert"]),
        world_model=dataclasses.replace(base.world_model, **section_kwargs["world_model"]),
        policy=dataclasses.replace(base.policy, **section_kwargs["policy"]),
        dirl=dataclasses.replace(base.dirl, **section_kwargs["dirl"]),
    )


def load_config(path) -> RunConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def resolved_dict(cfg: RunConfig) -> dict:
    """Flat JSON-safe mapping of every resolved key."""
    out = {"master_seed": cfg.master_seed}
    for section in _SECTIONS:
        sub = getattr(cfg, section)
        for f in dataclasses.fields(sub):
            value = getattr(sub, f.name)
            if isinstance(value, tuple):
                value = json.loads(json.dumps(value))  # tuples -> lists, recursively
            out[f"{section}.{f.name}"] = value
    return out


def format_config(cfg: RunConfig) -> str:
    """Full key-value listing; parseable back into an identical RunConfig."""
    lines = [f"master_seed {cfg.master_seed}"]
    for section in _SECTIONS:
        sub = getattr(cfg, section)
        for f in dataclasses.fields(sub):
            lines.append(f"{section}.{f.name} {_format_value(getattr(sub, f.name))}")
    return "\n".join(lines) + "\n"
