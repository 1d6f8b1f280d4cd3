"""Experiment configuration: a YAML document with flat sections.

Every field is checked before any work starts; problems raise
``ConfigError`` naming the offending ``section.field``.

Example::

    algorithm: rsac
    env:
      name: grid_chase
    demo:
      name: grid_loop
      epsilon: 0.01
    agent:
      alpha: 0.005
      ce_target: 2.0
    train:
      total_steps: 100000
      eval_every: 2000
      seeds: [0, 1, 2, 3, 4]
    study:
      levels: [1.5, 2.0, 2.5]
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields

import yaml

ALGORITHMS = ("rsac", "sac", "shaped-baseline", "tabular-solve")
ENVS = ("grid_chase", "point_chase", "bandit")
DEMOS = ("grid_loop", "point_circle", "none")


class ConfigError(ValueError):
    pass


@dataclass
class EnvSection:
    name: str = "grid_chase"
    width: int = 8
    height: int = 8
    max_steps: int = 200
    far_threshold: float | None = None  # None: the environment's own default
    aux_reward: float = -0.01
    task_reward: float = 1.0
    center: float = 0.3  # bandit only


@dataclass
class DemoSection:
    name: str = "grid_loop"
    epsilon: float = 0.01
    episodes: int = 32
    episode_steps: int = 50
    # "lower_half": cycle demo episodes over every lower-half start cell;
    # "default": always start where the agent starts
    starts: str = "lower_half"
    sample: bool = False
    path: str | None = None  # load transitions from a JSON-lines file instead


@dataclass
class AgentSection:
    alpha: float = 0.005
    beta0: float = 0.0
    ce_target: float = 2.0
    lr_beta: float = 1e-5
    lr_q: float = 3e-4
    lr_pi: float = 3e-4
    tau: float = 0.005
    gamma: float = 0.99
    batch_size: int = 64
    buffer_capacity: int = 100_000
    hidden: list = field(default_factory=lambda: [64, 64])
    env_steps_per_iter: int = 4
    grad_steps_per_iter: int = 1
    learning_starts: int = 1000
    twin_critic: bool = False
    reuse_dual_batch: bool = True
    demo_updates: bool = True
    update_beta: bool = True
    discrete_target: str = "expected"


@dataclass
class TrainSection:
    total_steps: int = 100_000
    eval_every: int = 2000
    eval_episodes: int = 10
    final_eval_episodes: int = 50
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    checkpoint_every: int = 0  # 0 = only at the end


@dataclass
class StudySection:
    levels: list = field(default_factory=lambda: [1.5, 2.0, 2.5])


@dataclass
class BaselineSection:
    imitation_rewards: list = field(default_factory=lambda: [round(0.1 * k, 1) for k in range(11)])
    task_reward: float = 1.0
    new_reward: str = "env"
    steps: int = 40_000
    eval_episodes: int = 10


@dataclass
class ExperimentConfig:
    algorithm: str = "rsac"
    env: EnvSection = field(default_factory=EnvSection)
    demo: DemoSection = field(default_factory=DemoSection)
    agent: AgentSection = field(default_factory=AgentSection)
    train: TrainSection = field(default_factory=TrainSection)
    study: StudySection = field(default_factory=StudySection)
    baseline: BaselineSection = field(default_factory=BaselineSection)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def with_overrides(self, **sections) -> "ExperimentConfig":
        """Copy with ``section={field: value}`` overrides, re-validated."""
        d = self.to_dict()
        for name, values in sections.items():
            if isinstance(values, dict):
                d[name].update(values)
            else:
                d[name] = values
        return from_dict(d)


SECTIONS = {"env": EnvSection, "demo": DemoSection, "agent": AgentSection, "train": TrainSection,
            "study": StudySection, "baseline": BaselineSection}


class _AsFloat:
    type = "float"

    def __init__(self, name):
        self.name = name


def _coerce(section: str, f, value):
    where = f"{section}.{f.name}"
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, (int, float)) or float(value) != int(value):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return int(value)
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        if not math.isfinite(value):
            raise ConfigError(f"{where}: must be finite, got {value!r}")
        return float(value)
    if kind == "float | None":
        return None if value is None else _coerce(section, _AsFloat(f.name), value)
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if kind == "str | None":
        if value is not None and not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string or null, got {value!r}")
        return value
    if kind == "list":
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return list(value)
    return value


def _section(name: str, cls, raw) -> object:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected a mapping of fields, got {type(raw).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"{name}.{unknown[0]}: unknown field (known: {', '.join(known)})")
    kwargs = {k: _coerce(name, known[k], v) for k, v in raw.items()}
    return cls(**kwargs)


def _require(cond: bool, where: str, msg: str):
    if not cond:
        raise ConfigError(f"{where}: {msg}")


def _number_list(where: str, values, integer: bool = False) -> list:
    out = []
    for v in values:
        ok = isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)
        if integer:
            ok = ok and float(v) == int(v)
        _require(ok, where, f"entries must be finite {'integers' if integer else 'numbers'}, got {v!r}")
        out.append(int(v) if integer else float(v))
    return out


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    _require(cfg.algorithm in ALGORITHMS, "algorithm", f"must be one of {ALGORITHMS}, got {cfg.algorithm!r}")
    e, d, a, t, s, b = cfg.env, cfg.demo, cfg.agent, cfg.train, cfg.study, cfg.baseline
    _require(e.name in ENVS, "env.name", f"must be one of {ENVS}, got {e.name!r}")
    _require(e.width >= 2 and e.height >= 2, "env.width", "grid must be at least 2x2")
    _require(e.max_steps >= 1, "env.max_steps", "must be positive")
    _require(d.name in DEMOS, "demo.name", f"must be one of {DEMOS}, got {d.name!r}")
    expected_demo = {"grid_chase": ("grid_loop", "none"), "point_chase": ("point_circle", "none"),
                     "bandit": ("none",)}[e.name]
    _require(d.name in expected_demo, "demo.name", f"{d.name!r} does not fit env {e.name!r}")
    _require(0 < d.epsilon < 1, "demo.epsilon", "must lie in (0, 1)")
    _require(d.episodes >= 1, "demo.episodes", "must be positive")
    _require(d.episode_steps >= 1, "demo.episode_steps", "must be positive")
    _require(d.starts in ("lower_half", "default"), "demo.starts", "must be 'lower_half' or 'default'")
    _require(a.alpha > 0, "agent.alpha", "temperature must be positive")
    _require(a.beta0 >= 0, "agent.beta0", "multiplier must be non-negative")
    _require(a.ce_target > 0, "agent.ce_target", "must be positive")
    _require(a.lr_beta >= 0, "agent.lr_beta", "must be non-negative")
    _require(a.lr_q > 0 and a.lr_pi > 0, "agent.lr_q", "learning rates must be positive")
    _require(0 < a.tau <= 1, "agent.tau", "must lie in (0, 1]")
    _require(0 <= a.gamma < 1, "agent.gamma", "must lie in [0, 1)")
    _require(a.batch_size >= 2, "agent.batch_size", "must be at least 2")
    _require(a.buffer_capacity >= 1, "agent.buffer_capacity", "must be positive")
    a.hidden = _number_list("agent.hidden", a.hidden, integer=True)
    _require(all(h >= 1 for h in a.hidden), "agent.hidden", "layer widths must be positive")
    _require(a.env_steps_per_iter >= 1, "agent.env_steps_per_iter", "must be positive")
    _require(a.grad_steps_per_iter >= 1, "agent.grad_steps_per_iter", "must be positive")
    _require(a.learning_starts >= 0, "agent.learning_starts", "must be non-negative")
    _require(a.discrete_target in ("expected", "sampled"), "agent.discrete_target",
             "must be 'expected' or 'sampled'")
    _require(t.total_steps >= 1, "train.total_steps", "must be positive")
    _require(1 <= t.eval_every <= t.total_steps, "train.eval_every", "must lie in [1, total_steps]")
    _require(t.eval_every % a.env_steps_per_iter == 0, "train.eval_every",
             "must be a multiple of agent.env_steps_per_iter")
    _require(t.total_steps % t.eval_every == 0, "train.total_steps", "must be a multiple of train.eval_every")
    _require(t.eval_episodes >= 1, "train.eval_episodes", "must be positive")
    _require(t.final_eval_episodes >= 1, "train.final_eval_episodes", "must be positive")
    t.seeds = _number_list("train.seeds", t.seeds, integer=True)
    _require(len(t.seeds) >= 1, "train.seeds", "need at least one seed")
    _require(len(set(t.seeds)) == len(t.seeds), "train.seeds", f"seeds must be distinct, got {t.seeds}")
    _require(all(x >= 0 for x in t.seeds), "train.seeds", "seeds must be non-negative")
    _require(t.checkpoint_every >= 0, "train.checkpoint_every", "must be non-negative")
    _require(t.checkpoint_every % a.env_steps_per_iter == 0, "train.checkpoint_every",
             "must be a multiple of agent.env_steps_per_iter")
    s.levels = _number_list("study.levels", s.levels)
    _require(all(v > 0 for v in s.levels), "study.levels", "levels must be positive")
    _require(len(set(s.levels)) == len(s.levels), "study.levels", "levels must be distinct")
    b.imitation_rewards = _number_list("baseline.imitation_rewards", b.imitation_rewards)
    _require(len(b.imitation_rewards) >= 1, "baseline.imitation_rewards", "need at least one value")
    _require(b.new_reward in ("env", "zero"), "baseline.new_reward", "must be 'env' or 'zero'")
    _require(b.steps >= 1, "baseline.steps", "must be positive")
    _require(b.eval_episodes >= 1, "baseline.eval_episodes", "must be positive")
    if cfg.algorithm in ("rsac", "shaped-baseline"):
        _require(d.name != "none", "demo.name", f"algorithm {cfg.algorithm!r} needs a demonstrator")
    if cfg.algorithm == "tabular-solve":
        _require(e.name == "grid_chase", "algorithm", "tabular-solve needs env.name = grid_chase")
    return cfg


def from_dict(raw) -> ExperimentConfig:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config: expected a mapping at top level, got {type(raw).__name__}")
    raw = copy.deepcopy(raw)
    unknown = sorted(set(raw) - set(SECTIONS) - {"algorithm"})
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown section (known: algorithm, {', '.join(SECTIONS)})")
    algorithm = raw.get("algorithm", "rsac")
    if not isinstance(algorithm, str):
        raise ConfigError(f"algorithm: expected a string, got {algorithm!r}")
    parts = {name: _section(name, cls, raw.get(name)) for name, cls in SECTIONS.items()}
    return validate(ExperimentConfig(algorithm=algorithm, **parts))


def loads(text: str) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config: not valid YAML ({exc})") from None
    return from_dict(raw)


def load(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path} ({exc.strerror})") from None
    return loads(text)
