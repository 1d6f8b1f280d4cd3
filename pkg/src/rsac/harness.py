"""Experiment orchestration: per-seed training with periodic evaluation,
multi-seed runs, constraint-level studies and the shaped-baseline sweep.

Output layout of a training run (``out``)::

    out/config.yaml          config snapshot
    out/manifest.json        config hash, package version, wall time, status
    out/metrics.csv          all seeds, ordered by seed then step
    out/seed_<k>/metrics.csv
    out/seed_<k>/checkpoint.json.gz

A constraint study writes one such directory per level (``level_<c>``)
plus ``summary.csv``.
"""
from __future__ import annotations

import csv
import gzip
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .agent import AgentConfig, RSACAgent, TabularPolicyActor, rollout_stats
from .baseline import ShapedAgent, ShapedConfig, sweep_and_report
from .config import ExperimentConfig, from_dict
from .envs import (ContinuousBandit, GridChase, GridLoopDemo, PointChase, PointCircleDemo,
                   as_discrete_mdp, load_transitions, record_demo)
from .nn import TrainingError
from .sac import SACAgent
from .tabular import DualState, q_iteration

METRICS_HEADER = ("seed", "step", "grad_steps", "ce", "task_reward", "total_reward", "beta", "alpha",
                  "critic_loss", "policy_loss", "ce_target")
SUMMARY_HEADER = ("level", "n_seeds", "ce_mean", "ce_se", "total_reward_mean", "total_reward_se",
                  "beta_mean", "beta_se", "stabilization_step_mean", "stabilization_step_se")


class DivergenceError(RuntimeError):
    """A metric became non-finite; rows written so far are kept on disk."""


# ---------------------------------------------------------------------------
# builders

def make_env(cfg: ExperimentConfig):
    e = cfg.env
    extra = {} if e.far_threshold is None else {"far_threshold": e.far_threshold}
    if e.name == "grid_chase":
        return GridChase(e.width, e.height, e.max_steps, aux_reward=e.aux_reward, task_reward=e.task_reward,
                         **extra)
    if e.name == "point_chase":
        return PointChase(max_steps=e.max_steps, aux_reward=e.aux_reward, task_reward=e.task_reward, **extra)
    return ContinuousBandit(e.center)


def make_demo(cfg: ExperimentConfig, env):
    d = cfg.demo
    if d.name == "grid_loop":
        return GridLoopDemo(env, d.epsilon)
    if d.name == "point_circle":
        return PointCircleDemo(env)
    return None


def demo_transitions(cfg: ExperimentConfig, demo) -> list:
    """Contents of the demonstration buffer: loaded from ``demo.path`` or recorded."""
    d = cfg.demo
    if demo is None:
        return []
    if d.path:
        return load_transitions(d.path)
    rec_env = make_env(cfg)
    rec_env.max_steps = d.episode_steps
    starts = None
    if d.starts == "lower_half" and isinstance(rec_env, GridChase):
        starts = [c for c in rec_env.lower_half_cells() if c != tuple(rec_env.target)]
    rng = np.random.default_rng([0, d.episodes]) if d.sample else None
    return record_demo(rec_env, demo, d.episodes, rng, sample=d.sample, starts=starts)


def agent_config(cfg: ExperimentConfig, env) -> AgentConfig:
    a = cfg.agent
    discrete = bool(env.discrete)
    return AgentConfig(
        mode="discrete" if discrete else "continuous",
        obs_dim=int(env.obs_dim), state_dim=int(env.state_dim),
        n_actions=int(getattr(env, "n_actions", 2)), action_dim=int(getattr(env, "action_dim", 1)),
        hidden=tuple(a.hidden), alpha=a.alpha, beta0=a.beta0, ce_target=a.ce_target, lr_beta=a.lr_beta,
        lr_q=a.lr_q, lr_pi=a.lr_pi, tau=a.tau, gamma=a.gamma, batch_size=a.batch_size,
        buffer_capacity=a.buffer_capacity, env_steps_per_iter=a.env_steps_per_iter,
        grad_steps_per_iter=a.grad_steps_per_iter, learning_starts=a.learning_starts,
        twin_critic=a.twin_critic, reuse_dual_batch=a.reuse_dual_batch, demo_updates=a.demo_updates,
        update_beta=a.update_beta, discrete_target=a.discrete_target)


def shaped_config(cfg: ExperimentConfig, imitation_reward: float | None = None) -> ShapedConfig:
    b = cfg.baseline
    value = b.imitation_rewards[0] if imitation_reward is None else imitation_reward
    return ShapedConfig(value, b.task_reward, b.new_reward, tuple(b.imitation_rewards))


def build_agent(cfg: ExperimentConfig, seed: int, env, demo):
    acfg = agent_config(cfg, env)
    if cfg.algorithm == "sac":
        return SACAgent(acfg, env.observe, demo, seed)
    if cfg.algorithm == "shaped-baseline":
        agent = ShapedAgent(acfg, env.observe, demo, seed, shaped_config(cfg))
    else:
        agent = RSACAgent(acfg, env.observe, demo, seed)
    agent.buf_demo.extend(demo_transitions(cfg, demo))
    return agent


# ---------------------------------------------------------------------------
# single-seed training

def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


class Trainer:
    """Trains one seed, evaluating every ``eval_every`` environment steps.

    Evaluation episodes use their own generator ``default_rng([seed, step])``
    so they never perturb training randomness. The final evaluation uses
    ``final_eval_episodes`` episodes.
    """

    def __init__(self, cfg: ExperimentConfig, seed: int):
        self.cfg, self.seed = cfg, int(seed)
        self.env = make_env(cfg)
        self.eval_env = make_env(cfg)
        self.demo = make_demo(cfg, self.env)
        self.agent = build_agent(cfg, self.seed, self.env, self.demo)
        self.rows: list[dict] = []
        self.losses = {"critic_loss": 0.0, "policy_loss": 0.0}

    @property
    def step(self) -> int:
        return self.agent.env_steps

    @property
    def done(self) -> bool:
        return self.step >= self.cfg.train.total_steps

    def evaluate(self, episodes: int) -> dict:
        rng = np.random.default_rng([self.seed, self.step])
        return rollout_stats(self.agent, self.eval_env, self.demo, episodes, rng)

    def _row(self, stats: dict) -> dict:
        row = {"seed": self.seed, "step": self.step, "grad_steps": self.agent.grad_steps,
               "ce": stats["ce"], "task_reward": stats["task_reward"],
               "total_reward": stats["total_reward"], "beta": self.agent.beta,
               "alpha": self.agent.alpha, "critic_loss": self.losses["critic_loss"],
               "policy_loss": self.losses["policy_loss"], "ce_target": self.cfg.agent.ce_target}
        bad = [k for k, v in row.items() if not math.isfinite(float(v))]
        if bad:
            raise DivergenceError(f"seed {self.seed}, step {self.step}: non-finite {', '.join(bad)}")
        return row

    def train_step(self) -> dict | None:
        """One agent iteration; returns a metrics row when an evaluation is due."""
        try:
            m = self.agent.train_iteration(self.env)
        except TrainingError as exc:
            raise DivergenceError(f"seed {self.seed}, step {self.step}: {exc}") from exc
        for k in self.losses:
            if k in m:
                self.losses[k] = float(m[k])
        if self.step % self.cfg.train.eval_every:
            return None
        t = self.cfg.train
        episodes = t.final_eval_episodes if self.step >= t.total_steps else t.eval_episodes
        row = self._row(self.evaluate(episodes))
        self.rows.append(row)
        return row

    def run(self, until: int | None = None, on_row=None, on_step=None) -> list[dict]:
        stop = self.cfg.train.total_steps if until is None else min(until, self.cfg.train.total_steps)
        while self.step < stop:
            row = self.train_step()
            if row is not None and on_row is not None:
                on_row(row)
            if on_step is not None:
                on_step(self)
        return self.rows

    # persistence -----------------------------------------------------

    def state_dict(self) -> dict:
        return {"seed": self.seed, "config": self.cfg.to_dict(), "rows": self.rows, "losses": self.losses,
                "agent_class": type(self.agent).__name__,
                "agent": self.agent.to_dict(include_buffers=True, env=self.env)}

    def save(self, path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        with gzip.open(tmp, "wt") as fh:
            json.dump(self.state_dict(), fh)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "Trainer":
        with gzip.open(path, "rt") as fh:
            d = json.load(fh)
        cfg = from_dict(d["config"])
        trainer = cls(cfg, d["seed"])
        agent_cls = type(trainer.agent)
        agent = agent_cls.from_dict(d["agent"], trainer.env.observe, trainer.demo, trainer.env)
        if isinstance(trainer.agent, ShapedAgent):
            agent.shaped = trainer.agent.shaped
        trainer.agent = agent
        trainer.rows = d["rows"]
        trainer.losses = d["losses"]
        return trainer


def tabular_rows(cfg: ExperimentConfig, seed: int) -> list[dict]:
    """Exact solve of the GridChase encoding; one evaluation row at step 0."""
    env = make_env(cfg)
    demo = make_demo(cfg, env)
    a = cfg.agent
    mdp = as_discrete_mdp(env, a.gamma)
    table = demo.tabular() if demo is not None else np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions)
    dual = DualState(a.beta0, a.alpha, a.ce_target, a.lr_beta)
    res = q_iteration(mdp, table, dual)
    actor = TabularPolicyActor(res.policy[:env.n_cells], env.cell_index)
    stats = rollout_stats(actor, env, demo, cfg.train.final_eval_episodes, np.random.default_rng([seed, 0]))
    return [{"seed": seed, "step": 0, "grad_steps": res.iterations, "ce": stats["ce"],
             "task_reward": stats["task_reward"], "total_reward": stats["total_reward"], "beta": a.beta0,
             "alpha": a.alpha, "critic_loss": res.residual, "policy_loss": 0.0, "ce_target": a.ce_target}]


# ---------------------------------------------------------------------------
# multi-seed runs

def write_metrics(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_HEADER)
        for r in rows:
            w.writerow([_fmt(r[k]) for k in METRICS_HEADER])


def read_metrics(path) -> list[dict]:
    """Rows of a metrics CSV as floats (seed/step/grad_steps as ints)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty metrics file")
        if tuple(header) != METRICS_HEADER:
            raise ValueError(f"{path}: header {header} does not match {list(METRICS_HEADER)}")
        rows = []
        for line in reader:
            if len(line) != len(header):
                raise ValueError(f"{path}: row with {len(line)} fields, expected {len(header)}")
            row = {k: float(v) for k, v in zip(header, line)}
            for k in ("seed", "step", "grad_steps"):
                row[k] = int(row[k])
            rows.append(row)
    return rows


def run_seed(cfg_dict: dict, seed: int, seed_dir: str, resume: bool = False) -> list[dict]:
    """Train one seed into ``seed_dir``; worker entry point (picklable arguments)."""
    cfg = from_dict(cfg_dict)
    seed_dir = Path(seed_dir)
    seed_dir.mkdir(parents=True, exist_ok=True)
    if cfg.algorithm == "tabular-solve":
        rows = tabular_rows(cfg, seed)
        write_metrics(rows, seed_dir / "metrics.csv")
        return rows
    ckpt = seed_dir / "checkpoint.json.gz"
    trainer = Trainer.load(ckpt) if resume and ckpt.exists() else Trainer(cfg, seed)
    every = cfg.train.checkpoint_every

    def on_step(tr):
        if every and tr.step % every == 0:
            tr.save(ckpt)

    try:
        trainer.run(on_row=lambda _: write_metrics(trainer.rows, seed_dir / "metrics.csv"), on_step=on_step)
    finally:
        write_metrics(trainer.rows, seed_dir / "metrics.csv")
    trainer.save(ckpt)
    return trainer.rows


def _manifest(cfg: ExperimentConfig, out: Path, started: float, status: str, **extra) -> None:
    doc = {"config_hash": cfg.hash(), "version": __version__, "algorithm": cfg.algorithm,
           "seeds": cfg.train.seeds, "wall_time_s": round(time.time() - started, 3), "status": status}
    doc.update(extra)
    (out / "manifest.json").write_text(json.dumps(doc, indent=2) + "\n")


def run_training(cfg: ExperimentConfig, out, workers: int = 1, resume: bool = False,
                 log=None) -> list[dict]:
    """Train every seed; write metrics, checkpoints, config snapshot and manifest."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    (out / "config.yaml").write_text(cfg.to_yaml())
    seeds = list(cfg.train.seeds)
    dirs = [str(out / f"seed_{s}") for s in seeds]
    status, error = "ok", None
    try:
        if workers > 1 and len(seeds) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(run_seed, cfg.to_dict(), s, d, resume) for s, d in zip(seeds, dirs)]
                for f in futures:
                    f.result()
        else:
            for s, d in zip(seeds, dirs):
                run_seed(cfg.to_dict(), s, d, resume)
                if log:
                    log(f"seed {s} finished")
    except DivergenceError as exc:
        status, error = "diverged", str(exc)
        raise
    finally:
        rows = []
        for d in dirs:
            p = Path(d) / "metrics.csv"
            if p.exists():
                rows += read_metrics(p)
        write_metrics(rows, out / "metrics.csv")
        _manifest(cfg, out, started, status, **({"error": error} if error else {}))
    return rows


# ---------------------------------------------------------------------------
# constraint study

def stderr(values) -> float:
    v = np.asarray(values, dtype=float)
    return float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0


def stabilization_step(steps, betas, frac: float = 0.1) -> int:
    """First evaluation step after which beta stays within ``frac`` of its range of its final value."""
    steps, betas = list(steps), np.asarray(betas, dtype=float)
    if not steps:
        raise ValueError("need at least one evaluation")
    span = float(betas.max() - betas.min())
    if span == 0.0:
        return int(steps[0])
    outside = np.nonzero(np.abs(betas - betas[-1]) > frac * span)[0]
    return int(steps[0] if outside.size == 0 else steps[outside[-1] + 1])


def summarize_level(level: float, rows) -> dict:
    by_seed: dict[int, list] = {}
    for r in rows:
        by_seed.setdefault(r["seed"], []).append(r)
    finals, stabs = [], []
    for seed in sorted(by_seed):
        rs = sorted(by_seed[seed], key=lambda r: r["step"])
        finals.append(rs[-1])
        stabs.append(stabilization_step([r["step"] for r in rs], [r["beta"] for r in rs]))
    col = lambda k: [f[k] for f in finals]
    return {"level": float(level), "n_seeds": len(finals),
            "ce_mean": float(np.mean(col("ce"))), "ce_se": stderr(col("ce")),
            "total_reward_mean": float(np.mean(col("total_reward"))), "total_reward_se": stderr(col("total_reward")),
            "beta_mean": float(np.mean(col("beta"))), "beta_se": stderr(col("beta")),
            "stabilization_step_mean": float(np.mean(stabs)), "stabilization_step_se": stderr(stabs)}


def write_summary(summary, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_HEADER)
        for s in summary:
            w.writerow([_fmt(s[k]) for k in SUMMARY_HEADER])


def level_dirname(level: float) -> str:
    return f"level_{level:g}"


def run_constraint_study(cfg: ExperimentConfig, out, workers: int = 1, log=None) -> list[dict]:
    """Full seed grid for every ce_target level; returns the per-level summary."""
    if len(cfg.study.levels) < 2:
        raise ValueError("a constraint study needs at least two ce_target levels")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    (out / "config.yaml").write_text(cfg.to_yaml())
    summary = []
    for level in cfg.study.levels:
        level_cfg = cfg.with_overrides(agent={"ce_target": level})
        rows = run_training(level_cfg, out / level_dirname(level), workers=workers)
        summary.append(summarize_level(level, rows))
        if log:
            s = summary[-1]
            log(f"level {level:g}: ce {s['ce_mean']:.3f} ± {s['ce_se']:.3f}, "
                f"total reward {s['total_reward_mean']:.3f} ± {s['total_reward_se']:.3f}, "
                f"beta {s['beta_mean']:.4g}")
    write_summary(summary, out / "summary.csv")
    _manifest(cfg, out, started, "ok", levels=cfg.study.levels)
    return summary


# ---------------------------------------------------------------------------
# shaped-baseline sweep

def run_baseline_sweep(cfg: ExperimentConfig, out, log=None) -> list[dict]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    (out / "config.yaml").write_text(cfg.to_yaml())
    env = make_env(cfg)
    demo = make_demo(cfg, env)
    transitions = demo_transitions(cfg, demo)
    b = cfg.baseline
    rows = sweep_and_report(lambda: make_env(cfg), demo, transitions, shaped_config(cfg), b.steps,
                            b.eval_episodes, cfg.train.seeds, agent_config(cfg, env), env.observe,
                            out / "baseline.csv")
    _manifest(cfg, out, started, "ok")
    if log:
        for r in rows:
            log(f"imitation reward {r['imitation_reward']:.2f} seed {r['seed']}: "
                f"ce {r['ce']:.3f}, mission reward {r['mission_reward']:.3f}")
    return rows
