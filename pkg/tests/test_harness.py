import filecmp
import json

import numpy as np
import pytest
import yaml

from rsac import harness
from rsac.agent import RSACAgent
from rsac.config import from_dict
from rsac.harness import (
    METRICS_HEADER,
    DivergenceError,
    Trainer,
    read_metrics,
    run_constraint_study,
    run_training,
    stabilization_step,
    summarize_level,
    write_metrics,
)
from rsac.nn import TrainingError


def tiny(**over):
    doc = {"agent": {"hidden": [16], "batch_size": 16, "learning_starts": 100},
           "demo": {"episodes": 4, "episode_steps": 20},
           "train": {"total_steps": 2000, "eval_every": 500, "eval_episodes": 2, "final_eval_episodes": 3,
                     "seeds": [0]}}
    for k, v in over.items():
        doc.setdefault(k, {})
        if isinstance(v, dict):
            doc[k].update(v)
        else:
            doc[k] = v
    return from_dict(doc)


def test_tiny_run_writes_rows_manifest_and_checkpoint(tmp_path):
    cfg = tiny(train={"total_steps": 5000, "eval_every": 1000})
    rows = run_training(cfg, tmp_path)
    assert len(rows) >= 5000 // 1000
    assert [r["step"] for r in rows] == [1000, 2000, 3000, 4000, 5000]
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["config_hash"] == cfg.hash() and man["status"] == "ok" and "wall_time_s" in man
    assert from_dict(yaml.safe_load((tmp_path / "config.yaml").read_text())) == cfg
    assert (tmp_path / "seed_0" / "checkpoint.json.gz").exists()
    back = read_metrics(tmp_path / "metrics.csv")
    assert back == rows
    assert all(np.isfinite(list(r.values())).all() for r in rows)


def test_runs_are_byte_identical(tmp_path):
    cfg = tiny()
    run_training(cfg, tmp_path / "a")
    run_training(cfg, tmp_path / "b")
    assert filecmp.cmp(tmp_path / "a" / "metrics.csv", tmp_path / "b" / "metrics.csv", shallow=False)


def test_resume_from_checkpoint_matches_uninterrupted(tmp_path):
    cfg = tiny()
    straight = Trainer(cfg, 0).run()
    part = Trainer(cfg, 0)
    part.run(until=1000)
    part.save(tmp_path / "ck.json.gz")
    resumed = Trainer.load(tmp_path / "ck.json.gz").run()
    assert resumed == straight


def test_sac_equals_rsac_without_demo_influence(tmp_path):
    agent = {"beta0": 0.0, "lr_beta": 0.0, "demo_updates": False}
    a = run_training(tiny(algorithm="sac", agent=agent), tmp_path / "sac")
    b = run_training(tiny(algorithm="rsac", agent=agent), tmp_path / "rsac")
    assert a == b


def test_divergence_preserves_partial_results(tmp_path, monkeypatch):
    original = RSACAgent.gradient_step

    def flaky(self):
        if self.env_steps > 1200:
            raise TrainingError("non-finite gradient in critic.layers[0].weight")
        return original(self)

    monkeypatch.setattr(RSACAgent, "gradient_step", flaky)
    with pytest.raises(DivergenceError):
        run_training(tiny(), tmp_path)
    rows = read_metrics(tmp_path / "metrics.csv")
    assert [r["step"] for r in rows] == [500, 1000]
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["status"] == "diverged" and "critic" in man["error"]


def test_read_metrics_rejects_other_schema(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("seed,step,ce\n0,1,0.5\n")
    with pytest.raises(ValueError, match="header"):
        read_metrics(p)


def test_metrics_round_trip_exact(tmp_path):
    row = {k: 0.1 * i + 1 / 3 for i, k in enumerate(METRICS_HEADER)}
    row.update(seed=2, step=10, grad_steps=7)
    write_metrics([row], tmp_path / "m.csv")
    assert read_metrics(tmp_path / "m.csv") == [row]


def test_stabilization_step():
    steps = [1, 2, 3, 4, 5, 6]
    assert stabilization_step(steps, [0.0, 0.5, 1.0, 0.95, 1.0, 1.0]) == 3
    assert stabilization_step(steps, [0.0, 1.0, 0.0, 1.0, 0.0, 1.0]) == 6
    assert stabilization_step(steps, [0.2] * 6) == 1


def test_summarize_level_standard_errors():
    rows = []
    for seed, (ce, rew) in enumerate([(1.0, 0.5), (2.0, 0.7), (3.0, 0.9)]):
        rows.append({"seed": seed, "step": 1, "ce": 9.0, "total_reward": 0.0, "beta": 0.0})
        rows.append({"seed": seed, "step": 2, "ce": ce, "total_reward": rew, "beta": 1.0})
    s = summarize_level(1.5, rows)
    assert s["n_seeds"] == 3 and s["ce_mean"] == pytest.approx(2.0)
    assert s["ce_se"] == pytest.approx(1.0 / np.sqrt(3))
    assert s["total_reward_se"] == pytest.approx(0.2 / np.sqrt(3))
    assert s["stabilization_step_mean"] == 2.0


def test_constraint_study_counts(tmp_path):
    cfg = tiny(train={"total_steps": 1000, "eval_every": 500, "seeds": [0, 1]}, study={"levels": [1.5, 2.5]})
    summary = run_constraint_study(cfg, tmp_path)
    assert [s["level"] for s in summary] == [1.5, 2.5]
    assert all(s["n_seeds"] == 2 for s in summary)
    lines = (tmp_path / "summary.csv").read_text().splitlines()
    assert len(lines) == 3
    for level in ("level_1.5", "level_2.5"):
        rows = read_metrics(tmp_path / level / "metrics.csv")
        assert len({r["seed"] for r in rows}) == 2
    with pytest.raises(ValueError):
        run_constraint_study(tiny(study={"levels": [2.0]}), tmp_path / "x")


def test_tabular_solve_algorithm(tmp_path):
    rows = run_training(tiny(algorithm="tabular-solve", agent={"alpha": 0.05, "beta0": 0.5}), tmp_path)
    assert len(rows) == 1 and rows[0]["critic_loss"] < 1e-10


def test_workers_match_serial(tmp_path):
    cfg = tiny(train={"seeds": [0, 1]})
    a = run_training(cfg, tmp_path / "serial")
    b = run_training(cfg, tmp_path / "pool", workers=2)
    assert a == b
