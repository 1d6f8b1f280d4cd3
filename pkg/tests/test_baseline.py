import csv

import numpy as np
import pytest

from rsac.agent import rollout_stats
from rsac.baseline import REPORT_HEADER, ShapedAgent, ShapedConfig, run_shaped_agent, sweep_and_report
from rsac.config import from_dict
from rsac.harness import agent_config, demo_transitions, make_demo, make_env


def setup(**agent):
    cfg = from_dict({"algorithm": "shaped-baseline",
                     "agent": {"hidden": [32], "batch_size": 32, "learning_starts": 200, **agent}})
    env = make_env(cfg)
    demo = make_demo(cfg, env)
    return cfg, env, demo, demo_transitions(cfg, demo), agent_config(cfg, env)


def test_mixed_batch_relabels_demo_half():
    cfg, env, demo, trs, acfg = setup()
    agent = ShapedAgent(acfg, env.observe, demo, 0, ShapedConfig(0.7))
    agent.buf_demo.extend(trs)
    for _ in range(30):
        agent.env_step(env)
    b = agent.mixed_batch()
    assert len(b) == 32
    assert np.all(b.rewards[:16] == 0.7)
    assert np.all(b.states[:16, 1] < 4)
    zero = ShapedAgent(acfg, env.observe, demo, 0, ShapedConfig(0.7, new_reward="zero"))
    zero.buf_demo.extend(trs)
    zero.buf_new.extend(agent.buf_new.transitions())
    assert np.all(zero.mixed_batch().rewards[16:] == 0.0)


def test_shaped_config_validation():
    with pytest.raises(ValueError):
        ShapedConfig(sweep=())
    with pytest.raises(ValueError):
        ShapedConfig(new_reward="both")
    with pytest.raises(ValueError):
        ShapedConfig(float("nan"))


def test_pure_imitation_reward_stays_on_loop():
    cfg, env, demo, trs, acfg = setup()
    agent = run_shaped_agent(env, trs, ShapedConfig(1.0, new_reward="zero"), 15000, 0, acfg, env.observe, demo)
    eval_env = make_env(cfg)
    rng = np.random.default_rng(0)
    lower = total = 0
    for _ in range(5):
        s = eval_env.reset(rng)
        while not eval_env.finished:
            a, _ = agent.sample_action(s, rng)
            s, _, _ = eval_env.step(a)
            lower += s[1] < 4
            total += 1
    assert lower / total >= 0.95


def test_imitation_reward_lowers_ce():
    cfg, env, demo, trs, acfg = setup()
    ce = {}
    for value in (0.0, 1.0):
        agent = run_shaped_agent(make_env(cfg), trs, ShapedConfig(value), 15000, 0, acfg, env.observe, demo)
        ce[value] = rollout_stats(agent, make_env(cfg), demo, 5, np.random.default_rng(1))["ce"]
    assert ce[1.0] < ce[0.0]


def test_sweep_of_one_and_sorting(tmp_path):
    cfg, env, demo, trs, acfg = setup(learning_starts=50)
    rows = sweep_and_report(lambda: make_env(cfg), demo, trs, ShapedConfig(sweep=(0.5,)), 400, 2, [0],
                            acfg, env.observe, tmp_path / "one.csv")
    assert len(rows) == 1 and rows[0]["imitation_reward"] == 0.5
    rows = sweep_and_report(lambda: make_env(cfg), demo, trs, ShapedConfig(sweep=(0.9, 0.1, 0.4)), 200, 1,
                            [1, 0], acfg, env.observe, tmp_path / "three.csv")
    assert [(r["imitation_reward"], r["seed"]) for r in rows] == [
        (0.1, 1), (0.1, 0), (0.4, 1), (0.4, 0), (0.9, 1), (0.9, 0)]
    with open(tmp_path / "three.csv") as fh:
        reader = csv.DictReader(fh)
        assert tuple(reader.fieldnames) == REPORT_HEADER
        assert [float(r["imitation_reward"]) for r in reader] == [0.1, 0.1, 0.4, 0.4, 0.9, 0.9]
