"""Harness: metrics, statistics, configuration, persistence, sweeps, CLI.

The pipeline runs in here use deliberately tiny budgets -- they validate
accounting, determinism and plumbing, not learning quality.
"""

import csv
import json
import math
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from phihp import checkpoint, cli
from phihp.agent import Td3Config
from phihp.config import (apply_overrides, config_hash, flatten, parse_file,
                          render)
from phihp.harness import (MetricRecord, RunConfig, emit_report, load_record,
                           restore_agent, restore_model, run_config,
                           run_many, run_pipeline, sample_efficiency, sweep,
                           welch_t, model_arrays, agent_arrays)
from phihp.model import DynamicsModel, ModelTrainConfig
from phihp.planner import PlanConfig


def tiny_cfg(pipeline, seed=0, **kw):
    """A pendulum run small enough for unit tests (seconds, not minutes)."""
    cfg = run_config("pendulum", pipeline, seed=seed)
    cfg.episodes = 2
    cfg.curve_episodes = 1
    cfg.budget = 300
    cfg.rounds = 2
    cfg.eval_every_imag = 50
    cfg.model = ModelTrainConfig(epochs=3, hidden=8, depth=2)
    cfg.plan = PlanConfig(horizon=3, iterations=1, n_random=20, n_policy=5,
                          n_elite=4, q_weight=1.5,
                          use_policy=pipeline == "phihp",
                          use_q=pipeline == "phihp")
    cfg.td3 = Td3Config(steps=60, warmup=50, batch=16, rollout_batch=8,
                        horizon=15, buffer_cap=2048, actor_width=16,
                        actor_depth=1, critic_width=16, critic_depth=2)
    for k, v in kw.items():
        setattr(cfg, k, v)
    return cfg


# ------------------------------------------------------------ sample efficiency

def test_sample_efficiency_examples():
    assert sample_efficiency([(0, 0), (1000, 50), (2000, 90), (3000, 100)]) == 2000
    assert sample_efficiency([(500, -3.0), (1000, -3.0)]) == 500  # flat curve
    # negative returns: threshold lives on the min-max normalized curve
    assert sample_efficiency([(0, -100), (10, -50), (20, -10), (30, -5)]) == 20


def test_sample_efficiency_sorts_and_validates():
    assert sample_efficiency([(2000, 90), (0, 0), (3000, 100), (1000, 50)]) == 2000
    with pytest.raises(ValueError):
        sample_efficiency([])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 10_000), st.floats(-1e4, 1e4)),
                min_size=1, max_size=12))
def test_sample_efficiency_matches_exhaustive_scan(curve):
    got = sample_efficiency(curve)
    pts = sorted((int(s), float(r)) for s, r in curve)
    lo = min(r for _, r in pts)
    hi = max(r for _, r in pts)
    eligible = [s for s, r in pts if r >= lo + 0.9 * (hi - lo)]
    assert got == min(eligible)  # the 90% level is always attained at the max


# ------------------------------------------------------------------- welch t

def test_welch_matches_scipy():
    rng = np.random.default_rng(0)
    a = rng.normal(0.0, 1.0, 10)
    b = rng.normal(0.6, 2.0, 14)
    rep = welch_t(a, b)
    t_ref, p_ref = stats.ttest_ind(a, b, equal_var=False)
    assert rep.t == pytest.approx(float(t_ref), rel=1e-12)
    assert rep.p == pytest.approx(float(p_ref), rel=1e-12)
    assert rep.significant == (rep.p < 0.05)


def test_welch_identical_groups():
    rep = welch_t([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert rep.t == 0.0 and rep.p == 1.0 and not rep.significant


def test_welch_separated_groups():
    rep = welch_t([0.0, 0.0, 0.0, 0.0], [10.0, 10.0, 10.0, 10.0001])
    assert rep.significant and rep.t < 0


def test_welch_degenerate_conventions():
    same = welch_t([5.0, 5.0], [5.0, 5.0])
    assert (same.t, same.p, same.significant) == (0.0, 1.0, False)
    apart = welch_t([5.0, 5.0], [6.0, 6.0])
    assert apart.p == 0.0 and apart.significant and apart.t == -math.inf
    with pytest.raises(ValueError):
        welch_t([1.0], [1.0, 2.0])


def test_welch_against_permutation_oracle():
    rng = np.random.default_rng(1)
    a = rng.normal(0.0, 1.0, 10)
    b = rng.normal(0.9, 1.0, 12)
    rep = welch_t(a, b)
    pooled = np.concatenate([a, b])
    obs = abs(a.mean() - b.mean())
    m = 100_000
    order = np.argsort(rng.random((m, pooled.size)), axis=1)
    perm = pooled[order]
    diff = np.abs(perm[:, :a.size].mean(axis=1) - perm[:, a.size:].mean(axis=1))
    p_perm = float((diff >= obs - 1e-12).mean())
    assert abs(rep.p - p_perm) <= 0.02


# -------------------------------------------------------------- configuration

def test_flatten_and_overrides():
    cfg = run_config("pendulum", "phihp")
    flat = flatten(cfg)
    assert flat["plan.horizon"] == 5
    assert flat["env"] == "pendulum"
    out = apply_overrides(cfg, {"plan.horizon": "7", "td3.steps": "123",
                                "model.lr": "1e-2", "plan.use_q": "false",
                                "env": "cartpole"})
    assert out.plan.horizon == 7 and isinstance(out.plan.horizon, int)
    assert out.td3.steps == 123
    assert out.model.lr == pytest.approx(0.01)
    assert out.plan.use_q is False
    assert out.env == "cartpole"
    # the original tree is untouched
    assert cfg.plan.horizon == 5 and cfg.env == "pendulum"


def test_unknown_override_key_is_fatal():
    cfg = run_config("pendulum", "phihp")
    with pytest.raises(KeyError):
        apply_overrides(cfg, {"plan.horizn": "7"})
    with pytest.raises(ValueError):
        apply_overrides(cfg, {"plan.use_q": "maybe"})


def test_config_hash_order_independent_and_value_sensitive():
    cfg = run_config("pendulum", "phihp")
    flat = flatten(cfg)
    reordered = dict(reversed(list(flat.items())))
    assert config_hash(flat) == config_hash(reordered)
    flat2 = dict(flat)
    flat2["plan.horizon"] = 6
    assert config_hash(flat) != config_hash(flat2)


def test_render_parse_roundtrip(tmp_path):
    cfg = run_config("cartpole", "ph_cem", seed=3)
    flat = flatten(cfg)
    path = tmp_path / "run.cfg"
    path.write_text(render(flat) + "\n# trailing comment\n")
    parsed = parse_file(str(path))
    rebuilt = apply_overrides(run_config("cartpole", "ph_cem", seed=3), parsed)
    assert flatten(rebuilt) == flat


def test_run_config_validates():
    with pytest.raises(ValueError):
        run_config("pendulum", "sac")
    with pytest.raises(TypeError):
        run_config("pendulum", "phihp", horizon=3)


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_roundtrip_bitwise(tmp_path):
    rng = np.random.default_rng(2)
    arrays = {"theta": rng.standard_normal(17), "layout": np.arange(8).reshape(2, 4)}
    meta = {"env": "pendulum", "seed": 4, "config_hash": "ab" * 32}
    path = str(tmp_path / "ck.npz")
    checkpoint.save(path, arrays, meta)
    back, meta2 = checkpoint.load(path)
    assert set(back) == {"theta", "layout"}
    np.testing.assert_array_equal(back["theta"], arrays["theta"])
    assert back["layout"].dtype == arrays["layout"].dtype
    assert meta2["env"] == "pendulum" and meta2["seed"] == 4


def test_checkpoint_reserved_key_and_version(tmp_path, monkeypatch):
    path = str(tmp_path / "bad.npz")
    with pytest.raises(ValueError):
        checkpoint.save(path, {"__meta__": np.zeros(1)})
    checkpoint.save(path, {"x": np.ones(2)}, {"env": "pendulum"})
    monkeypatch.setattr(checkpoint, "FORMAT_VERSION", 99)
    with pytest.raises(ValueError):
        checkpoint.load(path)


def test_model_and_agent_restore_exactly(tmp_path):
    rng = np.random.default_rng(5)
    model = DynamicsModel.create("pendulum", cfg=ModelTrainConfig(hidden=8),
                                 rng=rng, perturb=0.1)
    path = str(tmp_path / "model.npz")
    checkpoint.save(path, model_arrays(model))
    arrays, _ = checkpoint.load(path)
    twin = restore_model("pendulum", arrays, cfg=ModelTrainConfig(hidden=8))
    S = rng.uniform(-1, 1, (16, 2))
    A = rng.uniform(-2, 2, (16, 1))
    np.testing.assert_array_equal(twin.predict_next(S, A), model.predict_next(S, A))

    from phihp.agent import ActorCritic
    td3 = Td3Config(actor_width=16, actor_depth=1, critic_width=16, critic_depth=2)
    ac = ActorCritic("pendulum", td3, rng)
    apath = str(tmp_path / "agent.npz")
    checkpoint.save(apath, agent_arrays(ac))
    arrays, _ = checkpoint.load(apath)
    twin_ac = restore_agent("pendulum", arrays, cfg=td3)
    obs = rng.uniform(-1, 1, (8, 3))
    np.testing.assert_array_equal(twin_ac.actor.forward(obs), ac.actor.forward(obs))
    np.testing.assert_array_equal(twin_ac.critic2_t.theta, ac.critic2_t.theta)


# -------------------------------------------------------------- pipeline runs

def test_oracle_run_consumes_no_samples():
    rec = run_pipeline(tiny_cfg("cem_oracle", episodes=3))
    assert not rec.incomplete, rec.error
    assert rec.samples_consumed == 0
    assert len(rec.returns) == 3
    assert rec.plan_ms and all(t > 0 for t in rec.plan_ms)
    assert rec.curve[0][0] == 0  # curve point at zero real samples


def test_phihp_run_accounting_and_phases():
    rec = run_pipeline(tiny_cfg("phihp"))
    assert not rec.incomplete, rec.error
    assert rec.samples_consumed == 300
    reals = [s for s, _, _ in rec.curve]
    imag = [i for _, i, _ in rec.curve]
    assert reals == sorted(reals)
    assert set(reals) == {150, 300}  # one point per collect round, then agent
    assert imag[-1] == 60 and max(imag) == 60
    assert imag[0] == 0  # model phase reports zero imagined steps
    assert len(rec.returns) == 2


def test_dd_cem_run_has_no_prior_and_respects_budget():
    rec = run_pipeline(tiny_cfg("dd_cem"))
    assert not rec.incomplete, rec.error
    assert rec.samples_consumed <= 300
    assert all(i == 0 for _, i, _ in rec.curve)  # never enters imagination


def test_td3_real_spends_budget_on_the_env():
    cfg = tiny_cfg("td3_real", budget=250)
    cfg.td3.warmup = 100
    rec = run_pipeline(cfg)
    assert not rec.incomplete, rec.error
    assert rec.samples_consumed == 250
    assert rec.curve[-1][0] == 250


def test_runs_are_deterministic():
    a = run_pipeline(tiny_cfg("phihp", seed=7))
    b = run_pipeline(tiny_cfg("phihp", seed=7))
    assert a.returns == b.returns
    assert a.curve == b.curve
    assert a.config_hash == b.config_hash
    c = run_pipeline(tiny_cfg("phihp", seed=8))
    assert c.returns != a.returns  # the seed actually reaches the stages


def test_failed_run_is_flagged_not_raised(tmp_path):
    cfg = tiny_cfg("phihp", out=str(tmp_path))
    cfg.env = "not_a_task"
    rec = run_pipeline(cfg)
    assert rec.incomplete
    assert "not_a_task" in rec.error or "KeyError" in rec.error
    with open(tmp_path / rec.run_id / "metrics.csv") as fh:
        row = next(csv.DictReader(fh))
    assert row["incomplete"] == "1"


def test_run_many_parallel_matches_serial():
    cfgs = [tiny_cfg("cem_oracle", seed=s) for s in (0, 1)]
    serial = run_many([tiny_cfg("cem_oracle", seed=s) for s in (0, 1)], workers=1)
    parallel = run_many(cfgs, workers=2)
    for s, p in zip(serial, parallel):
        assert s.run_id == p.run_id
        assert s.returns == p.returns


# ----------------------------------------------------------------- persistence

def test_persisted_run_layout(tmp_path):
    cfg = tiny_cfg("phihp", out=str(tmp_path))
    rec = run_pipeline(cfg)
    run_dir = tmp_path / rec.run_id
    for name in ("config.txt", "record.json", "checkpoint.npz", "metrics.csv",
                 "table.csv", "curves.csv", "curves.png"):
        assert (run_dir / name).exists(), name

    head = (run_dir / "config.txt").read_text().splitlines()
    assert head[0] == f"# sha256 = {rec.config_hash}"
    assert head[1] == "# seed = 0"

    back = load_record(str(run_dir))
    assert back.run_id == rec.run_id
    assert back.returns == rec.returns
    assert back.mean_return() == rec.mean_return()

    arrays, meta = checkpoint.load(str(run_dir / "checkpoint.npz"))
    assert meta["config_hash"] == rec.config_hash
    assert {"residual_theta", "prior_theta", "actor_theta"} <= set(arrays)


def test_emit_report_recomputation_oracle(tmp_path):
    def fake(seed, returns, curve, pipeline="phihp", incomplete=False):
        return MetricRecord(run_id=f"r{seed}-{pipeline}", env="pendulum",
                            pipeline=pipeline, seed=seed, config_hash="c" * 64,
                            samples_consumed=2000, returns=returns,
                            plan_ms=[1.0 + seed, 2.0 + seed],
                            curve=[(s, 0, r) for s, r in curve],
                            incomplete=incomplete)

    records = [
        fake(0, [-120.0, -80.0], [(1000, -500.0), (2000, -100.0)]),
        fake(1, [-150.0, -90.0], [(1000, -400.0), (2000, -120.0)]),
        fake(2, [], [], incomplete=True),                      # failed seed
        fake(0, [-300.0, -310.0], [(2000, -305.0)], "dd_cem"),
    ]
    paths = emit_report(records, str(tmp_path))
    with open(paths["metrics"]) as fh:
        metrics = list(csv.DictReader(fh))
    assert len(metrics) == 4
    assert metrics[2]["incomplete"] == "1"
    assert metrics[2]["mean_return"] == ""  # not silently zero

    with open(paths["table"]) as fh:
        table = {(r["env"], r["pipeline"]): r for r in csv.DictReader(fh)}
    row = table[("pendulum", "phihp")]
    means = [np.mean([-120.0, -80.0]), np.mean([-150.0, -90.0])]
    assert float(row["return_mean"]) == pytest.approx(np.mean(means), abs=1e-9)
    assert float(row["return_std"]) == pytest.approx(np.std(means), abs=1e-9)
    assert int(row["incomplete"]) == 1
    assert int(row["seeds"]) == 3
    # sample efficiency averaged over the completed seeds
    effs = [sample_efficiency([(1000, -500.0), (2000, -100.0)]),
            sample_efficiency([(1000, -400.0), (2000, -120.0)])]
    assert float(row["sample_eff_mean"]) == pytest.approx(np.mean(effs), abs=1e-9)

    with open(paths["curves"]) as fh:
        curves = list(csv.DictReader(fh))
    assert len(curves) == 5
    assert all(r["config_hash"] == "c" * 64 for r in curves)
    assert os.path.exists(paths["plot"])

    with pytest.raises(ValueError):
        emit_report([], str(tmp_path))


# ---------------------------------------------------------------------- sweeps

def _sweep_base(**kw):
    cfg = tiny_cfg("ph_cem", **kw)
    cfg.budget = 200
    cfg.rounds = 1
    cfg.model = ModelTrainConfig(epochs=2, hidden=8, depth=2)
    cfg.plan = PlanConfig(horizon=5, iterations=2, n_random=40, n_elite=6)
    return cfg


def test_sweep_single_cell_equals_run_pipeline():
    base = _sweep_base()
    rows, records = sweep(base, "H", [5])
    direct = run_pipeline(_sweep_base())
    assert len(rows) == 1
    assert rows[0]["mean_return"] == direct.mean_return()
    assert records[0].returns == direct.returns


def test_sweep_unknown_axis():
    with pytest.raises(ValueError):
        sweep(_sweep_base(), "beam_width", [1])


def test_sweep_population_and_replan_timing():
    rows_n, _ = sweep(_sweep_base(), "N_rand", [40, 400])
    t_small, t_big = (r["median_plan_ms"] for r in rows_n)
    assert t_big >= 0.95 * t_small  # larger populations cannot plan faster

    rows_rh, _ = sweep(_sweep_base(), "RH", [1, 4])
    t_every, t_amortized = (r["median_plan_ms"] for r in rows_rh)
    assert t_amortized <= 1.05 * t_every  # replans amortize over more steps


# ------------------------------------------------------------------------ cli

def test_cli_benchmark_and_report(tmp_path):
    out = str(tmp_path / "bench")
    code = cli.main([
        "benchmark", "--envs", "pendulum", "--pipelines", "cem_oracle",
        "--seeds", "1", "--out", out,
        "--set", "episodes=2", "--set", "curve_episodes=1",
    ])
    assert code == 0
    assert os.path.exists(os.path.join(out, "metrics.csv"))
    assert os.path.exists(os.path.join(out, "table.csv"))
    assert cli.main(["report", "--runs", out]) == 0


def test_cli_train_model_then_evaluate(tmp_path, capsys):
    out = str(tmp_path / "stage")
    code = cli.main([
        "train-model", "--env", "pendulum", "--seed", "0", "--out", out,
        "--set", "budget=200", "--set", "rounds=1", "--set", "model.epochs=2",
        "--set", "model.hidden=8",
    ])
    assert code == 0
    model_path = os.path.join(out, "model_pendulum_s0.npz")
    assert os.path.exists(model_path)
    code = cli.main([
        "evaluate", "--env", "pendulum", "--pipeline", "ph_cem",
        "--model", model_path, "--episodes", "2", "--out", out,
        "--set", "plan.n_random=20", "--set", "plan.iterations=1",
    ])
    assert code == 0
    assert "mean return" in capsys.readouterr().out


def test_cli_rejects_unknown_override(tmp_path):
    with pytest.raises(KeyError):
        cli.main(["benchmark", "--envs", "pendulum", "--pipelines", "cem_oracle",
                  "--seeds", "1", "--out", str(tmp_path), "--set", "episode=2"])
