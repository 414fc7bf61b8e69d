"""Seeded end-to-end experiment runs, metrics, statistics, sweeps, reports.

A run is one (environment, pipeline, seed) triple.  Pipelines:

    phihp       model -> TD3 in imagination -> hybrid CEM (policy + value)
    ph_cem      physics-informed model -> rewards-only CEM
    dd_cem      data-driven model (no prior) -> rewards-only CEM
    cem_oracle  ground-truth dynamics -> long-horizon rewards-only CEM
    td3_real    TD3 trained on real transitions, greedy evaluation
    td3_im      model -> TD3 in imagination, greedy evaluation (no planner)

Every run asserts its sample accounting (real transitions never exceed the
declared budget; imagination consumes none; the oracle consumes none) and
its evaluation purity (evaluation mutates no buffer and no parameter).
Returns, curves, and sample counts are deterministic given the config and
seed; wall-clock timing fields naturally are not.
"""

import csv
import dataclasses
import hashlib
import json
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import stdtr

from . import checkpoint
from .agent import Td3Config, train_in_imagination, train_on_real
from .config import config_hash, flatten, render
from .envs import Env
from .model import DynamicsModel, ModelTrainConfig, collect_and_train
from .planner import PlanConfig, mpc_episode
from .presets import model_config, plan_config, preset, td3_config

PIPELINES = ("phihp", "ph_cem", "dd_cem", "cem_oracle", "td3_real", "td3_im")


@dataclass
class RunConfig:
    env: str = "pendulum"
    pipeline: str = "phihp"
    seed: int = 0
    episodes: int = 20           # evaluation episodes after training freezes
    curve_episodes: int = 5      # episodes per learning-curve point
    budget: int = 2000           # real-transition budget (model or td3_real)
    rounds: int = 2              # collect/fit rounds; curve sampled per round
    eval_every_imag: int = 10_000
    prior_perturb: float = 0.1   # initial relative error on prior constants
    out: str = ""                # output directory; empty keeps run in memory
    model: ModelTrainConfig = field(default_factory=ModelTrainConfig)
    plan: PlanConfig = field(default_factory=PlanConfig)
    td3: Td3Config = field(default_factory=Td3Config)


def run_config(env, pipeline, seed=0, **kw):
    """Fully-resolved RunConfig from the task preset; kw overrides fields."""
    if pipeline not in PIPELINES:
        raise ValueError(f"unknown pipeline {pipeline!r} (known: {PIPELINES})")
    p = preset(env)
    cfg = RunConfig(env=env, pipeline=pipeline, seed=seed,
                    budget=p.budget, rounds=max(1, p.budget // 1000),
                    model=model_config(p), plan=plan_config(p, pipeline),
                    td3=td3_config(p))
    for key, value in kw.items():
        if not hasattr(cfg, key):
            raise TypeError(f"run_config got unknown field {key!r}")
        setattr(cfg, key, value)
    return cfg


@dataclass
class MetricRecord:
    run_id: str
    env: str
    pipeline: str
    seed: int
    config_hash: str
    samples_consumed: int = 0
    returns: list = field(default_factory=list)     # per evaluation episode
    plan_ms: list = field(default_factory=list)     # per executed eval step
    curve: list = field(default_factory=list)       # (real, imagined, return)
    incomplete: bool = False
    error: str = ""
    wall_s: float = 0.0

    def mean_return(self):
        return float(np.mean(self.returns)) if self.returns else float("nan")

    def std_return(self):
        return float(np.std(self.returns)) if self.returns else float("nan")

    def median_plan_ms(self):
        return float(np.median(self.plan_ms)) if self.plan_ms else float("nan")

    def curve_points(self):
        """(real_samples, return) pairs for sample-efficiency computations."""
        return [(s, r) for s, _, r in self.curve]


def _digest(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        if a is not None:
            h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def _params_of(pack, ac):
    out = [pack.phys, pack.rtheta] if pack is not None else []
    if ac is not None:
        out += [ac.actor.theta, ac.critic1.theta, ac.critic2.theta]
    return out


def _greedy_episode(env, ac):
    obs = env.reset()
    ret = 0.0
    times = []
    while True:
        t0 = time.perf_counter()
        a = ac.act(obs)
        times.append((time.perf_counter() - t0) * 1e3)
        res = env.step(a)
        ret += res.reward
        obs = res.obs
        if res.terminated or res.truncated:
            return ret, times


def _evaluate(cfg, pack, ac, plan_cfg, greedy, seed):
    """Post-training evaluation on a fresh env; asserts nothing was mutated."""
    env = Env(cfg.env, seed=seed)
    rng = np.random.default_rng(seed + 1)
    before = _digest(*_params_of(pack, ac))
    returns, per_step = [], []
    for _ in range(cfg.episodes):
        if greedy:
            ret, times = _greedy_episode(env, ac)
        else:
            ep = mpc_episode(env, pack, plan_cfg, rng, ac=ac)
            ret, times = ep.ret, ep.plan_ms_per_step
        returns.append(float(ret))
        per_step.extend(times)
    assert _digest(*_params_of(pack, ac)) == before, \
        "evaluation must not mutate parameters"
    return returns, per_step


def _rewards_only(plan_cfg):
    return replace(plan_cfg, use_policy=False, use_q=False, q_weight=0.0)


def run_pipeline(cfg):
    """Execute one run end to end; failures yield an incomplete record."""
    flat = flatten(cfg)
    h = config_hash(flat)
    rec = MetricRecord(run_id=f"{cfg.env}-{cfg.pipeline}-s{cfg.seed}-{h[:8]}",
                       env=cfg.env, pipeline=cfg.pipeline, seed=cfg.seed,
                       config_hash=h)
    t_start = time.perf_counter()
    arrays = {}
    try:
        _run_stages(cfg, rec, arrays)
    except Exception as exc:  # noqa: BLE001 - contract: flag, don't crash
        rec.incomplete = True
        rec.error = f"{type(exc).__name__}: {exc}"
    rec.wall_s = time.perf_counter() - t_start
    if cfg.out:
        _persist(cfg, flat, h, rec, arrays)
    return rec


def _run_stages(cfg, rec, arrays):
    ss = np.random.SeedSequence(cfg.seed)
    s_env, s_collect, s_agent, s_eval, s_curve = ss.spawn(5)
    curve_env = Env(cfg.env, seed=s_curve)
    curve_rng = np.random.default_rng(s_curve.spawn(1)[0])

    def curve_point(planner_cfg, pack=None, ac=None, real=0, imagined=0):
        rets = []
        for _ in range(cfg.curve_episodes):
            if pack is None:
                ret, _ = _greedy_episode(curve_env, ac)
            else:
                ret = mpc_episode(curve_env, pack, planner_cfg, curve_rng, ac=ac).ret
            rets.append(ret)
        rec.curve.append((int(real), int(imagined), float(np.mean(rets))))

    pack, ac, greedy = None, None, False
    eval_plan = cfg.plan

    if cfg.pipeline == "cem_oracle":
        pack = Env(cfg.env, seed=s_env).pack()
        eval_plan = _rewards_only(cfg.plan)
        rec.samples_consumed = 0
        curve_point(eval_plan, pack=pack)
    elif cfg.pipeline == "td3_real":
        train_env = Env(cfg.env, seed=s_env)
        ac = train_on_real(
            train_env, cfg.td3, _seed_int(s_agent), steps=cfg.budget,
            eval_hook=lambda step, agent: curve_point(None, ac=agent, real=step),
            eval_every=1000)
        rec.samples_consumed = train_env.samples_consumed
        assert rec.samples_consumed == cfg.budget
        greedy = True
    else:
        train_env = Env(cfg.env, seed=s_env)
        model = DynamicsModel.create(
            cfg.env, cfg=cfg.model, rng=np.random.default_rng(s_collect.spawn(1)[0]),
            use_prior=cfg.pipeline != "dd_cem", perturb=cfg.prior_perturb)
        collect_plan = _rewards_only(cfg.plan)
        collect_and_train(
            train_env, model, cfg.model, collect_plan, cfg.budget, cfg.rounds,
            _seed_int(s_collect),
            curve_hook=lambda n, m: curve_point(collect_plan, pack=m.pack(), real=n))
        pack = model.pack()
        rec.samples_consumed = train_env.samples_consumed
        assert rec.samples_consumed <= cfg.budget, "model stage exceeded budget"
        arrays.update(model_arrays(model))

        if cfg.pipeline in ("phihp", "td3_im"):
            consumed_before = train_env.samples_consumed
            ac, _ = train_in_imagination(
                pack, cfg.env, cfg.td3, _seed_int(s_agent),
                eval_hook=lambda upd, agent: curve_point(
                    None, ac=agent, real=rec.samples_consumed, imagined=upd),
                eval_every=cfg.eval_every_imag)
            assert train_env.samples_consumed == consumed_before, \
                "imagination consumed real samples"
            arrays.update(agent_arrays(ac))
            greedy = cfg.pipeline == "td3_im"
        else:
            eval_plan = _rewards_only(cfg.plan)

    if greedy:
        pack_for_eval, plan_for_eval = None, None
    else:
        pack_for_eval, plan_for_eval = pack, eval_plan
    rec.returns, rec.plan_ms = _evaluate(cfg, pack_for_eval, ac, plan_for_eval,
                                         greedy, _seed_int(s_eval))
    rec.curve.append((rec.samples_consumed,
                      cfg.td3.steps if ac is not None and cfg.pipeline != "td3_real" else 0,
                      float(np.mean(rec.returns))))


def _seed_int(seed_seq):
    return int(seed_seq.generate_state(1)[0])


def model_arrays(model):
    out = {"residual_theta": model.residual.theta.copy()}
    if model.prior is not None:
        out["prior_theta"] = model.prior.theta.copy()
        out["prior_base"] = model.prior.base.copy()
    return out


def agent_arrays(ac):
    return {"actor_theta": ac.actor.theta.copy(),
            "critic1_theta": ac.critic1.theta.copy(),
            "critic2_theta": ac.critic2.theta.copy(),
            "actor_t_theta": ac.actor_t.theta.copy(),
            "critic1_t_theta": ac.critic1_t.theta.copy(),
            "critic2_t_theta": ac.critic2_t.theta.copy()}


def restore_model(env, arrays, cfg=None):
    """Rebuild a DynamicsModel from checkpoint arrays (exact parameters)."""
    use_prior = "prior_theta" in arrays
    model = DynamicsModel.create(env, cfg=cfg, use_prior=use_prior, perturb=0.0,
                                 rng=np.random.default_rng(0))
    model.residual.theta[:] = arrays["residual_theta"]
    if use_prior:
        model.prior.base[:] = arrays["prior_base"]
        model.prior.theta[:] = arrays["prior_theta"]
    return model


def restore_agent(env, arrays, cfg=None):
    """Rebuild an ActorCritic from checkpoint arrays (exact parameters)."""
    from .agent import ActorCritic
    ac = ActorCritic(env, cfg or Td3Config(), np.random.default_rng(0))
    for name, net in (("actor", ac.actor), ("critic1", ac.critic1),
                      ("critic2", ac.critic2), ("actor_t", ac.actor_t),
                      ("critic1_t", ac.critic1_t), ("critic2_t", ac.critic2_t)):
        net.theta[:] = arrays[f"{name}_theta"]
    return ac


def _persist(cfg, flat, h, rec, arrays):
    run_dir = os.path.join(cfg.out, rec.run_id)
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "config.txt"), "w") as fh:
        fh.write(f"# sha256 = {h}\n# seed = {cfg.seed}\n")
        fh.write(render(flat))
    with open(os.path.join(run_dir, "record.json"), "w") as fh:
        json.dump(dataclasses.asdict(rec), fh, indent=1)
    if arrays:
        checkpoint.save(os.path.join(run_dir, "checkpoint.npz"), arrays,
                        meta={"env": cfg.env, "pipeline": cfg.pipeline,
                              "seed": cfg.seed, "config_hash": h})
    emit_report([rec], run_dir)


def load_record(run_dir):
    with open(os.path.join(run_dir, "record.json")) as fh:
        return MetricRecord(**json.load(fh))


def run_many(cfgs, workers=1):
    """Run several configs, optionally in parallel worker processes."""
    cfgs = list(cfgs)
    if workers <= 1 or len(cfgs) <= 1:
        return [run_pipeline(c) for c in cfgs]
    import multiprocessing as mp
    with mp.get_context("spawn").Pool(workers) as pool:
        return pool.map(run_pipeline, cfgs)


# ---------------------------------------------------------------------------
# metrics


def sample_efficiency(curve, cap=None):
    """Smallest sample count reaching 90% of the curve's min-max range.

    Returns on several tasks are negative, so the 90% level is taken on the
    min-max-normalized curve; ``cap`` (default: the curve's largest sample
    count) is returned if no point qualifies.
    """
    pts = sorted((int(s), float(r)) for s, r in curve)
    if not pts:
        raise ValueError("empty learning curve")
    lo = min(r for _, r in pts)
    hi = max(r for _, r in pts)
    threshold = lo + 0.9 * (hi - lo)
    for s, r in pts:
        if r >= threshold:
            return s
    return cap if cap is not None else pts[-1][0]


@dataclass
class StatReport:
    group_a: str
    group_b: str
    t: float
    df: float
    p: float
    significant: bool   # two-sided, threshold 0.05


def welch_t(group_a, group_b, label_a="A", label_b="B"):
    """Welch's t-test with Welch-Satterthwaite df; two-sided p.

    The sign of ``t`` follows (mean_a - mean_b).  Degenerate case: both
    variances zero with equal means gives t=0, p=1 by convention (p=0 when
    the means differ).
    """
    a = np.asarray(group_a, dtype=float)
    b = np.asarray(group_b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise ValueError("welch_t needs at least two values per group")
    ma, mb = a.mean(), b.mean()
    va, vb = a.var(ddof=1), b.var(ddof=1)
    df_pooled = float(a.size + b.size - 2)
    if va == 0.0 and vb == 0.0:
        if ma == mb:
            return StatReport(label_a, label_b, 0.0, df_pooled, 1.0, False)
        t = float("inf") if ma > mb else float("-inf")
        return StatReport(label_a, label_b, t, df_pooled, 0.0, True)
    sa, sb = va / a.size, vb / b.size
    t = float((ma - mb) / np.sqrt(sa + sb))
    df = float((sa + sb) ** 2 / (sa ** 2 / (a.size - 1) + sb ** 2 / (b.size - 1)))
    p = float(2.0 * stdtr(df, -abs(t)))
    return StatReport(label_a, label_b, t, df, p, p < 0.05)


# ---------------------------------------------------------------------------
# sweeps


_SWEEP_AXES = {"H": "horizon", "RH": "replan_every",
               "N_pi": "n_policy", "N_rand": "n_random"}


def sweep(base, axis, values):
    """Vary one planner axis; returns (rows, records); failures don't stop it."""
    if axis not in _SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r} (known: {sorted(_SWEEP_AXES)})")
    field_name = _SWEEP_AXES[axis]
    rows, records = [], []
    for value in values:
        cfg = replace(base, plan=replace(base.plan, **{field_name: int(value)}))
        rec = run_pipeline(cfg)
        records.append(rec)
        rows.append({"axis": axis, "value": int(value), "run_id": rec.run_id,
                     "config_hash": rec.config_hash, "seed": rec.seed,
                     "mean_return": rec.mean_return(),
                     "std_return": rec.std_return(),
                     "median_plan_ms": rec.median_plan_ms(),
                     "incomplete": int(rec.incomplete)})
    if base.out:
        _write_sweep(base, axis, rows)
    return rows, records


def _write_sweep(base, axis, rows):
    os.makedirs(base.out, exist_ok=True)
    path = os.path.join(base.out, f"sweep_{axis}_{base.env}_{base.pipeline}.csv")
    _write_csv(path, rows)
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    xs = [r["value"] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(xs, [r["mean_return"] for r in rows], "o-")
    ax1.set_xlabel(axis); ax1.set_ylabel("return")
    ax2.plot(xs, [r["median_plan_ms"] for r in rows], "o-")
    ax2.set_xlabel(axis); ax2.set_ylabel("plan ms / step")
    fig.suptitle(f"{base.env} / {base.pipeline}")
    fig.tight_layout()
    fig.savefig(path.replace(".csv", ".png"), dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------------------
# reports


def _write_csv(path, rows, columns=None):
    if not rows:
        raise ValueError(f"no rows for {path}")
    columns = columns or list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        for row in rows:
            w.writerow({k: _cell(row.get(k)) for k in columns})
    return path


def _cell(v):
    if isinstance(v, float):
        return "" if not np.isfinite(v) else repr(v)
    return v


def emit_report(records, out_dir):
    """Write metrics.csv, curves.csv, table.csv, and learning-curve plots.

    metrics.csv has one row per record; table.csv aggregates per
    (env, pipeline) in the shape of a results table: mean +/- across-seed
    std of the per-seed mean returns, mean sample efficiency, and the
    median per-step planning time pooled over seeds.  Incomplete records
    are flagged, never silently averaged as zeros.
    """
    if not records:
        raise ValueError("emit_report needs at least one record")
    os.makedirs(out_dir, exist_ok=True)
    paths = {}

    metric_rows = [{
        "run_id": r.run_id, "seed": r.seed, "env": r.env, "pipeline": r.pipeline,
        "real_samples": r.samples_consumed, "mean_return": r.mean_return(),
        "std_return": r.std_return(), "median_plan_ms": r.median_plan_ms(),
        "incomplete": int(r.incomplete or not r.returns), "error": r.error,
        "config_hash": r.config_hash,
    } for r in records]
    paths["metrics"] = _write_csv(os.path.join(out_dir, "metrics.csv"), metric_rows)

    curve_rows = [{
        "run_id": r.run_id, "seed": r.seed, "env": r.env, "pipeline": r.pipeline,
        "real_samples": s, "imagined_steps": i, "eval_return": ret,
        "config_hash": r.config_hash,
    } for r in records for s, i, ret in r.curve]
    if curve_rows:
        paths["curves"] = _write_csv(os.path.join(out_dir, "curves.csv"), curve_rows)

    groups = {}
    for r in records:
        groups.setdefault((r.env, r.pipeline), []).append(r)
    table_rows = []
    for (env, pipeline), group in sorted(groups.items()):
        ok = [r for r in group if r.returns and not r.incomplete]
        means = [r.mean_return() for r in ok]
        effs = [sample_efficiency(r.curve_points(), cap=r.samples_consumed)
                for r in ok if r.curve]
        pooled_ms = [t for r in ok for t in r.plan_ms]
        table_rows.append({
            "env": env, "pipeline": pipeline, "seeds": len(group),
            "return_mean": float(np.mean(means)) if means else float("nan"),
            "return_std": float(np.std(means)) if means else float("nan"),
            "sample_eff_mean": float(np.mean(effs)) if effs else float("nan"),
            "median_plan_ms": float(np.median(pooled_ms)) if pooled_ms else float("nan"),
            "incomplete": len(group) - len(ok),
            "config_hash": group[0].config_hash,
        })
    paths["table"] = _write_csv(os.path.join(out_dir, "table.csv"), table_rows)
    paths["plot"] = _plot_curves(records, out_dir)
    return paths


def _plot_curves(records, out_dir):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    envs = sorted({r.env for r in records})
    fig, axes = plt.subplots(1, len(envs), figsize=(4.5 * len(envs), 3.5),
                             squeeze=False)
    colors, seen = {}, set()
    for ax, env in zip(axes[0], envs):
        for r in (x for x in records if x.env == env):
            if not r.curve:
                continue
            if r.pipeline not in colors:
                colors[r.pipeline] = f"C{len(colors)}"
            label = r.pipeline if (env, r.pipeline) not in seen else None
            seen.add((env, r.pipeline))
            xs = [s for s, _, _ in r.curve]
            ys = [ret for _, _, ret in r.curve]
            ax.plot(xs, ys, "o-", color=colors[r.pipeline], alpha=0.6, label=label)
        ax.set_title(env)
        ax.set_xlabel("real samples")
        ax.set_ylabel("return")
        if ax.get_legend_handles_labels()[0]:
            ax.legend(fontsize=7)
    fig.tight_layout()
    path = os.path.join(out_dir, "curves.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
