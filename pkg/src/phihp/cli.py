"""Command-line entry points: stage-wise training, benchmarks, sweeps, reports.

Output location resolution: --out flag, else the PHIHP_OUT environment
variable, else ./runs.  Config overrides use the flat dotted syntax from
:mod:`phihp.config` (``--set plan.horizon=5`` or a --config file); a
typo'd key is a hard error.  Exit status is nonzero whenever a run record
comes back flagged incomplete.
"""

import argparse
import os
import sys

import numpy as np

from . import checkpoint
from .config import apply_overrides, parse_file
from .envs import ENV_IDS, Env
from .harness import (PIPELINES, agent_arrays, emit_report, load_record,
                      model_arrays, restore_agent, restore_model, run_config,
                      run_many, run_pipeline, sweep, _evaluate, _rewards_only)
from .model import collect_and_train
from .agent import train_in_imagination


def _out_root(args):
    return args.out or os.environ.get("PHIHP_OUT", "runs")


def _overrides(args):
    items = {}
    if args.config:
        items.update(parse_file(args.config))
    for entry in args.set or []:
        if "=" not in entry:
            raise SystemExit(f"--set expects key=value, got {entry!r}")
        key, _, value = entry.partition("=")
        items[key.strip()] = value.strip()
    return items


def _build_cfg(args, env, pipeline, seed, out=""):
    cfg = run_config(env, pipeline, seed=seed, out=out)
    return apply_overrides(cfg, _overrides(args))


def _add_common(p):
    p.add_argument("--env", required=True, choices=sorted(ENV_IDS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="")
    p.add_argument("--config", default="", help="key=value file of overrides")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="single config override, repeatable")


def cmd_train_model(args):
    cfg = _build_cfg(args, args.env, args.pipeline, args.seed)
    ss = np.random.SeedSequence(cfg.seed)
    s_env, s_collect = ss.spawn(2)
    env = Env(cfg.env, seed=s_env)
    from .model import DynamicsModel
    from .harness import _rewards_only
    model = DynamicsModel.create(cfg.env, cfg=cfg.model,
                                 rng=np.random.default_rng(s_collect.spawn(1)[0]),
                                 use_prior=cfg.pipeline != "dd_cem",
                                 perturb=cfg.prior_perturb)
    _, reports = collect_and_train(env, model, cfg.model, _rewards_only(cfg.plan),
                                   cfg.budget, cfg.rounds,
                                   int(s_collect.generate_state(1)[0]))
    root = _out_root(args)
    os.makedirs(root, exist_ok=True)
    path = os.path.join(root, f"model_{cfg.env}_s{cfg.seed}.npz")
    checkpoint.save(path, model_arrays(model),
                    meta={"env": cfg.env, "seed": cfg.seed,
                          "hidden": cfg.model.hidden, "depth": cfg.model.depth,
                          "samples": env.samples_consumed})
    print(f"saved {path} (val loss {reports[-1].best_val:.3e}, "
          f"{env.samples_consumed} samples)")
    return 0


def cmd_train_agent(args):
    cfg = _build_cfg(args, args.env, "phihp", args.seed)
    arrays, meta = checkpoint.load(args.model)
    from .model import ModelTrainConfig
    mcfg = ModelTrainConfig(hidden=meta.get("hidden", cfg.model.hidden),
                            depth=meta.get("depth", cfg.model.depth))
    model = restore_model(cfg.env, arrays, cfg=mcfg)
    ac, _ = train_in_imagination(model.pack(), cfg.env, cfg.td3, cfg.seed)
    root = _out_root(args)
    os.makedirs(root, exist_ok=True)
    path = os.path.join(root, f"agent_{cfg.env}_s{cfg.seed}.npz")
    checkpoint.save(path, agent_arrays(ac),
                    meta={"env": cfg.env, "seed": cfg.seed, "model": args.model})
    print(f"saved {path}")
    return 0


def cmd_evaluate(args):
    cfg = _build_cfg(args, args.env, args.pipeline, args.seed)
    cfg.episodes = args.episodes
    pack = ac = None
    if args.model:
        arrays, meta = checkpoint.load(args.model)
        from .model import ModelTrainConfig
        mcfg = ModelTrainConfig(hidden=meta.get("hidden", cfg.model.hidden),
                                depth=meta.get("depth", cfg.model.depth))
        pack = restore_model(cfg.env, arrays, cfg=mcfg).pack()
    if args.agent:
        arrays, _ = checkpoint.load(args.agent)
        ac = restore_agent(cfg.env, arrays, cfg=cfg.td3)
    greedy = cfg.pipeline in ("td3_real", "td3_im")
    plan = cfg.plan
    if cfg.pipeline == "cem_oracle":
        pack = Env(cfg.env, seed=cfg.seed).pack()
    if not greedy and cfg.pipeline != "phihp":
        plan = _rewards_only(plan)
    if pack is None and not greedy:
        raise SystemExit("this pipeline needs --model")
    if ac is None and (greedy or cfg.pipeline == "phihp"):
        raise SystemExit("this pipeline needs --agent")
    returns, per_step = _evaluate(cfg, None if greedy else pack, ac,
                                  None if greedy else plan, greedy, cfg.seed)
    print(f"{cfg.env}/{cfg.pipeline}: mean return {np.mean(returns):.1f} "
          f"+/- {np.std(returns):.1f} over {len(returns)} episodes, "
          f"median plan {np.median(per_step):.2f} ms/step")
    return 0


def cmd_benchmark(args):
    envs = args.envs.split(",")
    pipelines = args.pipelines.split(",")
    cfgs = []
    for env in envs:
        for pipeline in pipelines:
            for seed in range(args.seeds):
                cfgs.append(_build_cfg(args, env, pipeline, seed,
                                       out=_out_root(args)))
    records = run_many(cfgs, workers=args.workers)
    emit_report(records, _out_root(args))
    bad = [r for r in records if r.incomplete]
    for r in bad:
        print(f"INCOMPLETE {r.run_id}: {r.error}", file=sys.stderr)
    print(f"{len(records) - len(bad)}/{len(records)} runs complete; "
          f"report in {_out_root(args)}")
    return 1 if bad else 0


def cmd_sweep(args):
    cfg = _build_cfg(args, args.env, args.pipeline, args.seed, out=_out_root(args))
    values = [int(v) for v in args.values.split(",")]
    rows, records = sweep(cfg, args.axis, values)
    for row in rows:
        print(f"{args.axis}={row['value']}: return {row['mean_return']:.1f}, "
              f"plan {row['median_plan_ms']:.2f} ms/step")
    return 1 if any(r.incomplete for r in records) else 0


def cmd_report(args):
    root = args.runs
    records = []
    for name in sorted(os.listdir(root)):
        path = os.path.join(root, name)
        if os.path.isfile(os.path.join(path, "record.json")):
            records.append(load_record(path))
    if not records:
        raise SystemExit(f"no run records under {root}")
    paths = emit_report(records, _out_root(args) if args.out else root)
    print("\n".join(f"{k}: {v}" for k, v in paths.items()))
    return 1 if any(r.incomplete for r in records) else 0


def main(argv=None):
    ap = argparse.ArgumentParser(prog="phihp", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-model", help="collect samples and fit the model")
    _add_common(p)
    p.add_argument("--pipeline", default="phihp", choices=sorted(PIPELINES))
    p.set_defaults(fn=cmd_train_model)

    p = sub.add_parser("train-agent", help="TD3 in imagination from a model checkpoint")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.set_defaults(fn=cmd_train_agent)

    p = sub.add_parser("evaluate", help="evaluate saved artifacts")
    _add_common(p)
    p.add_argument("--pipeline", default="phihp", choices=sorted(PIPELINES))
    p.add_argument("--model", default="")
    p.add_argument("--agent", default="")
    p.add_argument("--episodes", type=int, default=20)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("benchmark", help="full env x pipeline x seed grid")
    p.add_argument("--envs", required=True, help="comma-separated env names")
    p.add_argument("--pipelines", default="phihp", help="comma-separated")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="")
    p.add_argument("--config", default="")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(fn=cmd_benchmark)

    p = sub.add_parser("sweep", help="vary one planner axis")
    _add_common(p)
    p.add_argument("--pipeline", default="cem_oracle", choices=sorted(PIPELINES))
    p.add_argument("--axis", required=True, choices=("H", "RH", "N_pi", "N_rand"))
    p.add_argument("--values", required=True, help="comma-separated integers")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("report", help="re-aggregate saved run records")
    p.add_argument("--runs", required=True)
    p.add_argument("--out", default="")
    p.set_defaults(fn=cmd_report)

    args = ap.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
