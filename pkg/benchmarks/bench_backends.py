"""Time the hot kernels under both backends and print a comparison table.

Backend choice is frozen at import, so this script re-runs itself in a
subprocess per backend (PHIHP_BACKEND=numpy / numba) and merges the rows:

    python3 benchmarks/bench_backends.py
    python3 benchmarks/bench_backends.py --repeat 9

Rows cover the paths the pipelines actually live in: batched dynamics,
model steps, CEM sequence scoring at the two controller shapes, MLP
forward/backward at the TD3 critic shape, Adam, plus two macro numbers
(planner ms per step, TD3 updates per second).
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np


def _best_of(fn, repeat, min_time=0.05):
    """Best wall time of `repeat` measurements, each batching calls to
    at least `min_time` seconds so tiny kernels are measurable."""
    fn()
    n = 1
    while True:
        t0 = time.perf_counter()
        for _ in range(n):
            fn()
        dt = time.perf_counter() - t0
        if dt >= min_time:
            break
        n *= 4
    best = dt / n
    for _ in range(repeat - 1):
        t0 = time.perf_counter()
        for _ in range(n):
            fn()
        best = min(best, (time.perf_counter() - t0) / n)
    return best


def run_suite(repeat):
    from phihp import backend
    from phihp.backend import K
    from phihp.agent import ActorCritic, Replay, Td3Config, Td3Trainer, \
        imagine_rollouts, SRC_IMAGINED
    from phihp.envs import Env, spec_for
    from phihp.model import DynamicsModel
    from phihp.planner import cem_plan, oracle_config, PlanConfig
    from phihp.presets import model_config, preset, td3_config, plan_config

    backend.warmup()
    rng = np.random.default_rng(0)
    rows = []

    def add(name, seconds, unit_scale=1e6, unit="us"):
        rows.append((name, seconds * unit_scale, unit))

    # batched dynamics derivative, one env per family
    for env_id, env in ((0, "pendulum"), (2, "cartpole"), (4, "acrobot")):
        sp = spec_for(env)
        S = rng.standard_normal((1024, sp.state_dim))
        A = rng.uniform(-1, 1, (1024, sp.act_dim))
        phys = Env(env).phys
        add(f"dynamics/{env} batch1024",
            _best_of(lambda: K.dynamics(env_id, phys, S, A), repeat))

    # learned-model step (prior + residual MLP, RK4)
    model = DynamicsModel.create("pendulum", rng=np.random.default_rng(1))
    pack = model.pack()
    S = rng.standard_normal((256, 2))
    A = rng.uniform(-2, 2, (256, 1))
    add("model_step/pendulum batch256",
        _best_of(lambda: pack.step(S, A), repeat))

    # CEM sequence scoring at both controller shapes
    p = preset("pendulum")
    sp = spec_for("pendulum")
    hybrid = plan_config(p, "phihp")
    plain = oracle_config(PlanConfig(horizon=p.horizon))
    env = Env("pendulum", seed=3)
    env.reset()
    ac = ActorCritic("pendulum", td3_config(p), np.random.default_rng(2))
    plan_rng = np.random.default_rng(4)
    add("cem_plan/hybrid H5 N220", _best_of(
        lambda: cem_plan(pack, env.state, hybrid, plan_rng, ac=ac),
        repeat, min_time=0.2), 1e3, "ms")
    add("cem_plan/plain H30 N700", _best_of(
        lambda: cem_plan(env.pack(), env.state, plain, plan_rng),
        repeat, min_time=0.2), 1e3, "ms")

    # MLP kernels at the TD3 critic shape (3x200, batch 64)
    tcfg = Td3Config()
    critic = ac.critic1
    X = rng.standard_normal((64, sp.obs_dim + sp.act_dim))
    add("mlp_forward/critic batch64",
        _best_of(lambda: critic.forward(X), repeat))
    ones = np.ones(1)
    Y, acts = K.mlp_forward_acts(critic.theta, critic.layout, X,
                                 K.OUT_LINEAR, ones)
    dY = np.ones_like(Y)
    add("mlp_backward/critic batch64", _best_of(
        lambda: K.mlp_backward(critic.theta, critic.layout, X, acts, Y,
                               K.OUT_LINEAR, ones, dY), repeat))
    th = critic.theta.copy()
    m = np.zeros_like(th)
    v = np.zeros_like(th)
    g = rng.standard_normal(th.size)
    add("adam/critic theta", _best_of(
        lambda: K.adam_update(th, g, m, v, 1, 1e-4, 0.9, 0.999, 1e-8),
        repeat))

    # macro: imagined rollout generation + one TD3 update
    buf = Replay(tcfg.buffer_cap, sp.state_dim, sp.act_dim, SRC_IMAGINED)
    roll_rng = np.random.default_rng(5)
    while len(buf) < 4096:
        batch = imagine_rollouts(pack, sp, tcfg.rollout_batch, tcfg.horizon,
                                 roll_rng)
        buf.add_batch(*batch, SRC_IMAGINED)
    add("imagine_rollouts/8x50", _best_of(
        lambda: imagine_rollouts(pack, sp, 8, 50, roll_rng), repeat),
        1e3, "ms")
    trainer = Td3Trainer(ac, tcfg)
    train_rng = np.random.default_rng(6)
    add("td3_update/batch64", _best_of(
        lambda: trainer.update(buf.sample(train_rng, tcfg.batch), train_rng),
        repeat), 1e3, "ms")

    return rows


def child(repeat):
    from phihp.backend import BACKEND
    print(f"# backend={BACKEND}", flush=True)
    for name, value, unit in run_suite(repeat):
        print(f"{name}\t{value:.4f}\t{unit}", flush=True)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5,
                    help="measurements per row, best is kept")
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)
    if args.child:
        child(args.repeat)
        return 0

    results = {}
    for backend in ("numpy", "numba"):
        env = dict(os.environ, PHIHP_BACKEND=backend)
        proc = subprocess.run(
            [sys.executable, __file__, "--child", "--repeat",
             str(args.repeat)],
            env=env, capture_output=True, text=True)
        if proc.returncode != 0:
            print(f"{backend}: unavailable ({proc.stderr.strip().splitlines()[-1]})")
            continue
        for line in proc.stdout.splitlines():
            if line.startswith("#") or not line.strip():
                continue
            name, value, unit = line.split("\t")
            results.setdefault(name, {})[backend] = (float(value), unit)

    width = max(len(n) for n in results)
    print(f"{'kernel':<{width}}  {'numpy':>12}  {'numba':>12}  {'speedup':>8}")
    for name, by in results.items():
        np_v = by.get("numpy")
        nb_v = by.get("numba")
        cell = lambda v: f"{v[0]:>9.3f} {v[1]}" if v else f"{'-':>12}"
        ratio = f"{np_v[0] / nb_v[0]:>7.1f}x" if np_v and nb_v else f"{'-':>8}"
        print(f"{name:<{width}}  {cell(np_v):>12}  {cell(nb_v):>12}  {ratio}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
