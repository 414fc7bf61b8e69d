"""CEM planning over a rollout model, optionally guided by an actor-critic.

One planner covers the whole method family by configuration:

* pure CEM on random candidates (``use_policy=False, use_q=False``), used
  both with the ground-truth pack (oracle baseline) and with learned models
* the hybrid variant, which adds noisy actor rollouts to the candidate pool
  and a discounted twin-min critic value of the terminal state to every
  candidate's score, shortening the needed horizon by an order of magnitude

Scores always come from the fused rollout kernel; this module only owns the
sampling, elite refitting and warm-start bookkeeping.
"""

import time
from dataclasses import dataclass, replace

import numpy as np

from .backend import K


@dataclass
class PlanConfig:
    horizon: int = 5
    iterations: int = 3
    n_random: int = 200
    n_policy: int = 20
    n_elite: int = 10
    init_std: float = 0.5      # initial sampling std, fraction of a_max
    std_floor: float = 0.01    # refit std lower bound, fraction of a_max
    policy_noise: float = 0.1  # noise on actor candidates, fraction of a_max
    replan_every: int = 1      # actions executed per plan (receding horizon)
    gamma: float = 0.99
    q_weight: float = 0.0      # terminal-value coefficient (0 = rewards only)
    use_policy: bool = False
    use_q: bool = False


_EMPTY = np.empty(0)
_EMPTY_LAYOUT = np.empty((0, 4), dtype=np.int64)


def _nets(pack, ac, cfg):
    """Kernel arguments for the actor/critics (dummies when unused)."""
    if ac is None or not (cfg.use_policy or cfg.use_q):
        return (_EMPTY, _EMPTY_LAYOUT, np.ones(pack.a_max.shape[0]),
                _EMPTY, _EMPTY_LAYOUT, _EMPTY, _EMPTY_LAYOUT)
    return (ac.actor.theta, ac.actor.layout, ac.actor.out_scale,
            ac.critic1.theta, ac.critic1.layout, ac.critic2.theta, ac.critic2.layout)


def score_sequences(pack, seqs, s0, cfg, ac=None):
    """Model-rollout score of each (H, da) candidate in ``seqs`` from s0."""
    a_th, a_ly, a_sc, c1_th, c1_ly, c2_th, c2_ly = _nets(pack, ac, cfg)
    use_q = 1 if (cfg.use_q and ac is not None) else 0
    return K.score_sequences(
        pack.env_id, pack.use_prior, pack.phys, pack.rtheta, pack.rlayout,
        np.ascontiguousarray(s0, dtype=float), np.ascontiguousarray(seqs, dtype=float),
        pack.tparams, pack.dt, pack.substeps, pack.scheme,
        cfg.gamma, cfg.q_weight, use_q, pack.rmode,
        a_th, a_ly, a_sc, c1_th, c1_ly, c2_th, c2_ly,
    )


@dataclass
class PlanResult:
    seq: np.ndarray        # best-scoring action sequence (H, da)
    score: float
    next_mean: np.ndarray  # warm start for the next replan (already shifted)
    n_scored: int


def cem_plan(pack, s0, cfg, rng, ac=None, warm_mean=None):
    """Plan one action sequence from state s0.

    Iteratively samples candidates around the running mean (plus actor
    rollouts when enabled), scores them through the model, and refits the
    sampling distribution to the ``n_elite`` best.  Ties in the elite cut
    break toward lower candidate index, and the best sequence ever scored is
    kept as a candidate so the final answer never regresses between
    iterations.
    """
    H, da = cfg.horizon, pack.a_max.shape[0]
    a_max = pack.a_max
    mean = np.zeros((H, da)) if warm_mean is None else warm_mean.copy()
    std = np.full((H, da), cfg.init_std) * a_max
    floor = cfg.std_floor * a_max
    best_seq = None
    best_score = -np.inf
    n_scored = 0
    for _ in range(cfg.iterations):
        cand = mean + std * rng.standard_normal((cfg.n_random, H, da))
        np.clip(cand, -a_max, a_max, out=cand)
        if cfg.use_policy and ac is not None and cfg.n_policy > 0:
            noise = rng.standard_normal((cfg.n_policy, H, da)) * (cfg.policy_noise * a_max)
            noise[0] = 0.0
            pol = K.policy_sequences(
                pack.env_id, pack.use_prior, pack.phys, pack.rtheta, pack.rlayout,
                ac.actor.theta, ac.actor.layout, ac.actor.out_scale,
                np.ascontiguousarray(s0, dtype=float), noise,
                pack.dt, pack.substeps, pack.scheme)
            cand = np.concatenate((cand, pol), axis=0)
        if best_seq is not None:
            cand = np.concatenate((cand, best_seq[None]), axis=0)
        scores = score_sequences(pack, cand, s0, cfg, ac)
        n_scored += cand.shape[0]
        elite = np.argsort(-scores, kind="stable")[:cfg.n_elite]
        top = elite[0]
        if scores[top] > best_score:
            best_score = float(scores[top])
            best_seq = cand[top].copy()
        mean = cand[elite].mean(axis=0)
        std = np.maximum(cand[elite].std(axis=0), floor)
    shift = cfg.replan_every
    next_mean = np.zeros((H, da))
    if shift < H:
        next_mean[:H - shift] = best_seq[shift:]
    return PlanResult(best_seq, best_score, next_mean, n_scored)


@dataclass
class EpisodeResult:
    ret: float
    steps: int
    terminated: bool
    plan_ms_per_step: list      # amortized planning wall time, one entry per step
    transitions: int = 0


def mpc_episode(env, pack, cfg, rng, ac=None, record=None, max_steps=None):
    """Run one receding-horizon episode in the real environment.

    Replans every ``cfg.replan_every`` steps and executes the plan prefix in
    between.  Planning wall time is amortized over the steps each plan
    serves, which is the per-step inference cost reported by the harness.
    When ``record`` is given, (s, a, r, s', done) transitions are appended
    to it (data collection); ``max_steps`` caps the episode for collection
    budgets.
    """
    env.reset()
    warm = None
    total = 0.0
    times = []
    steps = 0
    terminated = False
    queue = []
    limit = env.spec.horizon if max_steps is None else min(env.spec.horizon, max_steps)
    while steps < limit:
        if not queue:
            t0 = time.perf_counter()
            plan = cem_plan(pack, env.state, cfg, rng, ac=ac, warm_mean=warm)
            ms = (time.perf_counter() - t0) * 1e3
            n_exec = min(cfg.replan_every, cfg.horizon)
            queue = [plan.seq[i] for i in range(n_exec)]
            per_step = ms / n_exec
            warm = plan.next_mean
        s = env.state.copy()
        a = queue.pop(0)
        res = env.step(a)
        times.append(per_step)
        total += res.reward
        steps += 1
        if record is not None:
            record.add_batch(s[None], np.atleast_1d(a)[None], np.array([res.reward]),
                             env.state[None], np.array([float(res.terminated)]), 0)
        if res.terminated or res.truncated:
            terminated = res.terminated
            break
    return EpisodeResult(total, steps, terminated, times, steps)


def oracle_config(task_cfg):
    """The long-horizon rewards-only configuration used by the CEM baseline."""
    return replace(task_cfg, horizon=30, iterations=3, n_random=700, n_elite=20,
                   replan_every=5, use_policy=False, use_q=False, q_weight=0.0,
                   n_policy=0)
