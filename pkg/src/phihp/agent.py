"""TD3 actor-critic trained entirely on model-generated transitions.

Nothing in this module touches a real environment: rollouts come from a
ModelPack, start states from the task's reset distribution, and rewards and
terminations from the same functions the planner uses.  The resulting policy
is consumed two ways: as proposal distribution and terminal-value estimator
inside the planner, and as a standalone controller in ablations.
"""

from dataclasses import dataclass, field

import numpy as np

from .backend import K
from .envs import ACROBOT, reset_state, spec_for
from .nn import OUT_LINEAR, OUT_TANH_SCALED, Adam, Mlp, soft_update

SRC_REAL = 0
SRC_IMAGINED = 1


class Replay:
    """Flat ring buffer of transitions with a provenance tag per row.

    The tag (real vs imagined) is asserted on insertion against what the
    buffer was declared to hold, so a real sample physically cannot end up
    in an imagination buffer or vice versa.
    """

    def __init__(self, capacity, state_dim, act_dim, expected_src):
        self.capacity = int(capacity)
        self.S = np.empty((self.capacity, state_dim))
        self.A = np.empty((self.capacity, act_dim))
        self.R = np.empty(self.capacity)
        self.S2 = np.empty((self.capacity, state_dim))
        self.D = np.empty(self.capacity)
        self.src = np.empty(self.capacity, np.uint8)
        self.expected_src = expected_src
        self.idx = 0
        self.full = False

    def __len__(self):
        return self.capacity if self.full else self.idx

    def add_batch(self, S, A, R, S2, D, src):
        if np.any(np.asarray(src) != self.expected_src):
            raise ValueError("transition provenance does not match this buffer")
        n = S.shape[0]
        for arr, chunk in ((self.S, S), (self.A, A), (self.R, R), (self.S2, S2),
                           (self.D, D), (self.src, np.broadcast_to(src, (n,)))):
            pos = self.idx
            take = min(n, self.capacity - pos)
            arr[pos:pos + take] = chunk[:take]
            if take < n:
                arr[:n - take] = chunk[take:]
        self.idx += n
        if self.idx >= self.capacity:
            self.full = True
            self.idx %= self.capacity

    def sample(self, rng, batch):
        idx = rng.integers(0, len(self), batch)
        return self.S[idx], self.A[idx], self.R[idx], self.S2[idx], self.D[idx]

    def arrays(self):
        n = len(self)
        if self.full:
            return self.S.copy(), self.A.copy(), self.R.copy(), self.S2.copy(), self.D.copy()
        return self.S[:n], self.A[:n], self.R[:n], self.S2[:n], self.D[:n]


@dataclass
class Td3Config:
    steps: int = 100_000          # gradient updates (and imagined samples at ratio 1)
    batch: int = 64
    gamma: float = 0.99
    actor_lr: float = 1e-3
    critic_lr: float = 1e-4
    tau: float = 0.05
    policy_delay: int = 2
    expl_noise: float = 0.1       # of a_max, on rollout actions
    smooth_noise: float = 0.2     # of a_max, on target actions
    smooth_clip: float = 0.5      # of a_max
    warmup: int = 10_000          # random-action transitions before training
    horizon: int = 50             # imagined rollout length
    rollout_batch: int = 16       # simultaneous imagined rollouts
    buffer_cap: int = 1_000_000
    actor_width: int = 300
    actor_depth: int = 2
    critic_width: int = 200
    critic_depth: int = 3


class ActorCritic:
    """Deterministic tanh actor and twin Q critics with target copies."""

    def __init__(self, env, cfg, rng):
        self.spec = spec_for(env)
        do, da = self.spec.obs_dim, self.spec.act_dim
        a_sizes = (do,) + (cfg.actor_width,) * cfg.actor_depth + (da,)
        c_sizes = (do + da,) + (cfg.critic_width,) * cfg.critic_depth + (1,)
        self.actor = Mlp.create(a_sizes, rng, OUT_TANH_SCALED, self.spec.a_max)
        self.critic1 = Mlp.create(c_sizes, rng, OUT_LINEAR)
        self.critic2 = Mlp.create(c_sizes, rng, OUT_LINEAR)
        self.actor_t = self.actor.copy()
        self.critic1_t = self.critic1.copy()
        self.critic2_t = self.critic2.copy()

    def act(self, obs, noise_std=0.0, rng=None):
        """Policy action for one observation, optionally exploration-noised."""
        a = self.actor.forward(np.asarray(obs, dtype=float))
        if noise_std > 0.0:
            a = a + rng.normal(0.0, noise_std * self.spec.a_max)
        return np.clip(a, -self.spec.a_max, self.spec.a_max)

    def q_values(self, obs, act):
        x = np.concatenate((np.atleast_2d(obs), np.atleast_2d(act)), axis=1)
        return self.critic1.forward(x)[:, 0], self.critic2.forward(x)[:, 0]


@dataclass
class Td3Losses:
    critic: float = 0.0
    actor: float = 0.0
    updates: int = 0
    aborted: int = 0


def imagine_rollouts(pack, spec, n_rollouts, horizon, rng, ac=None, expl_noise=0.0):
    """Batched model rollouts from the reset distribution.

    Actions are uniform random when no actor is given, otherwise actor
    output plus exploration noise.  Rollouts stop early on termination or a
    non-finite model state; the acrobot goal step gets reward 0 as in the
    real task.  Done flags mark genuine termination only (horizon cuts are
    not terminal for bootstrapping).  Returns stacked transition arrays.
    """
    ds, da = spec.state_dim, spec.act_dim
    S = np.stack([reset_state(spec.env_id, rng) for _ in range(n_rollouts)])
    alive = np.ones(n_rollouts, bool)
    out_S, out_A, out_R, out_S2, out_D = [], [], [], [], []
    for _ in range(horizon):
        if not alive.any():
            break
        Sa = np.ascontiguousarray(S[alive])
        if ac is None:
            A = rng.uniform(-spec.a_max, spec.a_max, (Sa.shape[0], da))
        else:
            A = ac.actor.forward(K.observe(spec.env_id, Sa))
            if expl_noise > 0.0:
                A = A + rng.normal(0.0, expl_noise * spec.a_max, A.shape)
            A = np.clip(A, -spec.a_max, spec.a_max)
        R = K.step_reward(spec.env_id, Sa, A, pack.rmode)
        S2 = pack.step(Sa, A)
        ok = np.isfinite(S2).all(axis=1)
        done = np.zeros(Sa.shape[0], bool)
        if spec.early_term:
            done = K.terminal(spec.env_id, S2, pack.tparams) & ok
            if spec.env_id == ACROBOT:
                R = np.where(done, 0.0, R)
        out_S.append(Sa[ok])
        out_A.append(A[ok])
        out_R.append(R[ok])
        out_S2.append(S2[ok])
        out_D.append(done[ok].astype(float))
        lanes = np.flatnonzero(alive)
        S = S.copy()
        S[lanes] = S2
        alive[lanes] = ok & ~done
    if not out_S:
        return (np.empty((0, ds)), np.empty((0, da)), np.empty(0),
                np.empty((0, ds)), np.empty(0))
    return (np.concatenate(out_S), np.concatenate(out_A), np.concatenate(out_R),
            np.concatenate(out_S2), np.concatenate(out_D))


class Td3Trainer:
    """Owns the optimizers and applies clipped double-Q updates."""

    def __init__(self, ac, cfg):
        self.ac = ac
        self.cfg = cfg
        self.opt_a = Adam(ac.actor.n_params, cfg.actor_lr)
        self.opt_c1 = Adam(ac.critic1.n_params, cfg.critic_lr)
        self.opt_c2 = Adam(ac.critic2.n_params, cfg.critic_lr)
        self.updates = 0

    def update(self, batch, rng):
        """One TD3 step on (S, A, R, S2, D) state-space arrays."""
        ac, cfg = self.ac, self.cfg
        S, A, R, S2, D = batch
        env_id = ac.spec.env_id
        a_max = ac.spec.a_max
        O = K.observe(env_id, np.ascontiguousarray(S))
        O2 = K.observe(env_id, np.ascontiguousarray(S2))
        # target action with clipped smoothing noise
        A2 = ac.actor_t.forward(O2)
        eps = rng.normal(0.0, cfg.smooth_noise, A2.shape) * a_max
        eps = np.clip(eps, -cfg.smooth_clip * a_max, cfg.smooth_clip * a_max)
        A2 = np.clip(A2 + eps, -a_max, a_max)
        X2 = np.concatenate((O2, A2), axis=1)
        q_t = np.minimum(ac.critic1_t.forward(X2)[:, 0], ac.critic2_t.forward(X2)[:, 0])
        y = R + cfg.gamma * (1.0 - D) * q_t
        X = np.concatenate((O, A), axis=1)
        B = S.shape[0]
        losses = Td3Losses(updates=1)
        grads = []
        for critic in (ac.critic1, ac.critic2):
            q, acts = critic.forward_acts(X)
            err = q[:, 0] - y
            losses.critic += float(err @ err) / B
            dY = (2.0 / B) * err[:, None]
            dT, _ = critic.backward(X, acts, q, dY)
            grads.append(dT)
        do_actor = self.updates % cfg.policy_delay == 0
        dT_a = None
        if do_actor:
            A_pi, acts_a = ac.actor.forward_acts(O)
            Xa = np.concatenate((O, A_pi), axis=1)
            q, acts_q = ac.critic1.forward_acts(Xa)
            losses.actor = -float(q[:, 0].mean())
            _, dXa = ac.critic1.backward(Xa, acts_q, q, np.full((B, 1), -1.0 / B))
            dT_a, _ = ac.actor.backward(O, acts_a, A_pi, dXa[:, O.shape[1]:])
            grads.append(dT_a)
        # nothing is mutated until every gradient of this step checks out,
        # so an aborted step leaves parameters and moments untouched
        if all(np.isfinite(g @ g) for g in grads):
            self.opt_c1.step(ac.critic1.theta, grads[0])
            self.opt_c2.step(ac.critic2.theta, grads[1])
            if do_actor:
                self.opt_a.step(ac.actor.theta, dT_a)
                soft_update(ac.actor_t, ac.actor, cfg.tau)
                soft_update(ac.critic1_t, ac.critic1, cfg.tau)
                soft_update(ac.critic2_t, ac.critic2, cfg.tau)
        else:
            losses.aborted = 1
        self.updates += 1
        return losses


def train_in_imagination(pack, env, cfg, seed, eval_hook=None, eval_every=10_000):
    """Train TD3 purely inside the model; returns the agent and loss trace.

    ``pack`` supplies the imagined dynamics; ``env`` is only used for its
    spec (dims, bounds) so no real samples are consumed here.  ``eval_hook``
    is called as hook(update_count, ac) every ``eval_every`` updates and
    once at the end.
    """
    spec = spec_for(env)
    ss = np.random.SeedSequence(seed)
    r_init, r_roll, r_train = [np.random.default_rng(s) for s in ss.spawn(3)]
    ac = ActorCritic(spec.env_id, cfg, r_init)
    trainer = Td3Trainer(ac, cfg)
    buf = Replay(cfg.buffer_cap, spec.state_dim, spec.act_dim, SRC_IMAGINED)
    while len(buf) < cfg.warmup:
        S, A, R, S2, D = imagine_rollouts(pack, spec, cfg.rollout_batch, cfg.horizon,
                                          r_roll)
        buf.add_batch(S, A, R, S2, D, SRC_IMAGINED)
    trace = []
    next_eval = eval_every
    while trainer.updates < cfg.steps:
        S, A, R, S2, D = imagine_rollouts(pack, spec, cfg.rollout_batch, cfg.horizon,
                                          r_roll, ac, cfg.expl_noise)
        buf.add_batch(S, A, R, S2, D, SRC_IMAGINED)
        for _ in range(min(S.shape[0], cfg.steps - trainer.updates)):
            losses = trainer.update(buf.sample(r_train, cfg.batch), r_train)
            trace.append(losses)
            if eval_hook is not None and trainer.updates >= next_eval:
                eval_hook(trainer.updates, ac)
                next_eval += eval_every
    if eval_hook is not None:
        eval_hook(trainer.updates, ac)
    return ac, trace


def train_on_real(env, cfg, seed, steps, eval_hook=None, eval_every=1000):
    """Plain TD3 on the real environment, one update per environment step.

    ``steps`` is the real-transition budget (cfg.warmup of them are random
    exploration, as in the imagination variant).  Used as the model-free
    baseline; note the budget counts environment steps, not updates.
    """
    spec = env.spec
    ss = np.random.SeedSequence(seed)
    r_init, r_act, r_train = [np.random.default_rng(s) for s in ss.spawn(3)]
    ac = ActorCritic(spec.env_id, cfg, r_init)
    trainer = Td3Trainer(ac, cfg)
    buf = Replay(min(cfg.buffer_cap, steps), spec.state_dim, spec.act_dim, SRC_REAL)
    obs = env.reset()
    next_eval = eval_every
    for step in range(1, steps + 1):
        s = env.state.copy()
        if step <= cfg.warmup:
            a = env.sample_action(r_act)
        else:
            a = ac.act(obs, cfg.expl_noise, r_act)
        res = env.step(a)
        buf.add_batch(s[None], np.atleast_1d(a)[None], np.array([res.reward]),
                      env.state[None], np.array([float(res.terminated)]), SRC_REAL)
        obs = env.reset() if (res.terminated or res.truncated) else res.obs
        if step > cfg.warmup:
            trainer.update(buf.sample(r_train, cfg.batch), r_train)
        if eval_hook is not None and step >= next_eval:
            eval_hook(step, ac)
            next_eval += eval_every
    if eval_hook is not None and steps % eval_every != 0:
        eval_hook(steps, ac)
    return ac
