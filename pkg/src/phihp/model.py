"""Residual dynamics models: analytic prior + neural correction.

The model predicts the next state by integrating ``f_prior(s, a; theta_p) +
f_res(obs(s), a; theta_r)`` with the same fixed-step scheme the environment
uses.  The prior is the frictionless closed form of the task family with a
handful of trainable physical constants; the residual is a small MLP that
absorbs whatever the prior misses (friction, constant errors).

Training minimizes next-state prediction error plus a penalty on the
residual magnitude whose inverse weight grows every epoch, so the optimizer
is pushed to explain as much as possible with physics first and the residual
shrinks toward the genuinely unmodeled part.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape
from .backend import K
from .envs import ModelPack, default_params, spec_for
from .nn import Adam, Mlp, PoisonedOptimizerError

# indices of the trainable constants inside each family's parameter vector
# (friction stays fixed; the second acrobot link length never enters the ODE)
_TRAIN_SLOTS = {
    0: (0, 1),                   # c_g, c_i
    1: (0, 1, 2, 3),             # m_c, m_p, l, g
    2: (0, 1, 2, 4, 5, 6, 7, 8)  # m1, m2, l1, lc1, lc2, i1, i2, g
}
_SLOT_NAMES = {
    0: ("c_g", "c_i", "c_fr"),
    1: ("m_c", "m_p", "l", "g", "fr_c", "fr_p"),
    2: ("m1", "m2", "l1", "l2", "lc1", "lc2", "i1", "i2", "g", "fr1", "fr2"),
}
_FRICTION_SLOTS = {0: (2,), 1: (4, 5), 2: (9, 10)}
_HALF_PI = 0.5 * math.pi


class PhysPrior:
    """Trainable frictionless physics of one task family.

    ``base`` is the full kernel parameter vector; the entries listed in
    ``train_idx`` are the learnable constants, everything else (friction,
    inert geometry) stays fixed.  By default friction slots are zero --
    the prior deliberately does not know about dissipation.  Tests can pass
    ``include_friction=True`` to get the exact true physics as a prior.
    """

    def __init__(self, env_id, base, train_idx):
        self.env_id = env_id
        self.family = env_id // 2
        self.base = np.asarray(base, dtype=float)
        self.train_idx = np.asarray(train_idx, dtype=np.int64)
        self.theta = self.base[self.train_idx].copy()

    @classmethod
    def create(cls, env_id, params=None, perturb=0.0, rng=None, include_friction=False):
        p = params if params is not None else default_params(env_id)
        base = p.vector()
        fam = env_id // 2
        if not include_friction:
            for i in _FRICTION_SLOTS[fam]:
                base[i] = 0.0
        prior = cls(env_id, base, _TRAIN_SLOTS[fam])
        if perturb:
            if rng is None:
                raise ValueError("perturb needs an rng")
            prior.theta *= 1.0 + perturb * rng.uniform(-1.0, 1.0, prior.theta.shape[0])
        return prior

    def names(self):
        all_names = _SLOT_NAMES[self.family]
        return tuple(all_names[i] for i in self.train_idx)

    def phys_vector(self):
        v = self.base.copy()
        v[self.train_idx] = self.theta
        return v

    def param_vars(self, tape):
        return [tape.var(np.asarray(t)) for t in self.theta]

    def grads_flat(self, pvars):
        return np.array([0.0 if v.grad is None else float(v.grad) for v in pvars])

    def tape_derivative(self, tape, pvars, S, A):
        """Differentiable family dynamics; pvars override the trainable slots."""
        vals = list(self.base)
        for j, i in enumerate(self.train_idx):
            vals[i] = pvars[j]
        if self.family == 0:
            return _pendulum_rhs(tape, vals, S, A)
        if self.family == 1:
            return _cartpole_rhs(tape, vals, S, A)
        return _acrobot_rhs(tape, vals, S, A)


def _pendulum_rhs(tape, p, S, A):
    c_g, c_i, c_fr = p
    th = tape.col(S, 0)
    thd = tape.col(S, 1)
    thdd = c_g * tape.sin(th) + c_i * A[:, 0] + c_fr * thd
    return tape.stack_cols([thd, thdd])


def _cartpole_rhs(tape, p, S, A):
    m_c, m_p, l, g, fr_c, fr_p = p
    xd = tape.col(S, 1)
    th = tape.col(S, 2)
    thd = tape.col(S, 3)
    sth, cth = tape.sin(th), tape.cos(th)
    m_tot = m_c + m_p
    tmp = (A[:, 0] + (m_p * l) * thd * thd * sth - fr_c * tape.sign(xd)) / m_tot
    thdd = (g * sth - cth * tmp - fr_p * thd / (m_p * l)) / (
        l * (4.0 / 3.0 - m_p * cth * cth / m_tot)
    )
    xdd = tmp - (m_p * l) * thdd * cth / m_tot
    return tape.stack_cols([xd, xdd, thd, thdd])


def _acrobot_rhs(tape, p, S, A):
    m1, m2, l1, _l2, lc1, lc2, i1, i2, g, fr1, fr2 = p
    th1 = tape.col(S, 0)
    th2 = tape.col(S, 1)
    d1d = tape.col(S, 2)
    d2d = tape.col(S, 3)
    s2, c2 = tape.sin(th2), tape.cos(th2)
    if A.shape[1] == 1:
        a1 = -(fr1 * d1d)
        a2 = A[:, 0] - fr2 * d2d
    else:
        a1 = A[:, 0] - fr1 * d1d
        a2 = A[:, 1] - fr2 * d2d
    d1 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * c2) + i1 + i2
    d2 = m2 * (lc2 * lc2 + l1 * lc2 * c2) + i2
    phi2 = (m2 * lc2 * g) * tape.cos(th1 + th2 - _HALF_PI)
    phi1 = (
        -(m2 * l1 * lc2) * d2d * d2d * s2
        - 2.0 * (m2 * l1 * lc2) * d2d * d1d * s2
        + (m1 * lc1 + m2 * l1) * g * tape.cos(th1 - _HALF_PI)
        + phi2
    )
    thdd2 = (a2 + (d2 / d1) * (phi1 - a1) - (m2 * l1 * lc2) * d1d * d1d * s2 - phi2) / (
        m2 * lc2 * lc2 + i2 - d2 * d2 / d1
    )
    thdd1 = (a1 - d2 * thdd2 - phi1) / d1
    return tape.stack_cols([d1d, d2d, thdd1, thdd2])


def _tape_observe(tape, env_id, S):
    fam = env_id // 2
    if fam == 0:
        th = tape.col(S, 0)
        return tape.stack_cols([tape.cos(th), tape.sin(th), tape.col(S, 1)])
    if fam == 1:
        th = tape.col(S, 2)
        return tape.stack_cols([tape.col(S, 0), tape.col(S, 1),
                                tape.cos(th), tape.sin(th), tape.col(S, 3)])
    th1, th2 = tape.col(S, 0), tape.col(S, 1)
    return tape.stack_cols([tape.cos(th1), tape.sin(th1), tape.cos(th2), tape.sin(th2),
                            tape.col(S, 2), tape.col(S, 3)])


@dataclass
class PenaltySchedule:
    """Inverse-weighted residual penalty: loss += norm / value.

    ``value`` starts at ``initial`` and grows by ``growth * L_pred`` after
    every epoch, so the constraint relaxes exactly as fast as the model
    stops needing the residual to fit the data.
    """
    initial: float = 1e3
    growth: float = 1e3
    value: float = field(init=False)

    def __post_init__(self):
        self.value = float(self.initial)

    def update(self, l_pred):
        self.value += self.growth * float(l_pred)
        return self.value


@dataclass
class ModelTrainConfig:
    epochs: int = 200
    batch: int = 64
    lr: float = 1e-3
    penalty_initial: float = 1e3
    penalty_growth: float = 1e3
    val_fraction: float = 0.1
    patience: int = 20
    hidden: int = 16
    depth: int = 2


@dataclass
class FitReport:
    epochs_run: int = 0
    train_pred: list = field(default_factory=list)
    val_pred: list = field(default_factory=list)
    penalty: list = field(default_factory=list)   # schedule value per epoch
    res_norm: list = field(default_factory=list)  # batch-mean residual norm per epoch
    best_val: float = math.inf
    aborted: bool = False


class DynamicsModel:
    """Prior + residual over one task, stepped with the task integrator."""

    def __init__(self, env, prior, residual, substeps=1, scheme=1):
        self.spec = spec_for(env)
        self.env_id = self.spec.env_id
        self.prior = prior
        self.residual = residual
        self.substeps = substeps
        self.scheme = scheme

    @classmethod
    def create(cls, env, cfg=None, rng=None, use_prior=True, perturb=0.1,
               include_friction=False, params=None, substeps=1, scheme=1):
        cfg = cfg or ModelTrainConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        sp = spec_for(env)
        prior = None
        if use_prior:
            prior = PhysPrior.create(sp.env_id, params=params, perturb=perturb,
                                     rng=rng, include_friction=include_friction)
        sizes = (sp.obs_dim + sp.act_dim,) + (cfg.hidden,) * cfg.depth + (sp.state_dim,)
        residual = Mlp.create(sizes, rng)
        return cls(env, prior, residual, substeps=substeps, scheme=scheme)

    @property
    def use_prior(self):
        return 1 if self.prior is not None else 0

    def _phys(self):
        return self.prior.phys_vector() if self.prior is not None else np.zeros(
            {0: 3, 1: 6, 2: 11}[self.env_id // 2])

    def pack(self):
        return ModelPack(self.env_id, self.use_prior, self._phys(),
                         self.residual.theta, self.residual.layout,
                         self.spec.dt, self.substeps, self.scheme,
                         self.spec.tparams, 0, self.spec.a_max.copy())

    def derivative(self, S, A):
        S, A, single = _batched(S, A)
        out = K.model_dynamics(self.env_id, self.use_prior, self._phys(),
                               self.residual.theta, self.residual.layout, S, A)
        return out[0] if single else out

    def predict_next(self, S, A):
        S, A, single = _batched(S, A)
        out = K.model_step(self.env_id, self.use_prior, self._phys(),
                           self.residual.theta, self.residual.layout, S, A,
                           self.spec.dt, self.substeps, self.scheme)
        return out[0] if single else out

    def residual_norms(self, S, A):
        """Per-sample Euclidean norm of the residual derivative correction."""
        S, A, single = _batched(S, A)
        X = np.concatenate((K.observe(self.env_id, S), A), axis=1)
        R = self.residual.forward(X)
        n = np.sqrt((R * R).sum(axis=1))
        return float(n[0]) if single else n

    # -- training --

    def _tape_predict(self, tape, pvars, rvars, S0, A):
        """Differentiable model step; returns (prediction, stage-1 residual)."""
        dt = self.spec.dt / self.substeps
        res_first = None

        def deriv(Svar):
            nonlocal res_first
            if self.prior is not None:
                d = self.prior.tape_derivative(tape, pvars, Svar, A)
            else:
                d = None
            x = tape.concat([_tape_observe(tape, self.env_id, Svar), A], axis=1)
            r = self.residual.tape_forward(tape, x, rvars)
            if res_first is None:
                res_first = r
            return r if d is None else d + r

        S = tape.var(S0)
        for _ in range(self.substeps):
            k1 = deriv(S)
            if self.scheme == 0:
                S = S + dt * k1
            else:
                k2 = deriv(S + (0.5 * dt) * k1)
                k3 = deriv(S + (0.5 * dt) * k2)
                k4 = deriv(S + dt * k3)
                S = S + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return S, res_first

    def fit(self, S, A, S2, cfg, rng, penalty=None):
        """Train prior constants and residual on (s, a, s') triples.

        Runs up to cfg.epochs passes with a held-out split for early
        stopping on prediction loss; the residual-norm penalty weight
        follows ``penalty`` (created from cfg when not given).  The model
        is left at the parameters with the best validation loss.
        """
        n = S.shape[0]
        n_val = max(1, int(round(cfg.val_fraction * n))) if n > 10 else 0
        perm = rng.permutation(n)
        val, train = perm[:n_val], perm[n_val:]
        St, At, S2t = S[train], A[train], S2[train]
        if penalty is None:
            penalty = PenaltySchedule(cfg.penalty_initial, cfg.penalty_growth)
        use_pen = self.prior is not None
        opt_r = Adam(self.residual.n_params, cfg.lr)
        opt_p = Adam(self.prior.theta.shape[0], cfg.lr) if self.prior is not None else None
        report = FitReport()
        best = (self._snapshot(), math.inf)
        stale = 0
        for epoch in range(cfg.epochs):
            order = rng.permutation(St.shape[0])
            snap = self._snapshot()
            epoch_pred = 0.0
            epoch_norm = 0.0
            nb = 0
            try:
                for lo in range(0, St.shape[0], cfg.batch):
                    idx = order[lo:lo + cfg.batch]
                    tape = Tape()
                    pvars = self.prior.param_vars(tape) if self.prior is not None else []
                    rvars = self.residual.param_vars(tape)
                    pred, res = self._tape_predict(tape, pvars, rvars, St[idx], At[idx])
                    err = pred - S2t[idx]
                    l_pred = (err * err).mean()
                    norm = tape.sqrt((res * res).sum(axis=1)).mean()
                    loss = (l_pred + norm / penalty.value) if use_pen else l_pred
                    tape.backward(loss)
                    opt_r.step(self.residual.theta, self.residual.grads_flat(rvars))
                    if opt_p is not None:
                        opt_p.step(self.prior.theta, self.prior.grads_flat(pvars))
                    epoch_pred += float(l_pred.value)
                    epoch_norm += float(norm.value)
                    nb += 1
            except PoisonedOptimizerError:
                self._restore(snap)
                report.aborted = True
                break
            mean_pred = epoch_pred / max(nb, 1)
            report.train_pred.append(mean_pred)
            report.res_norm.append(epoch_norm / max(nb, 1))
            report.penalty.append(penalty.update(mean_pred))
            if n_val:
                pv = self.predict_next(S[val], A[val])
                vloss = float(((pv - S2[val]) ** 2).mean())
            else:
                vloss = mean_pred
            report.val_pred.append(vloss)
            report.epochs_run = epoch + 1
            if vloss < best[1] - 1e-12:
                best = (self._snapshot(), vloss)
                stale = 0
            else:
                stale += 1
                if stale > cfg.patience:
                    break
        self._restore(best[0])
        report.best_val = best[1]
        return report

    def _snapshot(self):
        return (self.residual.theta.copy(),
                self.prior.theta.copy() if self.prior is not None else None)

    def _restore(self, snap):
        self.residual.theta[:] = snap[0]
        if self.prior is not None:
            self.prior.theta[:] = snap[1]


def _batched(S, A):
    S = np.ascontiguousarray(S, dtype=float)
    A = np.ascontiguousarray(A, dtype=float)
    if S.ndim == 1:
        return S[None, :], np.atleast_1d(A)[None, :], True
    return S, A, False


def collect_and_train(env, model, train_cfg, plan_cfg, budget, iterations, seed,
                      curve_hook=None):
    """Alternate real-sample collection and model fitting.

    The first round collects with a uniform random policy; later rounds plan
    through the current model with a rewards-only CEM, so the data
    concentrates where the controller actually goes.  Each round adds
    ``budget // iterations`` transitions and refits (the penalty schedule
    restarts per round; prior constants and residual weights carry over).
    ``curve_hook(samples_so_far, model)`` runs after every fit.  Returns the
    real-transition buffer alongside the per-round fit reports.
    """
    from .agent import SRC_REAL, Replay
    from .planner import mpc_episode

    ss = np.random.SeedSequence(seed)
    r_collect, r_fit, r_plan = [np.random.default_rng(s) for s in ss.spawn(3)]
    spec = env.spec
    buf = Replay(budget, spec.state_dim, spec.act_dim, SRC_REAL)
    per_round = budget // iterations
    reports = []
    for it in range(iterations):
        target = min(budget, (it + 1) * per_round) if it < iterations - 1 else budget
        while len(buf) < target:
            cap = target - len(buf)
            if it == 0:
                _random_episode(env, buf, cap, r_collect)
            else:
                mpc_episode(env, model.pack(), plan_cfg, r_plan, record=buf, max_steps=cap)
        S, A, R, S2, D = buf.arrays()
        reports.append(model.fit(S, A, S2, train_cfg, r_fit))
        if curve_hook is not None:
            curve_hook(len(buf), model)
    return buf, reports


def _random_episode(env, buf, cap, rng):
    env.reset()
    for _ in range(min(cap, env.spec.horizon)):
        s = env.state.copy()
        a = env.sample_action(rng)
        res = env.step(a)
        buf.add_batch(s[None], np.atleast_1d(a)[None], np.array([res.reward]),
                      env.state[None], np.array([float(res.terminated)]), 0)
        if res.terminated or res.truncated:
            break
