"""Friction-augmented classic control tasks.

Six tasks over three dynamical families, all integrated from their ODEs:

* ``pendulum`` / ``pendulum_swingup``: torque-limited pendulum,
  theta = 0 upright, ``theta_dd = c_g*sin(theta) + c_i*a + c_fr*theta_d``
  (``c_fr`` is signed; the default -0.1 is viscous dissipation)
* ``cartpole`` / ``cartpole_swingup``: cart-pole with Coulomb friction on
  the cart and viscous friction at the pole pivot, theta = 0 upright
* ``acrobot`` / ``acrobot_swingup``: two-link arm with viscous joint
  friction, theta1 = 0 hanging down; the plain task actuates only the
  second joint (1-dim action), the swing-up variant actuates both

States are kept as raw (unwrapped) angles plus velocities; observations are
the trig expansion used by every learned component.  Early termination exists
only for ``cartpole`` (pole/track limits) and ``acrobot`` (tip height), the
rest of the tasks simply truncate at their rollout length.
"""

from dataclasses import dataclass, replace

import numpy as np

from .backend import K

PENDULUM = K.PENDULUM
PENDULUM_SWINGUP = K.PENDULUM_SWINGUP
CARTPOLE = K.CARTPOLE
CARTPOLE_SWINGUP = K.CARTPOLE_SWINGUP
ACROBOT = K.ACROBOT
ACROBOT_SWINGUP = K.ACROBOT_SWINGUP

ENV_IDS = {
    "pendulum": PENDULUM,
    "pendulum_swingup": PENDULUM_SWINGUP,
    "cartpole": CARTPOLE,
    "cartpole_swingup": CARTPOLE_SWINGUP,
    "acrobot": ACROBOT,
    "acrobot_swingup": ACROBOT_SWINGUP,
}
ENV_NAMES = {v: k for k, v in ENV_IDS.items()}

REWARD_DIST = 0      # cartpole swing-up: exp(-squared distance to goal)
REWARD_LITERAL = 1   # cartpole swing-up: exp(+squared distance), kept for comparison


def angle_normalize(x):
    """Wrap angles into (-pi, pi]."""
    return ((x + np.pi) % (2.0 * np.pi)) - np.pi


@dataclass
class PendulumParams:
    c_g: float = 15.0   # gravity torque coefficient (3g / 2l for the gym constants)
    c_i: float = 3.0    # input gain (3 / (m l^2))
    c_fr: float = -0.1  # signed viscous coefficient; negative dissipates

    def vector(self):
        return np.array([self.c_g, self.c_i, self.c_fr])


@dataclass
class CartpoleParams:
    m_c: float = 1.0
    m_p: float = 0.1
    l: float = 0.5      # half pole length
    g: float = 9.8
    fr_c: float = 0.1   # Coulomb friction magnitude, cart on track
    fr_p: float = 0.1   # viscous friction, pole on cart

    def vector(self):
        return np.array([self.m_c, self.m_p, self.l, self.g, self.fr_c, self.fr_p])


@dataclass
class AcrobotParams:
    m1: float = 1.0
    m2: float = 1.0
    l1: float = 1.0
    l2: float = 1.0
    lc1: float = 0.5
    lc2: float = 0.5
    i1: float = 1.0
    i2: float = 1.0
    g: float = 9.8
    fr1: float = 0.1    # viscous friction magnitude, joint 1
    fr2: float = 0.1    # viscous friction magnitude, joint 2

    def vector(self):
        return np.array([self.m1, self.m2, self.l1, self.l2, self.lc1, self.lc2,
                         self.i1, self.i2, self.g, self.fr1, self.fr2])


_PARAM_CLASSES = {0: PendulumParams, 1: CartpoleParams, 2: AcrobotParams}
# friction entries of each family's parameter vector (zeroed for the prior)
FRICTION_FIELDS = {0: ("c_fr",), 1: ("fr_c", "fr_p"), 2: ("fr1", "fr2")}


def default_params(env_id):
    return _PARAM_CLASSES[env_id // 2]()


def frictionless(params):
    """Copy of a parameter set with every friction coefficient zeroed."""
    fam = {PendulumParams: 0, CartpoleParams: 1, AcrobotParams: 2}[type(params)]
    return replace(params, **{f: 0.0 for f in FRICTION_FIELDS[fam]})


@dataclass(frozen=True)
class EnvSpec:
    name: str
    env_id: int
    family: int
    state_dim: int
    act_dim: int
    obs_dim: int
    dt: float
    horizon: int
    a_max: np.ndarray
    early_term: bool
    tparams: np.ndarray  # (x_limit, theta_limit) / (target_height, 0) / unused


def _spec(name, env_id, sdim, adim, odim, dt, horizon, a_max, early, tparams):
    return EnvSpec(name, env_id, env_id // 2, sdim, adim, odim, dt, horizon,
                   np.full(adim, a_max, dtype=float), early, np.asarray(tparams, dtype=float))


SPECS = {
    PENDULUM: _spec("pendulum", PENDULUM, 2, 1, 3, 0.05, 200, 2.0, False, (0.0, 0.0)),
    PENDULUM_SWINGUP: _spec("pendulum_swingup", PENDULUM_SWINGUP, 2, 1, 3, 0.05, 500,
                            2.0, False, (0.0, 0.0)),
    CARTPOLE: _spec("cartpole", CARTPOLE, 4, 1, 5, 0.02, 500, 10.0, True,
                    (2.4, 12.0 * np.pi / 180.0)),
    CARTPOLE_SWINGUP: _spec("cartpole_swingup", CARTPOLE_SWINGUP, 4, 1, 5, 0.02, 500,
                            10.0, False, (0.0, 0.0)),
    ACROBOT: _spec("acrobot", ACROBOT, 4, 1, 6, 0.2, 500, 1.0, True, (1.0, 0.0)),
    ACROBOT_SWINGUP: _spec("acrobot_swingup", ACROBOT_SWINGUP, 4, 2, 6, 0.2, 500,
                           1.0, False, (0.0, 0.0)),
}


def spec_for(env):
    """Resolve an env name or id to its EnvSpec."""
    if isinstance(env, str):
        return SPECS[ENV_IDS[env]]
    return SPECS[env]


def reset_state(env_id, rng):
    """Draw an initial state from the task's start distribution."""
    if env_id == PENDULUM:
        return np.array([rng.uniform(-np.pi, np.pi), rng.uniform(-1.0, 1.0)])
    if env_id == PENDULUM_SWINGUP:
        return np.array([np.pi + rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)])
    if env_id == CARTPOLE:
        return rng.uniform(-0.05, 0.05, 4)
    if env_id == CARTPOLE_SWINGUP:
        s = rng.uniform(-0.05, 0.05, 4)
        s[2] += np.pi
        return s
    # both acrobot tasks start hanging down with small perturbations
    return rng.uniform(-0.1, 0.1, 4)


@dataclass
class ModelPack:
    """Everything the rollout kernels need to step a dynamical system.

    Built either from an Env (ground truth: full friction vector, no
    residual) or from a learned DynamicsModel (frictionless prior plus
    residual network), so planners are agnostic to which one they get.
    """
    env_id: int
    use_prior: int
    phys: np.ndarray
    rtheta: np.ndarray
    rlayout: np.ndarray
    dt: float
    substeps: int
    scheme: int
    tparams: np.ndarray
    rmode: int
    a_max: np.ndarray

    def derivative(self, S, A):
        return K.model_dynamics(self.env_id, self.use_prior, self.phys,
                                self.rtheta, self.rlayout, S, A)

    def step(self, S, A):
        return K.model_step(self.env_id, self.use_prior, self.phys, self.rtheta,
                            self.rlayout, S, A, self.dt, self.substeps, self.scheme)


_EMPTY_THETA = np.empty(0)
_EMPTY_LAYOUT = np.empty((0, 4), dtype=np.int64)


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    terminated: bool
    truncated: bool


class Env:
    """A stepping wrapper over one task: ODE integration, reward, termination.

    ``samples_consumed`` counts every transition handed out by step() and is
    the ground truth for sample-efficiency bookkeeping; nothing else in the
    package touches the real dynamics.
    """

    def __init__(self, env, params=None, seed=0, scheme=1, substeps=1, rmode=REWARD_DIST):
        self.spec = spec_for(env)
        self.env_id = self.spec.env_id
        self.params = params if params is not None else default_params(self.env_id)
        self.phys = self.params.vector()
        self.scheme = scheme
        self.substeps = substeps
        self.rmode = rmode
        self.rng = np.random.default_rng(seed)
        self.state = None
        self.steps = 0
        self.samples_consumed = 0

    def reset(self, rng=None):
        self.state = reset_state(self.env_id, rng if rng is not None else self.rng)
        self.steps = 0
        return self.observe()

    def observe(self, state=None):
        s = self.state if state is None else state
        return K.observe(self.env_id, s[None, :])[0]

    def true_derivative(self, state, action):
        """Time derivative of the real system; the action is clamped first."""
        a = np.clip(np.atleast_1d(np.asarray(action, dtype=float)),
                    -self.spec.a_max, self.spec.a_max)
        return K.dynamics(self.env_id, self.phys, np.asarray(state, dtype=float)[None, :],
                          a[None, :])[0]

    def step(self, action):
        if self.state is None:
            raise RuntimeError("step() before reset()")
        a = np.clip(np.atleast_1d(np.asarray(action, dtype=float)),
                    -self.spec.a_max, self.spec.a_max)
        S = self.state[None, :]
        A = a[None, :]
        reward = float(K.step_reward(self.env_id, S, A, self.rmode)[0])
        s2 = K.model_step(self.env_id, 1, self.phys, _EMPTY_THETA, _EMPTY_LAYOUT,
                          S, A, self.spec.dt, self.substeps, self.scheme)[0]
        self.state = s2
        self.steps += 1
        self.samples_consumed += 1
        terminated = False
        if self.spec.early_term:
            terminated = bool(K.terminal(self.env_id, s2[None, :], self.spec.tparams)[0])
            if terminated and self.env_id == ACROBOT:
                reward = 0.0
        truncated = self.steps >= self.spec.horizon and not terminated
        return StepResult(self.observe(), reward, terminated, truncated)

    def pack(self):
        """Ground-truth rollout pack (oracle planning / model comparisons)."""
        return ModelPack(self.env_id, 1, self.phys.copy(), _EMPTY_THETA, _EMPTY_LAYOUT,
                         self.spec.dt, self.substeps, self.scheme,
                         self.spec.tparams, self.rmode, self.spec.a_max.copy())

    def sample_action(self, rng=None):
        r = rng if rng is not None else self.rng
        return r.uniform(-self.spec.a_max, self.spec.a_max)
