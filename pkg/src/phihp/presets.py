"""Per-task settings: budgets, penalty schedule, planner shape, agent budgets.

Everything here is a default; the harness exposes each field through the
flat config interface, so presets are a starting point rather than a cage.
"""

from dataclasses import dataclass, replace

from .agent import Td3Config
from .envs import ENV_IDS
from .model import ModelTrainConfig
from .planner import PlanConfig, oracle_config


@dataclass(frozen=True)
class TaskPreset:
    env: str
    budget: int              # real transitions granted to model learning
    horizon: int             # planning horizon H
    alpha: float             # terminal-value weight in the hybrid score
    penalty_initial: float   # residual-penalty schedule start
    penalty_growth: float    # residual-penalty growth per unit epoch loss
    model_depth: int         # hidden layers in the residual MLP
    td3_steps: int           # imagined gradient updates


_ROWS = {
    #                      budget  H  alpha  pen0  growth depth td3
    "pendulum":          (  2000, 5, 1.50, 1e3, 1e3, 2, 200_000),
    "pendulum_swingup":  (  5000, 5, 1.50, 1e3, 1e3, 2, 200_000),
    "cartpole":          (  5000, 4, 0.20, 1e3, 1e5, 2, 300_000),
    "cartpole_swingup":  (  5000, 6, 0.03, 1e3, 1e5, 2, 300_000),
    "acrobot":           (  5000, 4, 0.80, 1e2, 1e5, 3, 500_000),
    "acrobot_swingup":   ( 15000, 3, 0.80, 1e3, 1e5, 3, 500_000),
}


def preset(env):
    if env not in _ROWS:
        raise KeyError(f"no preset for env {env!r} (known: {sorted(_ROWS)})")
    return TaskPreset(env, *_ROWS[env])


def model_config(p):
    return ModelTrainConfig(penalty_initial=p.penalty_initial,
                            penalty_growth=p.penalty_growth,
                            depth=p.model_depth)


def plan_config(p, pipeline="phihp"):
    """Planner shape for a pipeline.

    phihp gets the short task horizon plus policy candidates and the terminal
    value term.  The plain-CEM controllers (ph_cem, dd_cem, cem_oracle) have
    no value function to look beyond the horizon, so they get the long-horizon
    rewards-only configuration instead; that is what makes them expensive per
    step.  The resolved config is what actually runs -- sweeps and overrides
    apply on top of it.
    """
    cfg = PlanConfig(horizon=p.horizon)
    if pipeline == "phihp":
        return replace(cfg, use_policy=True, use_q=True, q_weight=p.alpha)
    if pipeline in ("ph_cem", "dd_cem", "cem_oracle"):
        return oracle_config(cfg)
    return cfg


def td3_config(p):
    return Td3Config(steps=p.td3_steps)
