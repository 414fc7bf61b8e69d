"""Physics-informed residual dynamics models with hybrid planning.

The pipeline: learn a dynamics model as an analytic frictionless prior plus
a small neural residual from a few thousand real samples, train a TD3
actor-critic entirely inside that model, then plan at decision time with a
short-horizon CEM whose candidates and terminal values come from the
actor-critic.  The ``harness`` module benchmarks the full method against its
ablations on six friction-augmented classic control tasks.
"""

__version__ = "0.1.0"

from .backend import BACKEND, USING_NUMBA
from .envs import ENV_IDS, Env, EnvSpec, ModelPack, default_params, spec_for
from .ode import IntegratorConfig, integrate, order_of_accuracy, rollout
from .model import DynamicsModel, ModelTrainConfig, collect_and_train
from .agent import Td3Config, train_in_imagination, train_on_real
from .planner import PlanConfig, cem_plan, mpc_episode, oracle_config
from .harness import (MetricRecord, RunConfig, emit_report, run_config,
                      run_pipeline, sample_efficiency, sweep, welch_t)
