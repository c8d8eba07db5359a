"""Asynchronous evolution-strategy policy search with gradient workers."""

from .config import ConfigError, ExperimentConfig, load_config
from .distribution import (
    DistributionUpdater,
    Individual,
    MeanRuleConfig,
    PopulationDistribution,
    VarianceRuleConfig,
    adaptive_population_size,
    apply_mean_update,
    rank_based_mean_sync,
    rank_based_variance_sync,
    sample_individual,
    success_rule_variance,
    update_ratio,
    welford_variance_update,
)
from .engine import RunAccounting, RunResult, run_experiment
from .envs import EvalResult, PendulumEnv, PointMassEnv, Transition, evaluate, synthetic_fitness
from .population import RoleCounter, assign_role, compute_p_rl
from .rl import CriticState, ReplayBuffer, RlHyper, actor_train_step, critic_train_step
from .runlog import RunLog, replay_log
from .timing import LatencyModel, schedule_trace, simulate_timing

__version__ = "0.1.0"
