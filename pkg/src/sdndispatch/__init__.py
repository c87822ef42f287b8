"""Event-driven SDN control-plane simulator with a trainable dispatching policy."""

from .settings import ConfigError, NetworkSetting, load_preset, load_setting, resolve_setting
from .sim import EpisodeLog, Simulation, generate_arrivals, run_episode, write_episode_csv
from .dispatch import (DispatchDistribution, NeuralDispatchPolicy, StateTracker,
                       action_probability, action_probability_and_gradient,
                       compute_priorities, project, sample_action)
from .mlp import (CheckpointError, MlpParams, MlpSpec, backward, forward,
                  init_params, load_params, save_params)
from .baselines import RandomPolicy, WeightedRoundRobinPolicy, WrrState, random_dispatch, wrr_select
from .ppo import (TrainingConfig, TrainingResult, Transition, estimate_advantages,
                  surrogate_gradient, train, update_iteration, value_gradient)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "NetworkSetting", "load_preset", "load_setting", "resolve_setting",
    "EpisodeLog", "Simulation", "generate_arrivals", "run_episode", "write_episode_csv",
    "DispatchDistribution", "NeuralDispatchPolicy", "StateTracker",
    "action_probability", "action_probability_and_gradient",
    "compute_priorities", "project", "sample_action",
    "CheckpointError", "MlpParams", "MlpSpec", "backward", "forward",
    "init_params", "load_params", "save_params",
    "RandomPolicy", "WeightedRoundRobinPolicy", "WrrState", "random_dispatch", "wrr_select",
    "TrainingConfig", "TrainingResult", "Transition", "estimate_advantages",
    "surrogate_gradient", "train", "update_iteration", "value_gradient",
    "__version__",
]
