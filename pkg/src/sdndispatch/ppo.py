"""Clipped-surrogate training of the dispatching policy on the simulator.

The policy network is updated with the clipped importance-ratio objective.
Because an action's probability comes out of the projection rather than a
softmax, the surrogate gradient is assembled from the exact probability
gradient: zero wherever the clip is active against the advantage sign or the
action left the support, and (A / behavior_prob) * dprob/dparams elsewhere.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import mlp
from .dispatch import (NeuralDispatchPolicy, action_probability_and_gradient,
                       policy_mlp_spec, value_mlp_spec)
from .settings import NetworkSetting
from .sim import Simulation, fmt_float


class TrainingError(RuntimeError):
    """Raised when an update produces non-finite gradients."""


@dataclass(frozen=True)
class TrainingConfig:
    steps_per_iteration: int = 1024
    epochs: int = 10
    minibatch_size: int = 64
    clip_epsilon: float = 0.2
    discount: float = 0.99
    gae_lambda: float = 0.95
    learning_rate: float = 3e-4
    episodes_per_setting: int = 2
    support_size: int = 2

    def __post_init__(self) -> None:
        if self.steps_per_iteration < 1:
            raise ValueError("steps_per_iteration must be >= 1")
        if not 1 <= self.minibatch_size <= self.steps_per_iteration:
            raise ValueError("minibatch_size must be in [1, steps_per_iteration]")
        if self.steps_per_iteration % self.minibatch_size != 0:
            raise ValueError("steps_per_iteration must divide into whole minibatches")
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ValueError("clip_epsilon must be in (0, 1)")
        if not 0.0 <= self.discount <= 1.0:
            raise ValueError("discount must be in [0, 1]")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must be in [0, 1]")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1 or self.episodes_per_setting < 1:
            raise ValueError("epochs and episodes_per_setting must be >= 1")
        if self.support_size < 1:
            raise ValueError("support_size must be >= 1")


@dataclass
class Transition:
    """One dispatch decision and what the environment returned for it."""

    features: np.ndarray      # (num_controllers, FEATURE_DIM) at decision time
    global_state: np.ndarray  # value-network input at decision time
    action: int
    behavior_prob: float      # probability the behavior policy gave the action
    reward: float             # reward collected before the next decision
    value: float              # value estimate at decision time


def estimate_advantages(rewards: np.ndarray, values: np.ndarray,
                        bootstrap_value: float,
                        config: TrainingConfig) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates plus regression targets.

    Returns (advantages, returns).  Returns are raw advantage + value;
    advantages are then normalized to zero mean and unit variance across the
    iteration (a degenerate all-equal iteration normalizes to zeros).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.shape != values.shape or rewards.ndim != 1 or rewards.size == 0:
        raise ValueError("rewards and values must be matching non-empty vectors")
    n = rewards.size
    adv = np.empty(n)
    next_value = float(bootstrap_value)
    acc = 0.0
    g, lam = config.discount, config.gae_lambda
    for t in range(n - 1, -1, -1):
        delta = rewards[t] + g * next_value - values[t]
        acc = delta + g * lam * acc
        adv[t] = acc
        next_value = values[t]
    returns = adv + values
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv, returns


class Adam:
    """Adaptive moment estimation; apply() takes one descent step in place."""

    def __init__(self, dim: int, learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self._lr = learning_rate
        self._b1 = beta1
        self._b2 = beta2
        self._eps = eps
        self._m = np.zeros(dim)
        self._v = np.zeros(dim)
        self._t = 0

    def apply(self, flat: np.ndarray, grad: np.ndarray) -> None:
        self._t += 1
        self._m += (1.0 - self._b1) * (grad - self._m)
        self._v += (1.0 - self._b2) * (grad * grad - self._v)
        mhat = self._m / (1.0 - self._b1 ** self._t)
        vhat = self._v / (1.0 - self._b2 ** self._t)
        flat -= self._lr * mhat / (np.sqrt(vhat) + self._eps)


def surrogate_gradient(transition: Transition, advantage: float,
                       params: mlp.MlpParams, config: TrainingConfig) -> np.ndarray:
    """Gradient of the clipped surrogate for one transition (ascent direction).

    Zero when the clip is active against the advantage sign or the action has
    left the support; otherwise (advantage / behavior_prob) times the action
    probability gradient.
    """
    old = transition.behavior_prob
    if not np.isfinite(old) or old <= 0.0:
        raise ValueError("behavior probability must be positive")
    prob, dprob = action_probability_and_gradient(
        params, transition.features, config.support_size, transition.action)
    if prob == 0.0:
        return np.zeros(params.spec.param_count)
    ratio = prob / old
    eps = config.clip_epsilon
    if (ratio < 1.0 - eps and advantage < 0.0) or (ratio > 1.0 + eps and advantage > 0.0):
        return np.zeros(params.spec.param_count)
    return (advantage / old) * dprob


def value_gradient(transition: Transition, return_target: float,
                   params: mlp.MlpParams) -> np.ndarray:
    """Descent gradient of the squared-error value loss for one transition."""
    v = mlp.forward(params, transition.global_state)
    return mlp.backward(params, transition.global_state, upstream=v - float(return_target))


def _policy_minibatch_gradient(params: mlp.MlpParams, feats: np.ndarray,
                               actions: np.ndarray, behavior: np.ndarray,
                               adv: np.ndarray, config: TrainingConfig) -> np.ndarray:
    """Mean ascent gradient over a minibatch, via one batched backward pass."""
    batch, nc, fd = feats.shape
    scores_flat, cache = mlp.forward_batch(params, feats.reshape(batch * nc, fd))
    scores = scores_flat.reshape(batch, nc)
    totals = scores.sum(axis=1)
    tilde = scores / totals[:, None]
    perm = np.argsort(-tilde, axis=1, kind="stable")
    m = min(config.support_size, nc)
    ranks = np.empty_like(perm)
    np.put_along_axis(ranks, perm, np.broadcast_to(np.arange(nc), (batch, nc)), axis=1)
    rows = np.arange(batch)
    share = (1.0 - np.take_along_axis(tilde, perm[:, :m], axis=1).sum(axis=1)) / m
    in_support = ranks[rows, actions] < m
    prob = np.where(in_support, tilde[rows, actions] + share, 0.0)
    ratio = prob / behavior
    eps = config.clip_epsilon
    clipped_out = ((ratio < 1.0 - eps) & (adv < 0.0)) | ((ratio > 1.0 + eps) & (adv > 0.0))
    scale = np.where(clipped_out | ~in_support, 0.0, adv / behavior)
    coeff = np.where(ranks >= m, 1.0 / m, 0.0)
    coeff[rows, actions] += 1.0
    coeff = (coeff - prob[:, None]) / totals[:, None]
    upstream = (scale[:, None] * coeff / batch).reshape(batch * nc)
    return mlp.backward_batch(params, cache, upstream)


def _value_minibatch_gradient(params: mlp.MlpParams, glob: np.ndarray,
                              returns: np.ndarray) -> np.ndarray:
    v, cache = mlp.forward_batch(params, glob)
    return mlp.backward_batch(params, cache, (v - returns) / returns.size)


def update_iteration(transitions: list[Transition], bootstrap_value: float,
                     policy_params: mlp.MlpParams, value_params: mlp.MlpParams,
                     policy_opt: Adam, value_opt: Adam,
                     config: TrainingConfig, rng: np.random.Generator) -> None:
    """Run the epoch/minibatch update cycle over one collected iteration."""
    n = len(transitions)
    if n == 0:
        raise ValueError("cannot update on an empty iteration")
    feats = np.stack([t.features for t in transitions])
    glob = np.stack([t.global_state for t in transitions])
    actions = np.asarray([t.action for t in transitions], dtype=np.intp)
    behavior = np.asarray([t.behavior_prob for t in transitions])
    rewards = np.asarray([t.reward for t in transitions])
    values = np.asarray([t.value for t in transitions])
    if not np.all(np.isfinite(behavior)) or np.any(behavior <= 0.0):
        raise ValueError("transitions carry non-positive behavior probabilities")
    adv, returns = estimate_advantages(rewards, values, bootstrap_value, config)
    mb = config.minibatch_size
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, mb):
            idx = order[lo:lo + mb]
            g_policy = _policy_minibatch_gradient(
                policy_params, feats[idx], actions[idx], behavior[idx], adv[idx], config)
            if not np.all(np.isfinite(g_policy)):
                raise TrainingError(
                    f"non-finite policy gradient (epoch {epoch}, batch at {lo}, "
                    f"|adv| max {np.abs(adv[idx]).max():.3g})")
            policy_opt.apply(policy_params.flat, -g_policy)  # ascend the surrogate
            g_value = _value_minibatch_gradient(value_params, glob[idx], returns[idx])
            if not np.all(np.isfinite(g_value)):
                raise TrainingError(f"non-finite value gradient (epoch {epoch}, batch at {lo})")
            value_opt.apply(value_params.flat, g_value)


@dataclass(frozen=True)
class IterationRecord:
    """One logged training iteration (reward sums over its own steps)."""

    setting: str
    episode: int
    iteration: int
    sim_time: float
    steps: int
    reward: float
    mean_response_time: float


@dataclass
class TrainingResult:
    policy: mlp.MlpParams
    value: mlp.MlpParams
    records: list[IterationRecord]
    stage_policies: list[tuple[str, mlp.MlpParams]] = field(default_factory=list)


def write_training_csv(records: list[IterationRecord], path) -> None:
    lines = ["setting,episode,iteration,sim_time_s,steps,cumulative_reward,mean_response_time_s"]
    for r in records:
        lines.append(
            f"{r.setting},{r.episode},{r.iteration},{fmt_float(r.sim_time)},"
            f"{r.steps},{fmt_float(r.reward)},{fmt_float(r.mean_response_time)}")
    from pathlib import Path
    Path(path).write_text("\n".join(lines) + "\n")


def _run_training_episode(setting: NetworkSetting, label: str, episode_index: int,
                          policy: NeuralDispatchPolicy, value_params: mlp.MlpParams,
                          policy_opt: Adam, value_opt: Adam, config: TrainingConfig,
                          shuffle_rng: np.random.Generator, sim_seed, policy_rng,
                          records: list[IterationRecord], progress) -> None:
    sim = Simulation(setting, sim_seed)
    policy.reset(setting, policy_rng)
    buffer: list[Transition] = []
    pending: Transition | None = None
    iteration = 0
    delivered_mark = 0
    tau_mark = 0.0

    def close_iteration(bootstrap: float) -> None:
        nonlocal iteration, delivered_mark, tau_mark
        iteration += 1
        update_iteration(buffer, bootstrap, policy.params, value_params,
                         policy_opt, value_opt, config, shuffle_rng)
        got = sim.delivered - delivered_mark
        mean_tau = (sim.tau_sum - tau_mark) / got if got else 0.0
        rec = IterationRecord(
            setting=label, episode=episode_index, iteration=iteration,
            sim_time=sim.now, steps=len(buffer),
            reward=float(sum(t.reward for t in buffer)),
            mean_response_time=mean_tau)
        records.append(rec)
        delivered_mark = sim.delivered
        tau_mark = sim.tau_sum
        if progress is not None:
            progress(f"{label} ep{episode_index} it{iteration}: "
                     f"steps={rec.steps} reward={rec.reward:.0f} "
                     f"mean_tau={mean_tau * 1e3:.2f}ms")

    step = sim.advance()
    policy.observe(step)
    while True:
        if step.request is None:
            if pending is not None:
                pending.reward = step.reward
                buffer.append(pending)
            if buffer:
                close_iteration(0.0)  # episode over: nothing left to bootstrap
            break
        if pending is not None:
            pending.reward = step.reward
            buffer.append(pending)
            pending = None
            if len(buffer) == config.steps_per_iteration:
                boot = mlp.forward(value_params,
                                   policy.tracker.global_state(step.request.switch))
                close_iteration(boot)
                buffer = []
        decision = policy.decide(step.request)
        value = mlp.forward(value_params, decision.global_state)
        sim.dispatch(step.request, decision.action)
        pending = Transition(
            features=decision.features,
            global_state=decision.global_state,
            action=decision.action,
            behavior_prob=float(decision.distribution.probabilities[decision.action]),
            reward=0.0,
            value=value)
        step = sim.advance()
        policy.observe(step)


def train(settings: list[NetworkSetting], config: TrainingConfig = TrainingConfig(),
          seed: int = 0, progress=None) -> TrainingResult:
    """Train one policy across the given settings in order.

    Both networks and the optimizer state persist across settings and
    episodes; a snapshot of the policy is kept after each finished setting.
    """
    if not settings:
        raise ValueError("need at least one setting to train on")
    init_rng = np.random.default_rng([seed, 10])
    policy_params = mlp.init_params(policy_mlp_spec(), init_rng)
    value_params = mlp.init_params(value_mlp_spec(), init_rng)
    policy_opt = Adam(policy_params.spec.param_count, config.learning_rate)
    value_opt = Adam(value_params.spec.param_count, config.learning_rate)
    shuffle_rng = np.random.default_rng([seed, 11])
    policy = NeuralDispatchPolicy(policy_params, config.support_size)
    records: list[IterationRecord] = []
    stages: list[tuple[str, mlp.MlpParams]] = []
    for si, setting in enumerate(settings):
        label = setting.name if setting.name != "custom" else f"setting{si + 1}"
        for ep in range(1, config.episodes_per_setting + 1):
            _run_training_episode(
                setting, label, ep, policy, value_params, policy_opt, value_opt,
                config, shuffle_rng, sim_seed=[seed, 12, si, ep],
                policy_rng=np.random.default_rng([seed, 13, si, ep]),
                records=records, progress=progress)
        stages.append((label, policy_params.copy()))
    return TrainingResult(policy=policy_params, value=value_params,
                          records=records, stage_policies=stages)
