"""Learned request dispatching: features, priorities, and the top-m distribution.

A dispatch decision runs in three stages.  A state tracker turns the switch's
local observations into one fixed-width feature row per controller; a shared
scalar network maps each row to a positive priority; and the priorities are
normalized then projected onto the probability simplex restricted to the m
highest-priority controllers.  Because the network is applied per controller,
one parameter vector works for any controller count.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from . import mlp
from .settings import NetworkSetting

ALPHA_REF = 15000.0  # reference rate that normalizes capacity- and rate-like inputs
TIME_REF = 0.1  # seconds; delays and response times enter the networks in this unit
FEATURE_DIM = 7
HISTORY_LEN = 5
GLOBAL_DIM = 3 + 2 * HISTORY_LEN
EWMA_WEIGHT = 0.1
RATE_WINDOW = 0.1  # seconds at time scale 1; scaled together with the episode


def policy_mlp_spec() -> mlp.MlpSpec:
    """Architecture of the priority network (positive scalar per controller)."""
    return mlp.MlpSpec(FEATURE_DIM, (64, 64), "softplus")


def value_mlp_spec() -> mlp.MlpSpec:
    """Architecture of the state-value network used during training."""
    return mlp.MlpSpec(GLOBAL_DIM, (64, 64), "identity")


@dataclass(frozen=True)
class DispatchDistribution:
    """Projection result: action probabilities plus the pieces behind them."""

    priorities: np.ndarray         # raw positive scores, controller order
    normalized_sorted: np.ndarray  # scores / sum, descending
    permutation: np.ndarray        # controller index at each sorted rank
    probabilities: np.ndarray      # controller order; zero outside the support
    support_size: int              # effective m after clamping to the count


def project(priorities: np.ndarray, support_size: int) -> DispatchDistribution:
    """Map positive priorities to the nearest distribution with <= m nonzeros.

    The scores are normalized to sum to one, then the mass outside the m
    highest-ranked controllers is redistributed evenly over those m.  That is
    exactly the Euclidean projection of the normalized vector onto the simplex
    restricted to the top-m support, because the added share is never negative.
    Ties rank the lower controller index first (stable sort).
    """
    o = np.asarray(priorities, dtype=np.float64)
    if o.ndim != 1 or o.size == 0:
        raise ValueError("priorities must be a non-empty 1-d vector")
    if not np.all(np.isfinite(o)) or np.any(o < 0):
        raise ValueError("priorities must be finite and non-negative")
    total = o.sum()
    if total <= 0.0:
        raise ValueError("priorities must contain positive mass")
    if support_size < 1:
        raise ValueError("support_size must be >= 1")
    m = min(int(support_size), o.size)
    tilde = o / total
    perm = np.argsort(-tilde, kind="stable")
    top = perm[:m]
    share = (1.0 - tilde[top].sum()) / m
    probs = np.zeros_like(tilde)
    probs[top] = tilde[top] + share
    return DispatchDistribution(
        priorities=o,
        normalized_sorted=tilde[perm],
        permutation=perm,
        probabilities=probs,
        support_size=m,
    )


def sample_action(dist: DispatchDistribution, rng: np.random.Generator) -> int:
    """Draw a controller index; zero-probability entries are never returned."""
    u = rng.random()
    acc = 0.0
    last = -1
    for i, p in enumerate(dist.probabilities):
        if p <= 0.0:
            continue
        acc += p
        last = i
        if u < acc:
            return i
    if last < 0:
        raise ValueError("distribution has no positive entries")
    return last  # u landed in the roundoff sliver past the final cumsum


def compute_priorities(params: mlp.MlpParams, features: np.ndarray) -> np.ndarray:
    """Apply the shared priority network to each controller's feature row."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[1] != FEATURE_DIM:
        raise ValueError(f"features must be (controllers, {FEATURE_DIM}), got {f.shape}")
    if not np.all(np.isfinite(f)):
        raise ValueError("features contain non-finite values")
    out, _ = mlp.forward_batch(params, f)
    return out


def action_probability(params: mlp.MlpParams, features: np.ndarray,
                       support_size: int, action: int) -> float:
    dist = project(compute_priorities(params, features), support_size)
    return float(dist.probabilities[action])


def action_probability_and_gradient(
    params: mlp.MlpParams, features: np.ndarray, support_size: int, action: int
) -> tuple[float, np.ndarray]:
    """Probability of `action` plus its exact gradient in the network weights.

    The sort permutation is held fixed (it is locally constant off priority
    ties), so the probability is a smooth rational function of the per
    controller scores and backpropagates through one batched pass with one
    upstream weight per controller.  Outside the support the probability is
    identically zero and so is the gradient.
    """
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[1] != FEATURE_DIM:
        raise ValueError(f"features must be (controllers, {FEATURE_DIM}), got {f.shape}")
    if not np.all(np.isfinite(f)):
        raise ValueError("features contain non-finite values")
    n = f.shape[0]
    if not 0 <= action < n:
        raise ValueError(f"action {action} out of range for {n} controllers")
    scores, cache = mlp.forward_batch(params, f)
    dist = project(scores, support_size)
    m = dist.support_size
    prob = float(dist.probabilities[action])
    if prob <= 0.0:
        return 0.0, np.zeros(params.spec.param_count)
    ranks = np.empty(n, dtype=np.intp)
    ranks[dist.permutation] = np.arange(n)
    # d prob / d score_c = (1[c == action] + 1[rank_c >= m]/m - prob) / sum(scores)
    coeff = np.where(ranks >= m, 1.0 / m, 0.0)
    coeff[action] += 1.0
    coeff = (coeff - prob) / scores.sum()
    return prob, mlp.backward_batch(params, cache, coeff)


class StateTracker:
    """Maintains each switch's local view used to build network inputs.

    Controller utilization is learned from the periodic reports as they reach
    the switch; response times feed a per-(switch, controller) running average
    with first-sample seeding; request arrivals at the switch feed a windowed
    rate estimate.  A short history of windowed response-time and utilization
    averages backs the value-network input.
    """

    def __init__(self, setting: NetworkSetting):
        ns, nc = setting.num_switches, setting.num_controllers
        self._nc = nc
        self._seen_u = np.zeros((ns, nc))
        self._u_delta = np.zeros((ns, nc))
        self._has_report = np.zeros((ns, nc), dtype=bool)
        self._tau_ewma = np.zeros((ns, nc))
        self._tau_delta = np.zeros((ns, nc))
        self._has_tau = np.zeros((ns, nc), dtype=bool)
        self._arrivals: list[deque[float]] = [deque() for _ in range(ns)]
        self._rate_window = RATE_WINDOW * setting.time_scale
        self._feat = np.zeros((ns, nc, FEATURE_DIM))
        self._feat[:, :, 0] = setting.capacities / ALPHA_REF
        self._feat[:, :, 1] = setting.delay / TIME_REF
        # value-input histories, one set per switch, seeded with zeros
        self._hist_tau = [deque([0.0] * HISTORY_LEN, maxlen=HISTORY_LEN) for _ in range(ns)]
        self._hist_u = [deque([0.0] * HISTORY_LEN, maxlen=HISTORY_LEN) for _ in range(ns)]
        self._win_tau_sum = np.zeros(ns)
        self._win_tau_n = np.zeros(ns, dtype=np.int64)
        self._window = setting.report_period
        self._next_boundary = setting.report_period
        total_rate = setting.arrival_rates.sum()
        if total_rate > 0:
            switch_weight = setting.arrival_rates / total_rate
        else:
            switch_weight = np.full(ns, 1.0 / ns)
        avg_delay = float(switch_weight @ setting.delay.mean(axis=1)) / TIME_REF
        self._global_head = (
            float(setting.capacities.sum() / ALPHA_REF),
            avg_delay,
            float(total_rate / ALPHA_REF),
        )

    def _roll_boundary(self) -> None:
        ns = len(self._arrivals)
        for s in range(ns):
            n = self._win_tau_n[s]
            self._hist_tau[s].append(self._win_tau_sum[s] / n if n else 0.0)
            self._hist_u[s].append(float(self._seen_u[s].mean()))
        self._win_tau_sum[:] = 0.0
        self._win_tau_n[:] = 0
        self._next_boundary += self._window

    def observe(self, step) -> None:
        """Fold one simulator step's deliveries and report arrivals in."""
        events = [(r.delivered_at, 0, r) for r in step.responses]
        events += [(r.arrived_at, 1, r) for r in step.reports]
        events.sort(key=lambda e: (e[0], e[1]))
        for t, kind, r in events:
            while t >= self._next_boundary:
                self._roll_boundary()
            s = r.switch
            c = r.controller
            if kind == 0:
                tau = r.response_time
                self._win_tau_sum[s] += tau
                self._win_tau_n[s] += 1
                if self._has_tau[s, c]:
                    old = self._tau_ewma[s, c]
                    new = old + EWMA_WEIGHT * (tau - old)
                    self._tau_ewma[s, c] = new
                    self._tau_delta[s, c] = new - old
                else:
                    self._tau_ewma[s, c] = tau  # first sample seeds the average
                    self._has_tau[s, c] = True
            else:
                if self._has_report[s, c]:
                    self._u_delta[s, c] = r.utilization - self._seen_u[s, c]
                else:
                    self._has_report[s, c] = True
                self._seen_u[s, c] = r.utilization
        while step.time >= self._next_boundary:
            self._roll_boundary()

    def features(self, switch: int, now: float) -> np.ndarray:
        """Per-controller feature rows for a request at `switch` at time `now`."""
        arr = self._arrivals[switch]
        horizon = now - self._rate_window
        while arr and arr[0] < horizon:
            arr.popleft()
        f = self._feat[switch]
        f[:, 2] = self._seen_u[switch]
        f[:, 3] = self._u_delta[switch]
        f[:, 4] = self._tau_ewma[switch] / TIME_REF
        f[:, 5] = self._tau_delta[switch] / TIME_REF
        f[:, 6] = len(arr) / self._rate_window / ALPHA_REF
        return f.copy()

    def note_arrival(self, switch: int, now: float) -> None:
        """Record a dispatched request; counted by later rate estimates only."""
        self._arrivals[switch].append(now)

    def global_state(self, switch: int) -> np.ndarray:
        """Fixed-width value-network input summarizing the whole setting."""
        out = np.empty(GLOBAL_DIM)
        out[0:3] = self._global_head
        out[3:3 + HISTORY_LEN] = self._hist_tau[switch]
        out[3:3 + HISTORY_LEN] /= TIME_REF
        out[3 + HISTORY_LEN:] = self._hist_u[switch]
        return out


@dataclass(frozen=True)
class Decision:
    """Everything the trainer needs to remember about one dispatch."""

    features: np.ndarray
    global_state: np.ndarray
    distribution: DispatchDistribution
    action: int


class NeuralDispatchPolicy:
    """Dispatching policy driven by a trained priority network."""

    needs_observables = True

    def __init__(self, params: mlp.MlpParams, support_size: int = 2):
        spec = params.spec
        if spec.input_dim != FEATURE_DIM or spec.output != "softplus":
            raise ValueError("parameter store does not match the priority-network shape")
        if support_size < 1:
            raise ValueError("support_size must be >= 1")
        self.params = params
        self.support_size = support_size
        self._tracker: StateTracker | None = None
        self._rng: np.random.Generator | None = None

    def reset(self, setting: NetworkSetting, rng: np.random.Generator) -> None:
        self._tracker = StateTracker(setting)
        self._rng = rng

    def observe(self, step) -> None:
        self._tracker.observe(step)

    def decide(self, request) -> Decision:
        tracker = self._tracker
        feats = tracker.features(request.switch, request.generated_at)
        scores, _ = mlp.forward_batch(self.params, feats)
        if not np.all(np.isfinite(scores)):
            raise ValueError("priority network produced non-finite scores")
        dist = project(scores, self.support_size)
        action = sample_action(dist, self._rng)
        tracker.note_arrival(request.switch, request.generated_at)
        return Decision(feats, tracker.global_state(request.switch), dist, action)

    def select(self, request) -> int:
        return self.decide(request).action

    @property
    def tracker(self) -> StateTracker:
        return self._tracker
