"""Event-driven simulator for the switch/controller request loop.

Requests appear at switches as Poisson streams, travel one-way delay
delay[s][c] to the chosen controller, wait in FIFO order for a deterministic
1/capacity service slot, and travel the same delay back.  Controllers also
publish their recent busy fraction on a fixed period; those reports reach each
switch after the same path delay.  Everything runs on one event heap ordered
by (time, kind, insertion), with arrivals ranked before completions and
completions before reporting, so reruns are bit-identical.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .settings import NetworkSetting

# heap kinds double as deterministic tie ranks
_REQ_ARRIVE = 0
_RESP_ARRIVE = 1
_COMPLETE = 2
_REPORT_EMIT = 3
_REPORT_ARRIVE = 4

_POLICY_STREAM = 1  # tags the policy rng so it never aliases the arrival rng


def fmt_float(x: float) -> str:
    """Shortest exact decimal form; keeps CSV output reproducible bit-for-bit."""
    return repr(float(x))


def generate_arrivals(setting: NetworkSetting, seed) -> tuple[np.ndarray, np.ndarray]:
    """Sample every switch's request times over [0, t_max).

    Returns (times, switches) merged across switches in time order.  The same
    (setting, seed) pair always yields the same stream.
    """
    rng = np.random.default_rng(seed)
    t_max = setting.t_max
    all_times = []
    all_switches = []
    for s, rate in enumerate(setting.arrival_rates):
        if rate <= 0.0:
            continue
        expected = rate * t_max
        chunk = int(expected + 4.0 * np.sqrt(expected) + 16)
        times = np.cumsum(rng.exponential(1.0 / rate, size=chunk))
        while times[-1] < t_max:  # rare: top up until the horizon is covered
            extra = np.cumsum(rng.exponential(1.0 / rate, size=chunk)) + times[-1]
            times = np.concatenate([times, extra])
        times = times[times < t_max]
        all_times.append(times)
        all_switches.append(np.full(times.size, s, dtype=np.int64))
    if not all_times:
        return np.empty(0), np.empty(0, dtype=np.int64)
    times = np.concatenate(all_times)
    switches = np.concatenate(all_switches)
    order = np.argsort(times, kind="stable")
    return times[order], switches[order]


@dataclass
class Request:
    id: int
    switch: int
    generated_at: float
    dispatched_to: int | None = None


class Response(NamedTuple):
    switch: int
    controller: int
    response_time: float
    delivered_at: float


class ReportArrival(NamedTuple):
    switch: int
    controller: int
    utilization: float
    arrived_at: float


@dataclass
class SimStep:
    """What happened between the previous decision point and this one."""

    request: Request | None      # None means the episode reached t_max
    reward: float                # sum of 1/response_time over this interval
    responses: list[Response]
    reports: list[ReportArrival]
    time: float


class Simulation:
    """Steps the network between request generations.

    Usage: call advance() to run until the next request (or the horizon),
    dispatch() the returned request, and repeat until advance() hands back a
    step whose request is None.
    """

    def __init__(self, setting: NetworkSetting, seed=0,
                 arrivals: tuple[np.ndarray, np.ndarray] | None = None):
        self.setting = setting
        if arrivals is None:
            arrivals = generate_arrivals(setting, seed)
        times, switches = arrivals
        times = np.asarray(times, dtype=np.float64)
        switches = np.asarray(switches, dtype=np.int64)
        if times.ndim != 1 or times.shape != switches.shape:
            raise ValueError("arrival stream must be matching 1-d time/switch arrays")
        if times.size and (np.any(np.diff(times) < 0) or times[0] < 0 or times[-1] >= setting.t_max):
            raise ValueError("arrival times must be sorted and inside [0, t_max)")
        self._arr_t = times
        self._arr_s = switches
        self._arr_i = 0
        nc, ns = setting.num_controllers, setting.num_switches
        self._svc = setting.service_times.tolist()
        self._delay = [list(row) for row in setting.delay]
        self._busy_until = [0.0] * nc
        self._idle_total = [0.0] * nc
        self._busy_at_report = [0.0] * nc
        self.last_reported_u = [0.0] * nc
        self.controller_arrivals = [0] * nc
        self.controller_completions = [0] * nc
        self.dispatch_counts = np.zeros((ns, nc), dtype=np.int64)
        self.generated = 0
        self.delivered = 0
        self.tau_sum = 0.0
        self.total_reward = 0.0
        self.now = 0.0
        self._heap: list[tuple] = []
        self._seq = 0
        if setting.report_period <= setting.t_max:
            self._push(setting.report_period, _REPORT_EMIT, 0, 0, 0.0)
        self._pending: Request | None = None
        self._finished = False
        self._reward_acc = 0.0
        self._responses: list[Response] = []
        self._reports: list[ReportArrival] = []

    def _push(self, t: float, kind: int, a: int, b: int, x: float) -> None:
        heapq.heappush(self._heap, (t, kind, self._seq, a, b, x))
        self._seq += 1

    def _run_events(self, limit: float, inclusive: bool) -> None:
        heap = self._heap
        push = heapq.heappush
        pop = heapq.heappop
        svc = self._svc
        delay = self._delay
        busy = self._busy_until
        idle = self._idle_total
        arrivals = self.controller_arrivals
        completions = self.controller_completions
        responses = self._responses
        reports = self._reports
        seq = self._seq
        reward = self._reward_acc
        tau_sum = self.tau_sum
        delivered = self.delivered
        period = self.setting.report_period
        t_max = self.setting.t_max
        ns = self.setting.num_switches
        nc = self.setting.num_controllers
        while heap:
            t = heap[0][0]
            if t > limit or (t == limit and not inclusive):
                break
            _, kind, _, a, b, x = pop(heap)
            if kind == _REQ_ARRIVE:
                # a = controller, b = switch, x = generation time
                start = busy[a]
                if t > start:
                    idle[a] += t - start
                    start = t
                done = start + svc[a]
                busy[a] = done
                arrivals[a] += 1
                push(heap, (done, _COMPLETE, seq, a, b, x))
                seq += 1
            elif kind == _RESP_ARRIVE:
                tau = t - x
                reward += 1.0 / tau
                tau_sum += tau
                delivered += 1
                responses.append(Response(b, a, tau, t))
            elif kind == _COMPLETE:
                completions[a] += 1
                push(heap, (t + delay[b][a], _RESP_ARRIVE, seq, a, b, x))
                seq += 1
            elif kind == _REPORT_EMIT:
                for c in range(nc):
                    bt = (busy[c] if busy[c] < t else t) - idle[c]
                    u = (bt - self._busy_at_report[c]) / period
                    u = 0.0 if u < 0.0 else (1.0 if u > 1.0 else u)
                    self._busy_at_report[c] = bt
                    self.last_reported_u[c] = u
                    row = delay
                    for s in range(ns):
                        push(heap, (t + row[s][c], _REPORT_ARRIVE, seq, c, s, u))
                        seq += 1
                nxt = t + period
                if nxt <= t_max:
                    push(heap, (nxt, _REPORT_EMIT, seq, 0, 0, 0.0))
                    seq += 1
            else:  # _REPORT_ARRIVE: a = controller, b = switch, x = utilization
                reports.append(ReportArrival(b, a, x, t))
        self._seq = seq
        self._reward_acc = reward
        self.tau_sum = tau_sum
        self.delivered = delivered

    def advance(self) -> SimStep:
        """Run to the next request generation, or drain to t_max if none left."""
        if self._pending is not None:
            raise RuntimeError("previous request was never dispatched")
        if self._finished:
            raise RuntimeError("episode already ended")
        if self._arr_i < self._arr_t.size:
            limit = float(self._arr_t[self._arr_i])
            final = False
        else:
            limit = self.setting.t_max
            final = True
        # events strictly before the next generation belong to this interval;
        # the final drain also takes events landing exactly on t_max
        self._run_events(limit, inclusive=final)
        self.now = limit
        request = None
        if not final:
            request = Request(self._arr_i, int(self._arr_s[self._arr_i]), limit)
            self._arr_i += 1
            self.generated += 1
            self._pending = request
        else:
            self._finished = True
        step = SimStep(request, self._reward_acc, self._responses, self._reports, limit)
        self.total_reward += self._reward_acc
        self._reward_acc = 0.0
        self._responses = []
        self._reports = []
        return step

    def dispatch(self, request: Request, controller: int) -> None:
        """Send the pending request toward `controller`."""
        if request is not self._pending:
            raise RuntimeError("dispatch() must receive the request advance() just returned")
        c = int(controller)
        if not 0 <= c < self.setting.num_controllers:
            raise ValueError(f"controller index {c} out of range")
        request.dispatched_to = c
        self.dispatch_counts[request.switch, c] += 1
        self._push(request.generated_at + self._delay[request.switch][c], _REQ_ARRIVE,
                   c, request.switch, request.generated_at)
        self._pending = None

    @property
    def finished(self) -> bool:
        return self._finished

    @property
    def mean_response_time(self) -> float:
        return self.tau_sum / self.delivered if self.delivered else 0.0

    def busy_fractions(self) -> np.ndarray:
        """Fraction of elapsed time each controller spent serving requests."""
        if self.now <= 0.0:
            return np.zeros(self.setting.num_controllers)
        out = np.empty(self.setting.num_controllers)
        for c in range(self.setting.num_controllers):
            busy = min(self._busy_until[c], self.now) - self._idle_total[c]
            out[c] = busy / self.now
        return out


@dataclass
class EpisodeLog:
    """Outcome of one simulated episode under one policy."""

    setting_name: str
    seed: int
    t_max: float
    time_scale: float
    cumulative_reward: float
    responses: int
    generated: int
    mean_response_time: float
    throughput: float
    dispatch_counts: np.ndarray
    controller_busy_fraction: np.ndarray
    controller_arrival_rate: np.ndarray
    times: np.ndarray = field(default_factory=lambda: np.empty(0))
    switches: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    actions: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    rewards: np.ndarray = field(default_factory=lambda: np.empty(0))
    running_mean_tau: np.ndarray = field(default_factory=lambda: np.empty(0))


def run_episode(setting: NetworkSetting, policy, seed: int = 0,
                record_steps: bool = True) -> EpisodeLog:
    """Simulate one full episode with `policy` choosing every dispatch.

    The arrival stream is seeded by `seed`; the policy receives an independent
    generator derived from the same seed, so reruns match exactly.
    """
    sim = Simulation(setting, seed)
    policy.reset(setting, np.random.default_rng([seed, _POLICY_STREAM]))
    needs = getattr(policy, "needs_observables", False)
    times: list[float] = []
    switches: list[int] = []
    actions: list[int] = []
    rewards: list[float] = []
    running_tau: list[float] = []
    step = sim.advance()
    if needs:
        policy.observe(step)
    while step.request is not None:
        request = step.request
        action = policy.select(request)
        sim.dispatch(request, action)
        if record_steps:
            times.append(request.generated_at)
            switches.append(request.switch)
            actions.append(action)
        step = sim.advance()
        if needs:
            policy.observe(step)
        if record_steps:
            # the reward earned between this decision and the next one
            rewards.append(step.reward)
            running_tau.append(sim.mean_response_time)
    t_max = setting.t_max
    return EpisodeLog(
        setting_name=setting.name,
        seed=seed,
        t_max=t_max,
        time_scale=setting.time_scale,
        cumulative_reward=sim.total_reward,
        responses=sim.delivered,
        generated=sim.generated,
        mean_response_time=sim.mean_response_time,
        throughput=sim.delivered / t_max,
        dispatch_counts=sim.dispatch_counts.copy(),
        controller_busy_fraction=sim.busy_fractions(),
        controller_arrival_rate=np.asarray(sim.controller_arrivals) / t_max,
        times=np.asarray(times),
        switches=np.asarray(switches, dtype=np.int64),
        actions=np.asarray(actions, dtype=np.int64),
        rewards=np.asarray(rewards),
        running_mean_tau=np.asarray(running_tau),
    )


def write_episode_csv(log: EpisodeLog, path: str | Path) -> None:
    """One row per step plus a trailing summary row."""
    lines = ["kind,time_s,switch,action,reward,running_mean_tau_s"]
    for i in range(log.times.size):
        lines.append(
            f"step,{fmt_float(log.times[i])},{log.switches[i]},{log.actions[i]},"
            f"{fmt_float(log.rewards[i])},{fmt_float(log.running_mean_tau[i])}"
        )
    lines.append(
        f"summary,{fmt_float(log.t_max)},-1,-1,"
        f"{fmt_float(log.cumulative_reward)},{fmt_float(log.mean_response_time)}"
    )
    Path(path).write_text("\n".join(lines) + "\n")
