"""Dispatching heuristics used as comparison baselines."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .settings import NetworkSetting


def random_dispatch(rng: np.random.Generator, num_controllers: int) -> int:
    """Uniform pick among controllers."""
    if num_controllers < 1:
        raise ValueError("need at least one controller")
    return int(rng.integers(num_controllers))


@dataclass
class WrrState:
    """Credit state for smooth weighted round-robin over one switch."""

    weights: np.ndarray
    credits: np.ndarray

    @classmethod
    def from_capacities(cls, capacities: np.ndarray) -> "WrrState":
        w = np.asarray(capacities, dtype=np.float64)
        if w.ndim != 1 or w.size == 0 or np.any(w <= 0):
            raise ValueError("capacities must be positive")
        return cls(weights=w.copy(), credits=np.zeros_like(w))


def wrr_select(state: WrrState) -> int:
    """Pick the controller with the highest credit after topping all up.

    Every call adds each controller's weight to its credit, the largest credit
    wins (ties go to the lowest index), and the winner pays the total weight
    back.  Over any window the selection counts track the weight ratios, and
    the credits return to zero after each full cycle of integer weights.
    """
    state.credits += state.weights
    choice = int(np.argmax(state.credits))
    state.credits[choice] -= state.weights.sum()
    return choice


class RandomPolicy:
    """Dispatch every request to a uniformly random controller."""

    needs_observables = False

    def __init__(self) -> None:
        self._num = 0
        self._rng: np.random.Generator | None = None

    def reset(self, setting: NetworkSetting, rng: np.random.Generator) -> None:
        self._num = setting.num_controllers
        self._rng = rng

    def observe(self, step) -> None:
        pass

    def select(self, request) -> int:
        return random_dispatch(self._rng, self._num)


class WeightedRoundRobinPolicy:
    """Capacity-proportional round robin with independent per-switch credits."""

    needs_observables = False

    def __init__(self) -> None:
        self._states: list[WrrState] = []

    def reset(self, setting: NetworkSetting, rng: np.random.Generator) -> None:
        self._states = [WrrState.from_capacities(setting.capacities)
                        for _ in range(setting.num_switches)]

    def observe(self, step) -> None:
        pass

    def select(self, request) -> int:
        return wrr_select(self._states[request.switch])
