"""Network settings: controller capacities, switch arrival rates, and delays."""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np

PRESET_NAMES = ("env1", "env2", "env3", "env4", "env5", "env6", "env7")


class ConfigError(ValueError):
    """Raised when a setting file or setting values are invalid."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class NetworkSetting:
    """One control-plane scenario.

    capacities[c] is controller c's service rate in requests/second (service
    time is the deterministic 1/capacities[c]).  arrival_rates[s] is switch
    s's mean request rate.  delay[s][c] is the one-way switch-to-controller
    delay in seconds; the return path uses the same value.
    """

    capacities: np.ndarray
    arrival_rates: np.ndarray
    delay: np.ndarray
    t_max: float = 240.0
    report_period: float = 0.05
    time_scale: float = 1.0
    name: str = "custom"
    default_seed: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "capacities", _readonly(self.capacities))
        object.__setattr__(self, "arrival_rates", _readonly(self.arrival_rates))
        object.__setattr__(self, "delay", _readonly(self.delay))
        caps, rates, delay = self.capacities, self.arrival_rates, self.delay
        if caps.ndim != 1 or caps.size == 0:
            raise ConfigError("capacities must be a non-empty 1-d sequence")
        if rates.ndim != 1 or rates.size == 0:
            raise ConfigError("arrival_rates must be a non-empty 1-d sequence")
        if not np.all(np.isfinite(caps)) or np.any(caps <= 0):
            raise ConfigError("capacities must be finite and positive")
        if not np.all(np.isfinite(rates)) or np.any(rates < 0):
            raise ConfigError("arrival_rates must be finite and non-negative")
        if delay.ndim != 2 or delay.shape != (rates.size, caps.size):
            raise ConfigError(
                f"delay_matrix must have shape ({rates.size}, {caps.size}) "
                f"(switches x controllers), got {delay.shape}"
            )
        if not np.all(np.isfinite(delay)) or np.any(delay < 0):
            raise ConfigError("delay_matrix entries must be finite and >= 0")
        for key in ("t_max", "report_period", "time_scale"):
            v = getattr(self, key)
            if not np.isfinite(v) or v <= 0:
                raise ConfigError(f"{key} must be a positive number")

    @property
    def num_controllers(self) -> int:
        return self.capacities.size

    @property
    def num_switches(self) -> int:
        return self.arrival_rates.size

    @property
    def service_times(self) -> np.ndarray:
        return 1.0 / self.capacities

    def scaled(self, factor: float) -> "NetworkSetting":
        """Shrink (or stretch) the episode uniformly.

        Rates and delays are untouched; only the horizon and reporting window
        scale, so per-second dynamics are identical to the unscaled setting.
        """
        if not np.isfinite(factor) or factor <= 0:
            raise ConfigError("time-scale factor must be positive")
        if factor == 1.0:
            return self
        return replace(
            self,
            t_max=self.t_max * factor,
            report_period=self.report_period * factor,
            time_scale=self.time_scale * factor,
        )


def _require(raw: dict, key: str, origin: str):
    if key not in raw:
        raise ConfigError(f"{origin}: missing required key '{key}'")
    return raw[key]


def setting_from_dict(raw: dict, origin: str = "setting", name: str | None = None) -> NetworkSetting:
    """Build a validated NetworkSetting from plain parsed config data."""
    if not isinstance(raw, dict):
        raise ConfigError(f"{origin}: top level must be an object")
    seed = raw.get("seed")
    if seed is not None and not isinstance(seed, int):
        raise ConfigError(f"{origin}: 'seed' must be an integer")
    try:
        return NetworkSetting(
            capacities=np.asarray(_require(raw, "capacities", origin), dtype=np.float64),
            arrival_rates=np.asarray(_require(raw, "arrival_rates", origin), dtype=np.float64),
            delay=np.asarray(_require(raw, "delay_matrix", origin), dtype=np.float64),
            t_max=float(raw.get("t_max", 240.0)),
            report_period=float(raw.get("report_period", 0.05)),
            name=name or raw.get("name", "custom"),
            default_seed=seed,
        )
    except ConfigError as exc:
        raise ConfigError(f"{origin}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{origin}: {exc}") from None


def load_setting(path: str | Path) -> NetworkSetting:
    """Load a setting from a JSON config file.

    Required keys: capacities, arrival_rates, delay_matrix.  Optional:
    t_max, report_period, seed, name (extra keys such as notes are ignored).
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read setting file {path}: {exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return setting_from_dict(raw, origin=str(path))


def load_preset(name: str) -> NetworkSetting:
    """Load one of the packaged example settings (env1 .. env7)."""
    if name not in PRESET_NAMES:
        raise ConfigError(f"unknown preset '{name}' (choose from {', '.join(PRESET_NAMES)})")
    ref = resources.files("sdndispatch").joinpath(f"presets/{name}.json")
    raw = json.loads(ref.read_text())
    return setting_from_dict(raw, origin=f"preset {name}", name=name)


def resolve_setting(spec: str) -> NetworkSetting:
    """Accept either a preset name or a path to a setting file."""
    if spec in PRESET_NAMES:
        return load_preset(spec)
    p = Path(spec)
    if p.exists():
        return load_setting(p)
    raise ConfigError(f"'{spec}' is neither a preset name nor an existing file")
