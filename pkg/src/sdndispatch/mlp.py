"""Small fully connected networks with hand-written forward/backward passes.

Both trainable functions in this package (controller priorities and the state
value) are two-hidden-layer tanh networks with a scalar head, so the update
rules need exact parameter gradients rather than an autodiff framework.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1
_OUTPUTS = ("softplus", "identity")


class CheckpointError(ValueError):
    """Raised for unreadable, truncated, or mismatched checkpoint files."""


def softplus(z: np.ndarray) -> np.ndarray:
    # max(z,0) + log1p(exp(-|z|)) avoids overflow for large |z|
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True)
class MlpSpec:
    """Architecture description: input width, two hidden widths, output head."""

    input_dim: int
    hidden: tuple[int, int] = (64, 64)
    output: str = "softplus"

    def __post_init__(self) -> None:
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if len(self.hidden) != 2 or any(h < 1 for h in self.hidden):
            raise ValueError("hidden must be two positive layer widths")
        if self.output not in _OUTPUTS:
            raise ValueError(f"output must be one of {_OUTPUTS}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def param_count(self) -> int:
        d, (h1, h2) = self.input_dim, self.hidden
        return (d + 1) * h1 + (h1 + 1) * h2 + (h2 + 1)


class MlpParams:
    """Flat float64 parameter vector with per-layer views into it.

    The views alias the flat vector, so optimizers can update `flat` in place
    and the next forward pass sees the change.
    """

    __slots__ = ("spec", "flat", "w1", "b1", "w2", "b2", "w3")

    def __init__(self, spec: MlpSpec, flat: np.ndarray):
        flat = np.ascontiguousarray(flat, dtype=np.float64)
        if flat.shape != (spec.param_count,):
            raise ValueError(f"expected {spec.param_count} parameters, got {flat.shape}")
        self.spec = spec
        self.flat = flat
        d, (h1, h2) = spec.input_dim, spec.hidden
        o = 0
        self.w1 = flat[o:o + d * h1].reshape(d, h1); o += d * h1
        self.b1 = flat[o:o + h1]; o += h1
        self.w2 = flat[o:o + h1 * h2].reshape(h1, h2); o += h1 * h2
        self.b2 = flat[o:o + h2]; o += h2
        self.w3 = flat[o:o + h2]; o += h2
        # flat[-1] is the output bias

    @property
    def b3(self) -> float:
        return float(self.flat[-1])

    def copy(self) -> "MlpParams":
        return MlpParams(self.spec, self.flat.copy())


def init_params(spec: MlpSpec, seed: int | np.random.Generator = 0) -> MlpParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    d, (h1, h2) = spec.input_dim, spec.hidden
    flat = np.zeros(spec.param_count)
    params = MlpParams(spec, flat)
    params.w1[:] = rng.uniform(-1.0, 1.0, size=(d, h1)) / np.sqrt(d)
    params.w2[:] = rng.uniform(-1.0, 1.0, size=(h1, h2)) / np.sqrt(h1)
    params.w3[:] = rng.uniform(-1.0, 1.0, size=h2) / np.sqrt(h2)
    return params


def forward_batch(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, tuple]:
    """Evaluate a batch of rows; returns (outputs (B,), cache for backward)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.spec.input_dim:
        raise ValueError(f"expected (batch, {params.spec.input_dim}) input, got {x.shape}")
    a1 = np.tanh(x @ params.w1 + params.b1)
    a2 = np.tanh(a1 @ params.w2 + params.b2)
    z3 = a2 @ params.w3 + params.flat[-1]
    y = softplus(z3) if params.spec.output == "softplus" else z3
    return y, (x, a1, a2, z3)


def backward_batch(params: MlpParams, cache: tuple, upstream: np.ndarray) -> np.ndarray:
    """Accumulate d(sum_b upstream_b * y_b)/d(params) into one flat vector."""
    x, a1, a2, z3 = cache
    upstream = np.asarray(upstream, dtype=np.float64)
    dz3 = upstream * sigmoid(z3) if params.spec.output == "softplus" else upstream
    dz2 = np.multiply.outer(dz3, params.w3) * (1.0 - a2 * a2)
    dz1 = (dz2 @ params.w2.T) * (1.0 - a1 * a1)
    return np.concatenate([
        (x.T @ dz1).ravel(), dz1.sum(axis=0),
        (a1.T @ dz2).ravel(), dz2.sum(axis=0),
        a2.T @ dz3, np.atleast_1d(dz3.sum()),
    ])


def forward(params: MlpParams, x: np.ndarray) -> float:
    """Single-row convenience wrapper around forward_batch."""
    y, _ = forward_batch(params, np.asarray(x, dtype=np.float64)[None, :])
    return float(y[0])


def backward(params: MlpParams, x: np.ndarray, upstream: float = 1.0) -> np.ndarray:
    """Gradient of upstream * f(x) with respect to the flat parameters."""
    x = np.asarray(x, dtype=np.float64)[None, :]
    _, cache = forward_batch(params, x)
    return backward_batch(params, cache, np.asarray([upstream]))


def save_params(params: MlpParams, path: str | Path) -> None:
    """Write a lossless text checkpoint (float hex digits keep every bit)."""
    payload = {
        "version": CHECKPOINT_VERSION,
        "input_dim": params.spec.input_dim,
        "hidden": list(params.spec.hidden),
        "output": params.spec.output,
        "params": [float(v).hex() for v in params.flat],
    }
    Path(path).write_text(json.dumps(payload, indent=1))


def load_params(path: str | Path) -> MlpParams:
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path} is not a valid checkpoint (truncated or corrupt JSON: {exc.msg})") from None
    if not isinstance(payload, dict) or payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {payload.get('version')!r}")
    try:
        spec = MlpSpec(
            input_dim=int(payload["input_dim"]),
            hidden=tuple(payload["hidden"]),
            output=payload["output"],
        )
        flat = np.array([float.fromhex(v) for v in payload["params"]], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint field ({exc})") from None
    if flat.size != spec.param_count:
        raise CheckpointError(
            f"{path}: parameter count {flat.size} does not match architecture ({spec.param_count})"
        )
    return MlpParams(spec, flat)
