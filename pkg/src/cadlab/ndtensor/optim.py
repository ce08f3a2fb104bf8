"""Adam / LAMB updates, parameter EMA and the warmup + cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Mapping

import numpy as np

from .tensor import Tensor

__all__ = [
    "LrSchedule",
    "NonFiniteGradientError",
    "OptimizerState",
    "ema_update",
    "init_optimizer",
    "lr_at",
    "optimizer_step",
    "trust_ratio",
]

TRUST_MIN, TRUST_MAX = 0.01, 10.0


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient for parameter {name!r}; step rejected")
        self.param_name = name


@dataclass
class OptimizerState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def init_optimizer(params: Mapping[str, Tensor], **hyper) -> OptimizerState:
    state = OptimizerState(**hyper)
    for name, p in params.items():
        state.m[name] = np.zeros_like(p.data)
        state.v[name] = np.zeros_like(p.data)
    return state


def trust_ratio(param_norm: float, update_norm: float) -> float:
    """LAMB layer-wise ratio ||p|| / ||update||, clamped to [0.01, 10]; 1 if either norm is 0."""
    if param_norm == 0.0 or update_norm == 0.0:
        return 1.0
    return min(max(param_norm / update_norm, TRUST_MIN), TRUST_MAX)


def optimizer_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
    lr: float,
    kind: Literal["adam", "lamb"] = "lamb",
) -> OptimizerState:
    """Apply one in-place update to ``params``.

    Weight decay is decoupled (added to the normalized update, not the
    gradient). All gradients are checked before any parameter is touched.
    """
    if kind not in ("adam", "lamb"):
        raise ValueError(f"unknown optimizer kind {kind!r}")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {params[name].shape} for {name!r}")

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        # two scratch buffers per tensor; this loop dominates a training step otherwise
        buf = np.multiply(g, 1.0 - b1)
        m *= b1
        m += buf
        np.multiply(g, g, out=buf)
        buf *= 1.0 - b2
        v *= b2
        v += buf
        # update = (m / c1) / (sqrt(v / c2) + eps) + wd * p
        np.divide(v, c2, out=buf)
        np.sqrt(buf, out=buf)
        buf += state.eps
        np.divide(m, buf, out=buf)
        buf /= c1
        if state.weight_decay:
            buf += state.weight_decay * p.data
        scale = lr
        if kind == "lamb":
            flat_p, flat_u = p.data.reshape(-1), buf.reshape(-1)
            scale *= trust_ratio(math.sqrt(float(flat_p @ flat_p)), math.sqrt(float(flat_u @ flat_u)))
        buf *= scale
        p.data -= buf
    return state


def ema_update(
    ema: Mapping[str, np.ndarray], params: Mapping[str, Tensor | np.ndarray], decay: float
) -> Mapping[str, np.ndarray]:
    """In place: ema <- decay * ema + (1 - decay) * params."""
    if not 0.0 <= decay <= 1.0:
        raise ValueError(f"EMA decay must lie in [0, 1], got {decay}")
    for name, e in ema.items():
        p = params[name]
        p = p.data if isinstance(p, Tensor) else p
        if p.shape != e.shape:
            raise ValueError(f"EMA shape mismatch for {name!r}: {e.shape} vs {p.shape}")
        if decay == 1.0:
            continue
        e *= decay
        e += (1.0 - decay) * p
    return ema


@dataclass(frozen=True)
class LrSchedule:
    peak: float = 3e-3
    warmup: int = 500
    total: int = 10_000

    def __post_init__(self):
        if self.peak <= 0:
            raise ValueError("peak learning rate must be positive")
        if self.warmup < 0 or self.total <= self.warmup:
            raise ValueError("need 0 <= warmup < total")


def lr_at(step: int, schedule: LrSchedule) -> float:
    if step < 0:
        raise ValueError("step must be non-negative")
    step = min(step, schedule.total)
    if step < schedule.warmup:
        return schedule.peak * step / schedule.warmup
    frac = (step - schedule.warmup) / (schedule.total - schedule.warmup)
    return schedule.peak * 0.5 * (1.0 + math.cos(math.pi * frac))
