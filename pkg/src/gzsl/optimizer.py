"""SGD with Nesterov momentum and a cosine-annealed learning rate.

The momentum update uses the single-parameter-copy reformulation: the
stored parameters are the point where gradients are evaluated, and each
step applies

    v   <- mu * v - eta * g
    theta <- theta + mu * v - eta * g

which coincides with plain SGD at mu = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ValidationError
from .model import MapperGrads, MapperParams


@dataclass(frozen=True)
class ScheduleConfig:
    lr0: float = 0.01
    eta_min: float = 0.0
    momentum: float = 0.9

    def __post_init__(self):
        if not self.lr0 > self.eta_min >= 0:
            raise ValidationError(
                f"need lr0 > eta_min >= 0, got lr0={self.lr0} eta_min={self.eta_min}"
            )
        if not 0.0 <= self.momentum < 1.0:
            raise ValidationError(f"momentum must be in [0, 1), got {self.momentum}")


@dataclass
class OptState:
    velocity: MapperGrads
    step_count: int
    total_steps: int

    @classmethod
    def init(cls, params: MapperParams, total_steps: int) -> "OptState":
        if total_steps < 1:
            raise ValidationError(f"total_steps must be >= 1, got {total_steps}")
        zeros = MapperGrads(**{name: np.zeros_like(arr) for name, arr in params.tensors()})
        return cls(velocity=zeros, step_count=0, total_steps=total_steps)


def cosine_lr(cfg: ScheduleConfig, t: int, total_steps: int) -> float:
    """Annealed rate: eta_min + (lr0 - eta_min) (1 + cos(pi t / T)) / 2."""
    if total_steps < 1:
        raise ValidationError(f"total_steps must be >= 1, got {total_steps}")
    if not 0 <= t <= total_steps:
        raise ValidationError(f"step {t} outside [0, {total_steps}]")
    return cfg.eta_min + 0.5 * (cfg.lr0 - cfg.eta_min) * (1.0 + math.cos(math.pi * t / total_steps))


def step(params: MapperParams, grads: MapperGrads, state: OptState,
         cfg: ScheduleConfig) -> None:
    """Apply one Nesterov update in place and advance the step counter."""
    eta = cosine_lr(cfg, state.step_count, state.total_steps)
    mu = cfg.momentum
    vel = dict(state.velocity.tensors())
    for name, grad in grads.tensors():
        if not np.all(np.isfinite(grad)):
            raise NumericalError(
                f"non-finite gradient in tensor {name!r} at step {state.step_count}"
            )
        v = vel[name]
        v *= mu
        v -= eta * grad
        target = getattr(params, name)
        target += mu * v - eta * grad
    state.step_count += 1
