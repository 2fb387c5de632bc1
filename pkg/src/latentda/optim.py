"""SGD with momentum and weight decay, and learning-rate schedules."""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Iterable

import numpy as np

from .errors import DimensionError, NonFiniteError


@dataclass
class Schedule:
    """Polynomial annealing ``l0 / (1 + gamma p)^beta`` or a one-off step decay.

    ``p = step / total_steps``.  With ``kind="step"`` the rate is
    ``l0 * step_factor`` once ``p >= step_at``.
    """

    l0: float = 0.01
    gamma: float = 10.0
    beta: float = 0.75
    total_steps: int = 1000
    kind: str = "poly"
    step_at: float = 0.75
    step_factor: float = 0.1

    def __post_init__(self):
        if self.l0 <= 0:
            raise ValueError("l0 must be positive")
        if self.gamma < 0 or self.beta < 0:
            raise ValueError("gamma and beta must be non-negative")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if self.kind not in ("poly", "step"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")

    def to_dict(self):
        return asdict(self)


def lr_at(schedule: Schedule, step: int) -> float:
    if not 0 <= step <= schedule.total_steps:
        raise ValueError(f"step {step} outside [0, {schedule.total_steps}]")
    p = step / schedule.total_steps
    if schedule.kind == "step":
        return schedule.l0 * (schedule.step_factor if p >= schedule.step_at else 1.0)
    return schedule.l0 / (1.0 + schedule.gamma * p) ** schedule.beta


class SGD:
    """Momentum SGD: ``v <- mu v - lr (g + wd theta); theta <- theta + v``.

    Weight decay only touches parameters whose name ends in ``.weight``
    (linear weights); biases and normalization affine terms are exempt.
    """

    def __init__(self, momentum: float = 0.9, weight_decay: float = 5e-4):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: dict[str, np.ndarray] = {}

    def decays(self, name: str) -> bool:
        return name.endswith(".weight")

    def step(self, params: Iterable[tuple[str, np.ndarray, np.ndarray]], lr: float) -> None:
        params = list(params)
        for name, value, grad in params:
            if value.shape != grad.shape:
                raise DimensionError(f"{name}: parameter {value.shape} vs grad {grad.shape}")
            if not np.all(np.isfinite(grad)):
                raise NonFiniteError(f"non-finite gradient in {name}; step aborted")
        for name, value, grad in params:
            v = self.velocity.get(name)
            if v is None:
                v = self.velocity[name] = np.zeros_like(value)
            g = grad + self.weight_decay * value if self.decays(name) else grad
            v *= self.momentum
            v -= lr * g
            value += v
