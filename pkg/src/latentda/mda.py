"""Multi-domain alignment (mDA) normalization.

Each sample carries a row of soft domain assignments ``w[i, d]``.  Per
domain, the batch statistics are weighted by the normalized assignments
``alpha[i, d] = w[i, d] / sum_j w[j, d]``, and the output mixes the
per-domain normalized values with the sample's own assignment row::

    mu_d  = sum_i alpha[i, d] x_i
    var_d = sum_i alpha[i, d] (x_i - mu_d)^2
    y_i   = sum_d w[i, d] (x_i - mu_d) / sqrt(var_d + eps)

The backward pass returns gradients for both the inputs and the
assignments, so the domain predictor is trained through every layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, DomainError, UsageError
from .layers import Affine, Layer

#: domains whose total batch weight falls below this are treated as empty
MIN_DOMAIN_MASS = 1e-12


@dataclass
class AssignmentMatrix:
    """Per-sample domain probabilities plus a flag for rows clamped to a known domain."""

    w: np.ndarray
    clamped: np.ndarray = field(default=None)

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.w.ndim != 2:
            raise DimensionError(f"assignments must be (b, D), got {self.w.shape}")
        if self.clamped is None:
            self.clamped = np.zeros(self.w.shape[0], dtype=bool)
        else:
            self.clamped = np.asarray(self.clamped, dtype=bool)

    @property
    def num_domains(self) -> int:
        return self.w.shape[1]

    def __len__(self):
        return self.w.shape[0]

    def validate(self, atol: float = 1e-9) -> None:
        if np.any(self.w < -atol) or np.any(self.w > 1 + atol):
            raise DomainError("assignment entries must lie in [0, 1]")
        sums = self.w.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > atol):
            raise DomainError(f"assignment rows must sum to 1 (worst {sums.min()}..{sums.max()})")


def clamp_known(assign: AssignmentMatrix, known: Sequence[Optional[int]]) -> AssignmentMatrix:
    """Replace rows with a known domain id by an exact one-hot row.

    ``known`` holds one entry per row: a domain id, or ``None``/negative for
    rows whose domain is unknown.
    """
    if len(known) != len(assign):
        raise DimensionError(f"{len(known)} known labels for {len(assign)} rows")
    w = assign.w.copy()
    clamped = assign.clamped.copy()
    for i, d in enumerate(known):
        if d is None or d < 0:
            continue
        if d >= assign.num_domains:
            raise DomainError(f"known domain {d} out of range for {assign.num_domains} domains")
        w[i] = 0.0
        w[i, d] = 1.0
        clamped[i] = True
    return AssignmentMatrix(w, clamped)


class MDALayer(Layer):
    """Soft multi-domain batch normalization with a shared affine transform.

    ``momentum`` drives the per-domain running averages used in inference.
    Each domain's update is damped by its share of the batch mass relative
    to an even split, so a domain that receives little weight in a batch
    moves its running statistics proportionally less.
    """

    def __init__(self, channels: int, num_domains: int, eps: float = 1e-5,
                 momentum: float = 0.1, affine: bool = True):
        super().__init__()
        if num_domains < 1:
            raise ValueError("num_domains must be >= 1")
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.channels = channels
        self.num_domains = num_domains
        self.eps = eps
        self.momentum = momentum
        self.running_mean = np.zeros((num_domains, channels))
        self.running_var = np.ones((num_domains, channels))
        self.affine = Affine(channels) if affine else None
        if self.affine is not None:
            self.params = self.affine.params
            self.grads = self.affine.grads
        self._cache = None
        self.last_assignments = None

    def forward(self, x: np.ndarray, assign: AssignmentMatrix | np.ndarray,
                train: bool = True) -> np.ndarray:
        w = assign.w if isinstance(assign, AssignmentMatrix) else np.asarray(assign, dtype=np.float64)
        self.last_assignments = assign
        b, c = x.shape
        if c != self.channels:
            raise DimensionError(f"mDA layer expects {self.channels} channels, got {c}")
        if w.shape != (b, self.num_domains):
            raise DimensionError(f"assignments must be ({b}, {self.num_domains}), got {w.shape}")
        if np.any(w.sum(axis=1) <= 0):
            raise DomainError("every sample needs a nonzero assignment row")

        if train:
            if b < 2:
                raise DimensionError("mDA layer needs at least 2 samples in training mode")
            mass = w.sum(axis=0)
            active = mass >= MIN_DOMAIN_MASS
            alpha = np.where(active, w / np.where(active, mass, 1.0), 0.0)
            mean = alpha.T @ x
            var = np.einsum("bd,bdc->dc", alpha, (x[:, None, :] - mean[None]) ** 2)
            mean = np.where(active[:, None], mean, self.running_mean)
            var = np.where(active[:, None], var, self.running_var)
            self._update_running(mean, var, mass, active, b)
        else:
            active = np.zeros(self.num_domains, dtype=bool)
            alpha = None
            mean, var = self.running_mean, self.running_var

        std = np.sqrt(var + self.eps)
        xhat = (x[:, None, :] - mean[None]) / std[None]
        y = np.einsum("bd,bdc->bc", w, xhat)
        self._cache = (w, alpha, xhat, var, std, active) if train else None
        return self.affine.forward(y) if self.affine is not None else y

    def _update_running(self, mean, var, mass, active, b):
        share = np.minimum(1.0, mass * self.num_domains / b)
        m = np.where(active, self.momentum * share, 0.0)[:, None]
        self.running_mean = (1 - m) * self.running_mean + m * mean
        self.running_var = (1 - m) * self.running_var + m * var

    def _moments(self, alpha, xhat, dy):
        """Per-domain weighted averages of dy and of xhat * dy."""
        a = alpha.T @ dy
        b = np.einsum("bd,bdc,bc->dc", alpha, xhat, dy)
        return a, b

    def backward(self, dy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return (dx, dw); affine gradients accumulate into ``grads``."""
        if self._cache is None:
            raise UsageError("mDA backward needs a preceding training-mode forward")
        if self.affine is not None:
            dy = self.affine.backward(dy)
        w, alpha, xhat, var, std, active = self._cache
        a, b = self._moments(alpha, xhat, dy)
        # empty domains were normalized with constant running statistics
        a = np.where(active[:, None], a, 0.0)
        b = np.where(active[:, None], b, 0.0)

        inner = dy[:, None, :] - a[None] - xhat * b[None]
        dx = np.einsum("bd,bdc->bc", w, inner / std[None])

        ratio = var / (var + self.eps)
        dw = np.einsum("bdc->bd", xhat * (dy[:, None, :] - a[None])
                       - 0.5 * (xhat ** 2 - ratio[None]) * b[None])
        return dx, dw

    def state(self) -> dict[str, np.ndarray]:
        out = dict(self.params)
        out["running_mean"] = self.running_mean
        out["running_var"] = self.running_var
        return out

    def _state_target(self, name):
        if name == "running_mean":
            return self.running_mean
        if name == "running_var":
            return self.running_var
        return self.params[name]
