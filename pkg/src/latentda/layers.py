"""Differentiable building blocks with hand-written backward passes.

Each layer caches what its backward pass needs during ``forward`` and
accumulates parameter gradients into ``grads`` on ``backward``.  Arrays are
plain float64 numpy arrays of shape (batch, channels).
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, UsageError
from .tensor import check_finite


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Layer:
    """Base class: named parameters with matching gradient buffers."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def _add_param(self, name: str, value: np.ndarray) -> None:
        self.params[name] = np.asarray(value, dtype=np.float64)
        self.grads[name] = np.zeros_like(self.params[name])

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def state(self) -> dict[str, np.ndarray]:
        """Everything that must survive a checkpoint (parameters and buffers)."""
        return dict(self.params)

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, value in state.items():
            target = self._state_target(name)
            if target.shape != value.shape:
                raise DimensionError(f"{name}: expected {target.shape}, got {value.shape}")
            target[...] = value

    def _state_target(self, name: str) -> np.ndarray:
        return self.params[name]


class Linear(Layer):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None,
                 zero: bool = False):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        if zero or rng is None:
            w = np.zeros((n_in, n_out))
        else:
            w = glorot_uniform(rng, n_in, n_out)
        self._add_param("weight", w)
        self._add_param("bias", np.zeros(n_out))
        self._x = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise DimensionError(f"linear expects (b, {self.n_in}), got {x.shape}")
        self._x = x
        return x @ self.params["weight"] + self.params["bias"]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise UsageError("linear backward called before forward")
        self.grads["weight"] += self._x.T @ dy
        self.grads["bias"] += dy.sum(axis=0)
        return dy @ self.params["weight"].T


class ReLU:
    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return np.where(self._mask, dy, 0.0)


def softmax(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    check_finite(x, "softmax input")
    if x.ndim != 2 or x.shape[1] < 1:
        raise DimensionError(f"softmax expects (b, k>=1), got {x.shape}")
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(p: np.ndarray, dp: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. logits given softmax output ``p`` and upstream ``dp``."""
    return p * (dp - np.sum(p * dp, axis=1, keepdims=True))


class Affine(Layer):
    """Per-channel scale and shift, y = scale * x + shift."""

    def __init__(self, channels: int):
        super().__init__()
        self._add_param("scale", np.ones(channels))
        self._add_param("shift", np.zeros(channels))

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return x * self.params["scale"] + self.params["shift"]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        self.grads["scale"] += np.sum(dy * self._x, axis=0)
        self.grads["shift"] += dy.sum(axis=0)
        return dy * self.params["scale"]


class BatchNorm(Layer):
    """Standard batch normalization over the batch axis.

    Training statistics use the biased (population) variance.  Running
    statistics follow ``r <- (1 - momentum) r + momentum * batch_stat``.
    """

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1,
                 affine: bool = True):
        super().__init__()
        if eps <= 0:
            raise ValueError("eps must be positive")
        if not 0 < momentum <= 1:
            raise ValueError("momentum must lie in (0, 1]")
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.affine = Affine(channels) if affine else None
        if self.affine is not None:
            self.params = self.affine.params
            self.grads = self.affine.grads
        self._cache = None

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.channels:
            raise DimensionError(f"batchnorm expects (b, {self.channels}), got {x.shape}")
        if train:
            if x.shape[0] < 2:
                raise DimensionError("batch normalization needs at least 2 samples in training mode")
            mean = x.mean(axis=0)
            var = np.mean((x - mean) ** 2, axis=0)
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mean
            self.running_var = (1 - m) * self.running_var + m * var
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        self._cache = (xhat, inv_std) if train else None
        return self.affine.forward(xhat) if self.affine is not None else xhat

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise UsageError("batchnorm backward needs a preceding training-mode forward")
        if self.affine is not None:
            dy = self.affine.backward(dy)
        xhat, inv_std = self._cache
        dmean = dy.mean(axis=0)
        dproj = np.mean(dy * xhat, axis=0)
        return inv_std * (dy - dmean - xhat * dproj)

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
