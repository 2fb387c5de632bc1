"""Dense float64 tensor with explicit shape checks.

The heavy lifting is delegated to numpy; this class only enforces the
rules the rest of the engine relies on: float64 storage, row-major order,
no broadcasting except against scalars, and no silently propagated NaN/Inf.
"""

from __future__ import annotations

from numbers import Real
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import DimensionError, DomainError, NonFiniteError

Operand = Union["Tensor", float, int]


def check_finite(arr: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        bad = int(np.size(arr) - np.count_nonzero(np.isfinite(arr)))
        raise NonFiniteError(f"{what}: {bad} non-finite value(s)")
    return arr


class Tensor:
    __slots__ = ("_data",)

    def __init__(self, data, shape: Sequence[int] | None = None):
        arr = np.array(data, dtype=np.float64, order="C")
        if shape is not None:
            shape = tuple(int(s) for s in shape)
            if int(np.prod(shape)) != arr.size:
                raise DimensionError(f"cannot view {arr.size} values as shape {shape}")
            arr = arr.reshape(shape)
        if any(s <= 0 for s in arr.shape):
            raise DimensionError(f"extents must be positive, got {arr.shape}")
        check_finite(arr)
        arr.setflags(write=False)
        self._data = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray, what: str) -> "Tensor":
        t = cls.__new__(cls)
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        check_finite(arr, what)
        arr.setflags(write=False)
        t._data = arr
        return t

    @classmethod
    def zeros(cls, shape: Iterable[int]) -> "Tensor":
        return cls(np.zeros(tuple(shape)))

    @property
    def shape(self) -> tuple:
        return self._data.shape

    @property
    def rank(self) -> int:
        return self._data.ndim

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the values (read-only)."""
        return self._data.reshape(-1)

    def numpy(self) -> np.ndarray:
        return self._data.copy()

    def tolist(self):
        return self._data.tolist()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, data={self._data.tolist()})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Tensor) and self.shape == other.shape and bool(
            np.array_equal(self._data, other._data)
        )

    __hash__ = None

    def reshape(self, shape: Sequence[int]) -> "Tensor":
        shape = tuple(int(s) for s in shape)
        if int(np.prod(shape)) != self._data.size:
            raise DimensionError(f"cannot reshape {self.shape} to {shape}")
        return Tensor._wrap(self._data.reshape(shape), "reshape")

    # elementwise -----------------------------------------------------------

    def _binary(self, other: Operand, fn, name: str) -> "Tensor":
        if isinstance(other, Tensor):
            if other.shape != self.shape:
                raise DimensionError(f"{name}: shape mismatch {self.shape} vs {other.shape}")
            rhs = other._data
        elif isinstance(other, Real):
            rhs = float(other)
        else:
            return NotImplemented
        with np.errstate(all="ignore"):
            out = fn(self._data, rhs)
        return Tensor._wrap(out, name)

    def __add__(self, other):
        return self._binary(other, np.add, "add")

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, np.subtract, "sub")

    def __rsub__(self, other):
        return self._binary(other, lambda a, b: b - a, "sub")

    def __mul__(self, other):
        return self._binary(other, np.multiply, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._binary(other, np.divide, "div")

    def __neg__(self):
        return self.scale(-1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def scale(self, factor: float) -> "Tensor":
        return Tensor._wrap(self._data * float(factor), "scale")

    def exp(self) -> "Tensor":
        with np.errstate(over="ignore"):
            return Tensor._wrap(np.exp(self._data), "exp")

    def log(self) -> "Tensor":
        if np.any(self._data < 0):
            raise DomainError("log of negative value")
        with np.errstate(divide="ignore"):
            return Tensor._wrap(np.log(self._data), "log")

    def sqrt(self) -> "Tensor":
        if np.any(self._data < 0):
            raise DomainError("sqrt of negative value")
        return Tensor._wrap(np.sqrt(self._data), "sqrt")

    def map(self, fn) -> "Tensor":
        """Apply a numpy ufunc-like callable elementwise."""
        return Tensor._wrap(fn(self._data), getattr(fn, "__name__", "map"))

    def reduce(self, axis: int, kind: str = "sum") -> "Tensor":
        return reduce(self, axis, kind)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.rank != 2 or b.rank != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shape mismatch {a.shape} x {b.shape}")
    return Tensor._wrap(a._data @ b._data, "matmul")


_REDUCERS = {"sum": np.sum, "mean": np.mean, "max": np.max}


def reduce(t: Tensor, axis: int, kind: str = "sum") -> Tensor:
    if not 0 <= axis < t.rank:
        raise DimensionError(f"axis {axis} out of range for rank {t.rank}")
    try:
        fn = _REDUCERS[kind]
    except KeyError:
        raise ValueError(f"unknown reduction {kind!r}") from None
    out = fn(t._data, axis=axis)
    if out.ndim == 0:
        out = out.reshape(1)
    return Tensor._wrap(out, kind)
