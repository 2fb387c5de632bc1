"""Domain prediction branch: a small shared MLP with separate source/target heads."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .errors import DimensionError, UsageError
from .layers import BatchNorm, Linear, ReLU, softmax, softmax_backward
from .mda import AssignmentMatrix


def attach_point(depth: int, override: Optional[int] = None) -> int:
    """Index of the hidden block whose output feeds the domain branch.

    ``0`` means the raw input features.  By default the branch is tapped
    after the first hidden block; a network with a single hidden block is
    tapped at its input so that block can still be domain-normalized.
    """
    if depth < 1:
        raise ValueError("network needs at least one hidden block")
    if override is not None:
        if not 0 <= override < depth:
            raise ValueError(f"tap index must lie in [0, {depth - 1}], got {override}")
        return override
    return 1 if depth >= 2 else 0


class DomainBranch:
    def __init__(self, n_in: int, width: int, k_source: int, k_target: int,
                 rng: np.random.Generator | None = None, logit_bn: bool = False,
                 zero_heads: bool = False, head_scale: float = 1.0):
        if k_source < 1 or k_target < 1:
            raise ValueError("each pool needs at least one latent domain")
        self.n_in = n_in
        self.k_source, self.k_target = k_source, k_target
        self.hidden = Linear(n_in, width, rng)
        self.relu = ReLU()
        self.heads = {
            "source": Linear(width, k_source, rng, zero=zero_heads),
            "target": Linear(width, k_target, rng, zero=zero_heads),
        }
        for head in self.heads.values():
            head.params["weight"] *= head_scale
        self.logit_bn = (
            {"source": BatchNorm(k_source), "target": BatchNorm(k_target)} if logit_bn else None
        )
        self._cache = None

    def layers(self):
        yield "hidden", self.hidden
        for pool in ("source", "target"):
            yield f"head_{pool}", self.heads[pool]
            if self.logit_bn is not None:
                yield f"logit_bn_{pool}", self.logit_bn[pool]

    def forward(self, features: np.ndarray, n_source: int, train: bool = True):
        """Return (source_probs, target_probs) for rows [:n_source] and [n_source:].

        A source row is only ever scored by the source head and vice versa.
        """
        if features.ndim != 2 or features.shape[1] != self.n_in:
            raise DimensionError(f"branch expects (b, {self.n_in}), got {features.shape}")
        h = self.relu.forward(self.hidden.forward(features))
        parts = {"source": h[:n_source], "target": h[n_source:]}
        probs = {}
        self._cache = {"n_source": n_source}
        for pool, hp in parts.items():
            if hp.shape[0] == 0:
                probs[pool] = np.zeros((0, self.heads[pool].n_out))
                continue
            z = self.heads[pool].forward(hp)
            if self.logit_bn is not None:
                z = self.logit_bn[pool].forward(z, train=train)
            probs[pool] = softmax(z)
        self._cache["probs"] = probs
        return probs["source"], probs["target"]

    def backward(self, d_source: np.ndarray, d_target: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise UsageError("branch backward called before forward")
        probs = self._cache["probs"]
        dh = []
        for pool, dp in (("source", d_source), ("target", d_target)):
            p = probs[pool]
            if p.shape[0] == 0:
                dh.append(np.zeros((0, self.hidden.n_out)))
                continue
            dz = softmax_backward(p, dp)
            if self.logit_bn is not None:
                dz = self.logit_bn[pool].backward(dz)
            dh.append(self.heads[pool].backward(dz))
        return self.hidden.backward(self.relu.backward(np.concatenate(dh, axis=0)))

    def predict_assignments(self, features: np.ndarray, pool: str) -> AssignmentMatrix:
        """Inference-mode assignments for a batch drawn entirely from one pool."""
        if pool not in self.heads:
            raise ValueError(f"pool must be 'source' or 'target', got {pool!r}")
        n_source = features.shape[0] if pool == "source" else 0
        p_s, p_t = self.forward(features, n_source, train=False)
        return AssignmentMatrix(p_s if pool == "source" else p_t)
