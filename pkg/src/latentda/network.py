"""MLP classifier with mDA layers and a domain prediction branch.

Layout for hidden widths ``[h1, ..., hL]`` and tap index ``t``::

    x -> [Linear -> BN -> ReLU] * t            (shared trunk, standard BN)
      -> tap ---------------------------------> DomainBranch -> (p_src, p_tgt)
      -> [Linear -> mDA(w) -> ReLU] * (L - t)   (all mDA layers share one w)
      -> Linear -> softmax

Source rows come first in every batch.  The assignment matrix has
``k_source + k_target`` columns: source rows put their mass on the first
``k_source`` columns, target rows on the rest, so source and target
samples are never pooled into the same latent domain.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Iterator, Optional

import numpy as np

from .branch import DomainBranch, attach_point
from .errors import DimensionError, UsageError
from .layers import Affine, BatchNorm, Layer, Linear, ReLU, softmax, softmax_backward
from .mda import AssignmentMatrix, MDALayer, clamp_known


@dataclass
class NetworkConfig:
    n_in: int
    num_classes: int
    hidden: list = field(default_factory=lambda: [64, 64])
    k_source: int = 2
    k_target: int = 1
    tap: Optional[int] = None
    branch_width: int = 64
    branch_logit_bn: bool = False
    # near-zero heads start every assignment row close to uniform
    branch_head_scale: float = 0.01
    eps: float = 1e-5
    momentum: float = 0.1
    norm: str = "mda"  # "mda" or "split_bn"

    def to_dict(self) -> dict:
        return asdict(self)


class SplitBatchNorm(Layer):
    """Separate batch statistics for source and target rows, one shared affine."""

    def __init__(self, channels: int, eps: float, momentum: float):
        super().__init__()
        self.bn = {pool: BatchNorm(channels, eps, momentum, affine=False)
                   for pool in ("source", "target")}
        self.affine = Affine(channels)
        self.params, self.grads = self.affine.params, self.affine.grads

    def forward(self, x, n_source, train=True):
        self._n_source = n_source
        parts = [(p, rows) for p, rows in (("source", x[:n_source]), ("target", x[n_source:]))
                 if rows.shape[0]]
        self._pools = [p for p, _ in parts]
        y = np.concatenate([self.bn[p].forward(rows, train) for p, rows in parts], axis=0)
        return self.affine.forward(y)

    def backward(self, dy):
        dy = self.affine.backward(dy)
        n = self._n_source
        chunks = {"source": dy[:n], "target": dy[n:]}
        return np.concatenate([self.bn[p].backward(chunks[p]) for p in self._pools], axis=0)

    def state(self):
        out = dict(self.params)
        for pool, bn in self.bn.items():
            out[f"{pool}_running_mean"] = bn.running_mean
            out[f"{pool}_running_var"] = bn.running_var
        return out

    def _state_target(self, name):
        for pool, bn in self.bn.items():
            if name == f"{pool}_running_mean":
                return bn.running_mean
            if name == f"{pool}_running_var":
                return bn.running_var
        return self.params[name]


@dataclass
class ForwardResult:
    class_probs: np.ndarray
    source_domain_probs: Optional[np.ndarray]
    target_domain_probs: Optional[np.ndarray]
    assignments: Optional[AssignmentMatrix]
    tap: np.ndarray


class Network:
    def __init__(self, cfg: NetworkConfig, rng: np.random.Generator):
        if cfg.norm not in ("mda", "split_bn"):
            raise ValueError(f"unknown normalization {cfg.norm!r}")
        self.cfg = cfg
        self.tap = attach_point(len(cfg.hidden), cfg.tap)
        widths = [cfg.n_in] + list(cfg.hidden)

        self.trunk = []
        for i in range(self.tap):
            self.trunk.append((Linear(widths[i], widths[i + 1], rng),
                               BatchNorm(widths[i + 1], cfg.eps, cfg.momentum), ReLU()))
        self.blocks = []
        n_dom = cfg.k_source + cfg.k_target
        for i in range(self.tap, len(cfg.hidden)):
            c = widths[i + 1]
            norm = (MDALayer(c, n_dom, cfg.eps, cfg.momentum) if cfg.norm == "mda"
                    else SplitBatchNorm(c, cfg.eps, cfg.momentum))
            self.blocks.append((Linear(widths[i], c, rng), norm, ReLU()))
        self.classifier = Linear(widths[-1], cfg.num_classes, rng)
        self.branch = DomainBranch(widths[self.tap], cfg.branch_width, cfg.k_source,
                                   cfg.k_target, rng, logit_bn=cfg.branch_logit_bn,
                                   head_scale=cfg.branch_head_scale)
        self._fwd = None

    @property
    def num_domains(self) -> int:
        return self.cfg.k_source + self.cfg.k_target

    # parameters -------------------------------------------------------------

    def named_layers(self) -> Iterator[tuple[str, Layer]]:
        for i, (lin, bn, _) in enumerate(self.trunk):
            yield f"trunk.{i}.linear", lin
            yield f"trunk.{i}.bn", bn
        for i, (lin, norm, _) in enumerate(self.blocks):
            yield f"blocks.{i}.linear", lin
            yield f"blocks.{i}.norm", norm
        yield "classifier", self.classifier
        for name, layer in self.branch.layers():
            yield f"branch.{name}", layer

    def parameters(self) -> list[tuple[str, np.ndarray, np.ndarray]]:
        """(name, value, grad) triples in a fixed order."""
        out = []
        for prefix, layer in self.named_layers():
            for name, value in layer.params.items():
                out.append((f"{prefix}.{name}", value, layer.grads[name]))
        return out

    def zero_grad(self) -> None:
        for _, layer in self.named_layers():
            layer.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, layer in self.named_layers():
            for name, value in layer.state().items():
                out[f"{prefix}.{name}"] = value
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = self.state_dict()
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise DimensionError(f"checkpoint mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for prefix, layer in self.named_layers():
            sub = {k[len(prefix) + 1:]: np.asarray(v) for k, v in state.items()
                   if k.startswith(prefix + ".") and k[len(prefix) + 1:] in layer.state()}
            layer.load_state(sub)

    # forward / backward -----------------------------------------------------

    def assemble(self, p_source: np.ndarray, p_target: np.ndarray) -> np.ndarray:
        """Place per-pool domain probabilities into the joint (b, k_s + k_t) matrix."""
        ks = self.cfg.k_source
        w = np.zeros((p_source.shape[0] + p_target.shape[0], self.num_domains))
        w[:p_source.shape[0], :ks] = p_source
        w[p_source.shape[0]:, ks:] = p_target
        return w

    def forward(self, x: np.ndarray, n_source: int, train: bool = True,
                fixed_assignments: Optional[np.ndarray] = None,
                known_domains: Optional[np.ndarray] = None) -> ForwardResult:
        """Run the network on a batch whose first ``n_source`` rows are source samples.

        ``fixed_assignments`` replaces the branch output entirely (baseline
        modes); no gradient reaches the branch through the mDA layers then.
        ``known_domains`` (per source row, -1 for unknown) clamps rows to
        one-hot before they reach the mDA layers.
        """
        if x.ndim != 2 or x.shape[1] != self.cfg.n_in:
            raise DimensionError(f"network expects (b, {self.cfg.n_in}), got {x.shape}")
        h = x
        for lin, bn, relu in self.trunk:
            h = relu.forward(bn.forward(lin.forward(h), train))
        tap = h

        p_s = p_t = None
        assign = None
        if self.cfg.norm == "mda":
            if fixed_assignments is None:
                p_s, p_t = self.branch.forward(tap, n_source, train)
                assign = AssignmentMatrix(self.assemble(p_s, p_t))
                if known_domains is not None:
                    known = np.full(len(assign), -1)
                    known[:n_source] = known_domains
                    assign = clamp_known(assign, known)
            else:
                assign = AssignmentMatrix(fixed_assignments, np.ones(len(x), dtype=bool))

        for lin, norm, relu in self.blocks:
            z = lin.forward(h)
            z = norm.forward(z, assign, train) if self.cfg.norm == "mda" else norm.forward(z, n_source, train)
            h = relu.forward(z)
        probs = softmax(self.classifier.forward(h))
        self._fwd = ForwardResult(probs, p_s, p_t, assign, tap)
        self._n_source = n_source
        return self._fwd

    def backward(self, d_class_probs: np.ndarray,
                 d_source_domain: Optional[np.ndarray] = None,
                 d_target_domain: Optional[np.ndarray] = None) -> np.ndarray:
        """Backpropagate loss seeds; returns the gradient w.r.t. the input."""
        if self._fwd is None:
            raise UsageError("backward called before forward")
        fwd = self._fwd
        dh = self.classifier.backward(softmax_backward(fwd.class_probs, d_class_probs))
        dw = np.zeros((dh.shape[0], self.num_domains))
        for lin, norm, relu in reversed(self.blocks):
            dz = relu.backward(dh)
            if self.cfg.norm == "mda":
                dz, dw_layer = norm.backward(dz)
                dw += dw_layer
            else:
                dz = norm.backward(dz)
            dh = lin.backward(dz)

        if fwd.source_domain_probs is not None:
            n, ks = self._n_source, self.cfg.k_source
            dw[fwd.assignments.clamped] = 0.0
            ds = dw[:n, :ks].copy()
            dt = dw[n:, ks:].copy()
            if d_source_domain is not None:
                ds += d_source_domain
            if d_target_domain is not None:
                dt += d_target_domain
            dh = dh + self.branch.backward(ds, dt)

        for lin, bn, relu in reversed(self.trunk):
            dh = lin.backward(bn.backward(relu.backward(dh)))
        return dh
