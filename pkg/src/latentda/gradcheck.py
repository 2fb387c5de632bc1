"""Finite-difference verification of every hand-written gradient.

Each trial checks two things:

* a single mDA layer (random batch, channels and domain count, soft random
  assignments, random affine) under a smooth scalar loss, comparing
  gradients for the input, the assignments and the affine parameters;
* a tiny full network (trunk, mDA blocks, domain branch, composite loss)
  comparing every parameter gradient and the input gradient.

Central differences use ``h = 1e-5``.  If a perturbation flips any ReLU
the estimate is not a derivative, so the step is shrunk until no unit
changes side.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .losses import LossWeights, classification_loss, domain_loss, total_loss
from .mda import MDALayer
from .network import Network, NetworkConfig

H = 1e-5
TOLERANCE = 1e-4
# denominators below this are treated as this (absolute error regime)
REL_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> float:
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def numeric_gradient(f: Callable[[], float], x: np.ndarray, h: float = H,
                     signature: Callable[[], bytes] | None = None) -> np.ndarray:
    """Central differences of ``f`` w.r.t. ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    base = signature() if signature is not None else None
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        step = h
        for _ in range(6):
            x[idx] = orig + step
            fp = f()
            sp = signature() if signature is not None else None
            x[idx] = orig - step
            fm = f()
            sm = signature() if signature is not None else None
            if signature is None or (sp == base and sm == base):
                break
            step /= 10
        x[idx] = orig
        grad[idx] = (fp - fm) / (2 * step)
    return grad


@dataclass
class TrialResult:
    trial: int
    batch: int
    channels: int
    domains: int
    layer_errors: dict = field(default_factory=dict)
    network_errors: dict = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        vals = list(self.layer_errors.values()) + list(self.network_errors.values())
        return max(vals) if vals else 0.0

    def as_row(self) -> dict:
        return {"trial": self.trial, "batch": self.batch, "channels": self.channels,
                "domains": self.domains,
                "layer_max_rel_error": max(self.layer_errors.values(), default=0.0),
                "network_max_rel_error": max(self.network_errors.values(), default=0.0)}


def check_layer(rng: np.random.Generator, batch: int, channels: int, domains: int,
                layer_cls=MDALayer) -> dict:
    layer = layer_cls(channels, domains)
    layer.params["scale"][:] = rng.uniform(0.5, 1.5, channels)
    layer.params["shift"][:] = rng.normal(size=channels)
    x = rng.normal(size=(batch, channels)) * rng.uniform(0.5, 3.0, channels) + rng.normal(size=channels)
    w = rng.dirichlet(np.ones(domains), size=batch)
    proj = rng.normal(size=(batch, channels))
    quad = rng.uniform(0.1, 1.0, size=(batch, channels))

    def loss() -> float:
        y = layer.forward(x, w, train=True)
        return float(np.sum(proj * y) + 0.5 * np.sum(quad * y ** 2))

    y = layer.forward(x, w, train=True)
    layer.zero_grad()
    dx, dw = layer.backward(proj + quad * y)
    analytic = {"x": dx, "w": dw, "scale": layer.grads["scale"].copy(),
                "shift": layer.grads["shift"].copy()}
    numeric = {
        "x": numeric_gradient(loss, x),
        "w": numeric_gradient(loss, w),
        "scale": numeric_gradient(loss, layer.params["scale"]),
        "shift": numeric_gradient(loss, layer.params["shift"]),
    }
    return {f"mda.{k}": relative_error(analytic[k], numeric[k]) for k in analytic}


def _relu_signature(net: Network) -> Callable[[], bytes]:
    relus = [blk[2] for blk in net.trunk] + [blk[2] for blk in net.blocks] + [net.branch.relu]

    def sig() -> bytes:
        return b"".join(np.packbits(r._mask).tobytes() for r in relus)

    return sig


def check_network(rng: np.random.Generator, batch: int, channels: int) -> dict:
    k_s = int(rng.integers(1, 3))
    k_t = int(rng.integers(1, 3))
    n_in, n_classes = int(rng.integers(2, 5)), 3
    cfg = NetworkConfig(n_in=n_in, num_classes=n_classes, hidden=[channels, channels],
                        k_source=k_s, k_target=k_t, branch_width=5)
    net = Network(cfg, rng)
    for _, layer in net.named_layers():
        for name, value in layer.params.items():
            # zero-initialized biases put ReLU inputs exactly on the kink for
            # rows that the trunk zeroes out, so move every parameter off it
            if name in ("scale", "shift", "bias"):
                value += rng.normal(scale=0.2, size=value.shape)
    n_s = max(2, batch // 2)
    n_t = max(2, batch - n_s)
    x = rng.normal(size=(n_s + n_t, n_in))
    labels = rng.integers(0, n_classes, n_s)
    known = np.where(rng.random(n_s) < 0.3, rng.integers(0, k_s, n_s), -1)
    weights = LossWeights(*rng.uniform(0.05, 0.5, 4))

    def pieces():
        fwd = net.forward(x, n_s, train=True, known_domains=known)
        p = fwd.class_probs
        cls = classification_loss(p[:n_s], labels, p[n_s:], weights)
        dom = domain_loss(fwd.source_domain_probs, fwd.target_domain_probs, known, weights)
        return cls, dom

    def loss() -> float:
        cls, dom = pieces()
        return total_loss(cls, dom).total

    net.zero_grad()
    cls, dom = pieces()
    dx = net.backward(np.concatenate([cls.grad_source, cls.grad_target]),
                      dom.grad_source, dom.grad_target)
    sig = _relu_signature(net)
    analytic = {"input": dx.copy(), **{name: grad.copy() for name, _, grad in net.parameters()}}
    # Biases feeding a normalization layer have a true gradient of exactly
    # zero, where central differences only see roundoff of order eps*|L|/h.
    # Entries far below the network's gradient scale are judged absolutely.
    floor = max(REL_FLOOR, REL_FLOOR * max(np.max(np.abs(g), initial=0.0) for g in analytic.values()))
    errors = {"net.input": relative_error(analytic["input"], numeric_gradient(loss, x, signature=sig), floor)}
    for name, value, _ in net.parameters():
        errors[f"net.{name}"] = relative_error(analytic[name], numeric_gradient(loss, value, signature=sig),
                                               floor)
    return errors


@dataclass
class GradcheckReport:
    trials: list
    seconds: float
    tolerance: float = TOLERANCE

    @property
    def max_error(self) -> float:
        return max(t.max_error for t in self.trials)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance

    def worst(self) -> tuple[str, float]:
        best = ("", -1.0)
        for t in self.trials:
            for name, err in {**t.layer_errors, **t.network_errors}.items():
                if err > best[1]:
                    best = (f"trial {t.trial} {name}", err)
        return best

    def lines(self) -> list[str]:
        out = [f"trial {t.trial:3d} b={t.batch:2d} c={t.channels} |D|={t.domains} "
               f"max_rel_err={t.max_error:.3e}" for t in self.trials]
        where, err = self.worst()
        out.append(f"{'PASS' if self.passed else 'FAIL'} max_rel_err={err:.3e} "
                   f"(tolerance {self.tolerance:g}) worst: {where} [{self.seconds:.1f}s]")
        return out


def run_gradcheck(seed: int = 0, trials: int = 100, network: bool = True,
                  layer_cls=MDALayer) -> GradcheckReport:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    results = []
    for i in range(trials):
        batch = int(rng.integers(4, 17))
        channels = int(rng.integers(1, 9))
        domains = 1 + i % 4
        res = TrialResult(i, batch, channels, domains)
        res.layer_errors = check_layer(rng, batch, channels, domains, layer_cls)
        if network:
            res.network_errors = check_network(rng, batch, channels)
        results.append(res)
    return GradcheckReport(results, time.perf_counter() - start)
