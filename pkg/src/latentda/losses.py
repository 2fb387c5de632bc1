"""Composite training objective.

The classification part is source cross-entropy plus a target entropy
penalty.  The domain part combines supervision on source samples with a
known domain, per-sample assignment entropy (pushes toward confident
assignments), and the negated entropy of the batch-averaged assignment
(pushes toward using every latent domain).  Every function returns the
loss value together with its gradient with respect to the probabilities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from .errors import DomainError

LOG_CLAMP = 1e-12
_TINY = np.finfo(np.float64).tiny


@dataclass(frozen=True)
class LossWeights:
    lambda_C: float = 0.2
    lambda_E: float = 0.2
    lambda_B: float = 0.1
    lambda_D: float = 0.5

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{f.name} must be finite and non-negative, got {v}")


@dataclass
class LossReport:
    """Weighted, signed contributions; ``total`` is their plain sum."""

    total: float = 0.0
    cls_supervised: float = 0.0
    cls_target_entropy: float = 0.0
    dom_supervised: float = 0.0
    dom_sample_entropy_src: float = 0.0
    dom_sample_entropy_tgt: float = 0.0
    dom_balance_src: float = 0.0
    dom_balance_tgt: float = 0.0

    COMPONENTS = (
        "cls_supervised", "cls_target_entropy", "dom_supervised",
        "dom_sample_entropy_src", "dom_sample_entropy_tgt",
        "dom_balance_src", "dom_balance_tgt",
    )

    def component_sum(self) -> float:
        return sum(getattr(self, k) for k in self.COMPONENTS)

    def as_dict(self) -> dict:
        return {"total": self.total, **{k: getattr(self, k) for k in self.COMPONENTS}}


def _check_simplex(p: np.ndarray, atol: float = 1e-6) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > atol):
        raise DomainError("expected probability rows (non-negative, summing to 1)")
    return p


def entropy(p) -> float:
    """Natural-log entropy of one probability row, with 0 log 0 = 0."""
    p = _check_simplex(p)
    if p.ndim != 1:
        raise DomainError("entropy expects a single probability row")
    return float(-np.sum(p * np.log(np.where(p > 0, p, 1.0))))


def _row_entropies(p: np.ndarray):
    """Per-row entropies and the gradient of each row's entropy w.r.t. that row."""
    logp = np.log(np.maximum(p, _TINY))
    h = -np.sum(np.where(p > 0, p * logp, 0.0), axis=1)
    return h, -(logp + 1.0)


def _nll(p: np.ndarray, labels: np.ndarray):
    """Mean of -log p[i, label_i] with the log argument clamped; returns (value, grad, n_clamped)."""
    n = p.shape[0]
    picked = p[np.arange(n), labels]
    clamped = picked < LOG_CLAMP
    value = -np.mean(np.log(np.maximum(picked, LOG_CLAMP)))
    grad = np.zeros_like(p)
    grad[np.arange(n), labels] = np.where(clamped, 0.0, -1.0 / (n * np.maximum(picked, LOG_CLAMP)))
    return float(value), grad, int(clamped.sum())


def _check_labels(labels, k, what):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise DomainError(f"{what} out of range [0, {k})")
    return labels


@dataclass
class ClassificationLoss:
    value: float
    supervised: float
    target_entropy: float
    grad_source: np.ndarray
    grad_target: np.ndarray
    clamped: int = 0


def classification_loss(source_probs, source_labels, target_probs,
                        weights: LossWeights) -> ClassificationLoss:
    ps = _check_simplex(source_probs)
    pt = _check_simplex(target_probs)
    labels = _check_labels(source_labels, ps.shape[1], "class label")
    sup, g_s, n_clamped = _nll(ps, labels) if ps.shape[0] else (0.0, np.zeros_like(ps), 0)

    ent = 0.0
    g_t = np.zeros_like(pt)
    m = pt.shape[0]
    if m and weights.lambda_C > 0:
        h, dh = _row_entropies(pt)
        ent = weights.lambda_C * float(h.mean())
        g_t = weights.lambda_C / m * dh
    return ClassificationLoss(sup + ent, sup, ent, g_s, g_t, n_clamped)


@dataclass
class DomainLoss:
    value: float
    supervised: float
    sample_entropy_src: float
    sample_entropy_tgt: float
    balance_src: float
    balance_tgt: float
    mean_entropy_src: float
    mean_entropy_tgt: float
    grad_source: np.ndarray
    grad_target: np.ndarray


def _balance(p: np.ndarray, lam: float):
    """-lam * H(mean row) and its gradient w.r.t. every row."""
    n = p.shape[0]
    fbar = p.mean(axis=0)
    log_fbar = np.log(np.maximum(fbar, _TINY))
    h = float(-np.sum(np.where(fbar > 0, fbar * log_fbar, 0.0)))
    grad = np.broadcast_to(lam / n * (log_fbar + 1.0), p.shape).copy()
    return -lam * h, grad, h


def domain_loss(source_probs, target_probs, known_source_domains: Optional[np.ndarray],
                weights: LossWeights) -> DomainLoss:
    """``known_source_domains`` has one entry per source row, -1 where unknown."""
    ps = _check_simplex(source_probs)
    pt = _check_simplex(target_probs)
    n, m = ps.shape[0], pt.shape[0]
    known = (np.full(n, -1, dtype=np.int64) if known_source_domains is None
             else np.asarray(known_source_domains, dtype=np.int64))
    if known.shape != (n,):
        raise DomainError(f"expected {n} known-domain entries, got {known.shape}")
    if known.size and known.max() >= ps.shape[1]:
        raise DomainError("known domain out of range")
    is_known = known >= 0

    g_s = np.zeros_like(ps)
    g_t = np.zeros_like(pt)
    sup = ent_s = ent_t = bal_s = bal_t = 0.0
    h_src = h_tgt = 0.0

    if is_known.any() and weights.lambda_D > 0:
        v, g, _ = _nll(ps[is_known], known[is_known])
        sup = weights.lambda_D * v
        g_s[is_known] += weights.lambda_D * g
    unknown = ~is_known
    if unknown.any() and weights.lambda_E > 0:
        h, dh = _row_entropies(ps[unknown])
        ent_s = weights.lambda_E * float(h.mean())
        g_s[unknown] += weights.lambda_E / unknown.sum() * dh
    if m and weights.lambda_E > 0:
        h, dh = _row_entropies(pt)
        ent_t = weights.lambda_E * float(h.mean())
        g_t += weights.lambda_E / m * dh
    if n:
        bal_s, g, h_src = _balance(ps, weights.lambda_B)
        g_s += g
    if m:
        bal_t, g, h_tgt = _balance(pt, weights.lambda_B)
        g_t += g

    total = sup + ent_s + ent_t + bal_s + bal_t
    return DomainLoss(total, sup, ent_s, ent_t, bal_s, bal_t, h_src, h_tgt, g_s, g_t)


def total_loss(cls: ClassificationLoss, dom: Optional[DomainLoss]) -> LossReport:
    rep = LossReport(
        cls_supervised=cls.supervised,
        cls_target_entropy=cls.target_entropy,
    )
    if dom is not None:
        rep.dom_supervised = dom.supervised
        rep.dom_sample_entropy_src = dom.sample_entropy_src
        rep.dom_sample_entropy_tgt = dom.sample_entropy_tgt
        rep.dom_balance_src = dom.balance_src
        rep.dom_balance_tgt = dom.balance_tgt
    rep.total = rep.component_sum()
    return rep
