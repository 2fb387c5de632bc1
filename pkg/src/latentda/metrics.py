"""Evaluation statistics: accuracy, p*, latent-domain purity and histograms."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment


def accuracy(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValueError(f"length mismatch: {predictions.shape} vs {labels.shape}")
    if predictions.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.mean(predictions == labels))


def _pair_matrix(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.size == 0 or b.size == 0:
        raise ValueError("p* needs at least one observation per side")
    return a[:, None], b[None, :]


def p_star(accs_a: Sequence[float], accs_b: Sequence[float]) -> float:
    """Fraction of run pairs (a, b) where a strictly beats b."""
    a, b = _pair_matrix(accs_a, accs_b)
    return float(np.mean(a > b))


def tie_fraction(accs_a: Sequence[float], accs_b: Sequence[float]) -> float:
    a, b = _pair_matrix(accs_a, accs_b)
    return float(np.mean(a == b))


def confusion(assignments, true_domains, n_latent: int | None = None,
              n_true: int | None = None) -> np.ndarray:
    """Counts matrix indexed [true, latent]."""
    assignments = np.asarray(assignments, dtype=np.int64)
    true_domains = np.asarray(true_domains, dtype=np.int64)
    if assignments.shape != true_domains.shape:
        raise ValueError("assignments and true domains differ in length")
    n_latent = n_latent or (int(assignments.max()) + 1 if assignments.size else 0)
    n_true = n_true or (int(true_domains.max()) + 1 if true_domains.size else 0)
    counts = np.zeros((n_true, n_latent), dtype=np.int64)
    np.add.at(counts, (true_domains, assignments), 1)
    return counts


def domain_purity(assignments, true_domains) -> float:
    """Best accuracy over one-to-one relabelings of latent ids onto true ids.

    Latent ids left unmatched (when the counts differ) score zero.
    """
    assignments = np.asarray(assignments)
    if assignments.size == 0:
        raise ValueError("purity of an empty set is undefined")
    counts = confusion(assignments, true_domains)
    rows, cols = linear_sum_assignment(counts, maximize=True)
    return float(counts[rows, cols].sum() / assignments.size)


@dataclass
class AssignmentHistogram:
    counts: np.ndarray  # [true domain, latent domain]

    @property
    def group_sizes(self) -> np.ndarray:
        return self.counts.sum(axis=1)


def assignment_histogram(soft_assignments, true_domains, n_true: int | None = None) -> AssignmentHistogram:
    """Tally argmax latent domains per true domain; ties go to the lowest index."""
    soft = np.asarray(soft_assignments, dtype=np.float64)
    latent = np.argmax(soft, axis=1)  # numpy argmax returns the first maximum
    return AssignmentHistogram(confusion(latent, true_domains, soft.shape[1], n_true))
