"""Latent domain discovery for unsupervised domain adaptation.

Multi-domain batch normalization (mDA) layers normalize each sample with
statistics of the latent domains it is softly assigned to; a small domain
branch predicts those assignments and is trained jointly with the classifier.
"""

from .config import ExperimentConfig, reference_config
from .data import Dataset, SyntheticSpec, benchmark, generate, load_jsonl, save_jsonl
from .losses import LossReport, LossWeights, classification_loss, domain_loss, entropy, total_loss
from .mda import AssignmentMatrix, MDALayer
from .metrics import assignment_histogram, domain_purity, p_star, tie_fraction
from .network import Network, NetworkConfig
from .optim import SGD, Schedule, lr_at
from .train import Trainer, run_experiment

__version__ = "0.1.0"

__all__ = [
    "AssignmentMatrix", "Dataset", "ExperimentConfig", "LossReport", "LossWeights", "MDALayer",
    "Network", "NetworkConfig", "SGD", "Schedule", "SyntheticSpec", "Trainer",
    "assignment_histogram", "benchmark", "classification_loss", "domain_loss", "domain_purity",
    "entropy", "generate", "load_jsonl", "lr_at", "p_star", "reference_config", "run_experiment",
    "save_jsonl", "tie_fraction", "total_loss",
]
