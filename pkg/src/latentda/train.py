"""Training loop, evaluation and run records."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, prepare_dataset
from .data import BatchSampler, Dataset, Split
from .errors import ConfigError, NonFiniteError
from .losses import LossReport, classification_loss, domain_loss, total_loss
from .metrics import accuracy, assignment_histogram, domain_purity
from .network import Network, NetworkConfig
from .optim import SGD, Schedule, lr_at

log = logging.getLogger(__name__)

EVAL_COLUMNS = ["target_acc", "per_domain_acc", "src_purity", "tgt_purity",
                "h_fbar_src", "h_fbar_tgt"]
RUN_COLUMNS = ["step", "lr"] + list(LossReport().as_dict()) + EVAL_COLUMNS

_SPLIT_SALT = {"source": 0, "target": 1, "test": 2}


class NumericalAbort(NonFiniteError):
    def __init__(self, step: int, report: Optional[LossReport], reason: str):
        self.step = step
        self.report = report
        detail = "" if report is None else " " + ", ".join(
            f"{k}={v!r}" for k, v in report.as_dict().items())
        super().__init__(f"step {step}: {reason}{detail}")


@dataclass
class RunRecord:
    rows: list = field(default_factory=list)

    def append(self, row: dict) -> None:
        if self.rows and row["step"] <= self.rows[-1]["step"]:
            raise ValueError("run record steps must increase")
        self.rows.append(row)

    @property
    def last(self) -> dict:
        return self.rows[-1]

    def write_csv(self, path) -> None:
        write_rows(path, RUN_COLUMNS, self.rows)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_rows(path, columns, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


def read_rows(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def build_network(cfg: ExperimentConfig, n_in: int, num_classes: int,
                  rng: np.random.Generator) -> Network:
    return Network(NetworkConfig(
        n_in=n_in, num_classes=num_classes, hidden=list(cfg.hidden),
        k_source=cfg.k_source, k_target=cfg.k_target, tap=cfg.tap,
        branch_width=cfg.branch_width, branch_logit_bn=cfg.branch_logit_bn,
        branch_head_scale=cfg.branch_head_scale,
        eps=cfg.eps, momentum=cfg.bn_momentum, norm=cfg.normalization,
    ), rng)


class Trainer:
    """Owns the network, optimizer, sampler and RNG streams of a single run."""

    def __init__(self, cfg: ExperimentConfig, dataset: Optional[Dataset] = None,
                 base_dir=None):
        self.cfg = cfg
        self.dataset = dataset if dataset is not None else prepare_dataset(cfg, base_dir)
        if self.dataset["source"].known.max(initial=-1) >= cfg.k_source:
            raise ConfigError("known domain labels exceed k_source")
        init_ss, batch_ss = np.random.SeedSequence(cfg.seed).spawn(2)
        self.net = build_network(cfg, self.dataset.feature_dim, self.dataset.num_classes,
                                 np.random.default_rng(init_ss))
        self.sampler = BatchSampler(self.dataset, cfg.batch_size, np.random.default_rng(batch_ss),
                                    stratify=cfg.stratified)
        self.optimizer = SGD(cfg.momentum, cfg.weight_decay)
        self.schedule = Schedule(cfg.l0, cfg.gamma, cfg.beta, cfg.total_steps,
                                 cfg.schedule, cfg.step_at, cfg.step_factor)
        self.weights = cfg.loss_weights()
        self.step_count = 0
        self.clamped_logs = 0
        self.record = RunRecord()
        if cfg.mode == "oracle":
            for name in ("source", "target"):
                doms = self.dataset[name].domains
                k = cfg.k_source if name == "source" else cfg.k_target
                if doms.min(initial=0) < 0 or doms.max(initial=0) >= k:
                    raise ConfigError(f"oracle mode needs {name} true domains in [0, {k})")

    # assignments for the baseline modes -----------------------------------

    @property
    def uses_branch(self) -> bool:
        return self.cfg.normalization == "mda" and self.cfg.mode in ("ours", "ours_lambdaB0")

    def _pool_ids(self, split: str, idx: np.ndarray, pool: str) -> np.ndarray:
        k = self.cfg.k_source if pool == "source" else self.cfg.k_target
        mode = self.cfg.mode
        if mode == "unified":
            return np.zeros(len(idx), dtype=np.int64)
        if mode == "oracle":
            return self.dataset[split].domains[idx]
        # random_assign: a fixed random domain per sample of each split
        n = len(self.dataset[split])
        table = np.random.default_rng([self.cfg.seed, 7919, _SPLIT_SALT[split]]).integers(0, k, size=n)
        return table[idx]

    def fixed_assignments(self, parts) -> Optional[np.ndarray]:
        """``parts``: sequence of (split, indices, pool) in batch row order."""
        if self.uses_branch or self.cfg.normalization != "mda":
            return None
        ks = self.cfg.k_source
        rows = []
        for split, idx, pool in parts:
            ids = self._pool_ids(split, idx, pool)
            w = np.zeros((len(idx), ks + self.cfg.k_target))
            w[np.arange(len(idx)), ids + (0 if pool == "source" else ks)] = 1.0
            rows.append(w)
        return np.concatenate(rows, axis=0)

    # training -------------------------------------------------------------

    def train_step(self) -> tuple[LossReport, float]:
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                return self._train_step()
        except NumericalAbort:
            raise
        except NonFiniteError as e:
            raise NumericalAbort(self.step_count, None, str(e)) from None

    def _train_step(self) -> tuple[LossReport, float]:
        batch = self.sampler.next_batch()
        n_s = batch.n_source
        fixed = self.fixed_assignments([("source", batch.source_idx, "source"),
                                        ("target", batch.target_idx, "target")])
        known = batch.source_known if np.any(batch.source_known >= 0) else None
        self.net.zero_grad()
        fwd = self.net.forward(batch.stacked(), n_s, train=True, fixed_assignments=fixed,
                               known_domains=known if self.uses_branch else None)

        probs = fwd.class_probs
        cls = classification_loss(probs[:n_s], batch.source_y, probs[n_s:], self.weights)
        self.clamped_logs += cls.clamped
        dom = None
        if fwd.source_domain_probs is not None:
            dom = domain_loss(fwd.source_domain_probs, fwd.target_domain_probs,
                              batch.source_known, self.weights)
        report = total_loss(cls, dom)
        if not np.isfinite(report.total):
            raise NumericalAbort(self.step_count, report, "non-finite loss")

        d_probs = np.concatenate([cls.grad_source, cls.grad_target], axis=0)
        self.net.backward(d_probs,
                          None if dom is None else dom.grad_source,
                          None if dom is None else dom.grad_target)
        lr = lr_at(self.schedule, self.step_count)
        try:
            self.optimizer.step(self.net.parameters(), lr)
        except NonFiniteError as e:
            raise NumericalAbort(self.step_count, report, str(e)) from None
        self.step_count += 1
        return report, lr

    def run(self, on_row: Optional[Callable[[dict], None]] = None) -> RunRecord:
        cfg = self.cfg
        while self.step_count < cfg.total_steps:
            report, lr = self.train_step()
            if self.step_count % cfg.eval_every == 0 or self.step_count == cfg.total_steps:
                row = {"step": self.step_count, "lr": lr, **report.as_dict(), **self.evaluate()}
                self.record.append(row)
                log.info("step %d loss %.4f target_acc %.4f src_purity %.4f", row["step"],
                         row["total"], row["target_acc"], row["src_purity"])
                if on_row is not None:
                    on_row(row)
        return self.record

    # evaluation -----------------------------------------------------------

    def _infer(self, split_name: str, pool: str):
        split: Split = self.dataset[split_name]
        n_source = len(split) if pool == "source" else 0
        idx = np.arange(len(split))
        fixed = self.fixed_assignments([(split_name, idx, pool)])
        fwd = self.net.forward(split.features, n_source, train=False, fixed_assignments=fixed)
        if fwd.source_domain_probs is None:
            p_s, p_t = self.net.branch.forward(fwd.tap, n_source, train=False)
        else:
            p_s, p_t = fwd.source_domain_probs, fwd.target_domain_probs
        return fwd.class_probs, (p_s if pool == "source" else p_t)

    def evaluate(self, details: bool = False) -> dict:
        """Inference-mode metrics on the labeled target split and the source pool."""
        test = self.dataset["test"]
        eval_split = "test" if len(test) else "target"
        out = {}
        probs, p_t = self._infer(eval_split, "target")
        split = self.dataset[eval_split]
        pred = probs.argmax(axis=1)
        if len(test):
            out["target_acc"] = accuracy(pred, test.labels)
            doms = np.unique(test.domains)
            out["per_domain_acc"] = "|".join(
                repr(accuracy(pred[test.domains == d], test.labels[test.domains == d])) for d in doms)
        else:
            out["target_acc"] = float("nan")
            out["per_domain_acc"] = ""
        _, p_s = self._infer("source", "source")
        src = self.dataset["source"]
        out["src_purity"] = _purity(p_s, src.domains)
        out["tgt_purity"] = _purity(p_t, split.domains)
        out["h_fbar_src"] = _mean_entropy(p_s)
        out["h_fbar_tgt"] = _mean_entropy(p_t)
        if details:
            out["hist_source"] = assignment_histogram(p_s, np.maximum(src.domains, 0))
            out["hist_target"] = assignment_histogram(p_t, np.maximum(split.domains, 0))
        return out

    # persistence ----------------------------------------------------------

    def save(self, path) -> None:
        meta = {"config": self.cfg.to_dict(), "step": self.step_count,
                "n_in": self.dataset.feature_dim, "num_classes": self.dataset.num_classes}
        save_checkpoint(path, self.net.state_dict(), meta)

    @classmethod
    def from_checkpoint(cls, path, dataset: Optional[Dataset] = None, base_dir=None) -> "Trainer":
        state, meta = load_checkpoint(path)
        cfg = ExperimentConfig.from_dict(meta["config"])
        trainer = cls(cfg, dataset, base_dir)
        if (trainer.dataset.feature_dim, trainer.dataset.num_classes) != (meta["n_in"], meta["num_classes"]):
            raise ConfigError("dataset shape does not match the checkpoint")
        trainer.net.load_state_dict(state)
        trainer.step_count = meta["step"]
        return trainer


def _purity(p: np.ndarray, domains: np.ndarray) -> float:
    if p.shape[0] == 0 or np.any(domains < 0):
        return float("nan")
    return domain_purity(p.argmax(axis=1), domains)


def _mean_entropy(p: np.ndarray) -> float:
    if p.shape[0] == 0:
        return float("nan")
    fbar = p.mean(axis=0)
    # "+ 0.0" turns the -0.0 of a one-column pool into 0.0
    return float(-np.sum(np.where(fbar > 0, fbar * np.log(np.where(fbar > 0, fbar, 1.0)), 0.0))) + 0.0


def run_experiment(cfg: ExperimentConfig, out_dir=None, dataset: Optional[Dataset] = None,
                   plots: bool = True, base_dir=None) -> Trainer:
    """Train, then write run.csv, checkpoint.mda, config.json (and figures) to ``out_dir``."""
    trainer = Trainer(cfg, dataset, base_dir)
    trainer.run()
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        trainer.record.write_csv(out / "run.csv")
        trainer.save(out / "checkpoint.mda")
        cfg.save(out / "config.json")
        if plots:
            from .plotting import plot_run
            plot_run(trainer.record.rows, out / "curves.png")
    return trainer
