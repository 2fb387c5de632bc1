"""Synthetic multi-domain data, dataset files, IDX digits and mini-batching.

Synthetic data: every class has a Gaussian prototype in a 2-D informative
plane (prototypes sit on a circle around ``prototype_center``).  A domain
is a similarity transform of that plane (rotation about the origin, scale,
translation), so class semantics are shared while each domain shifts the
covariates.  Remaining feature dimensions are domain-independent noise.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import ConfigError, FormatError

SPLITS = ("source", "target", "test")

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class DomainTransform:
    rotation: float = 0.0  # degrees
    translation: tuple = (0.0, 0.0)
    scale: float = 1.0

    def apply(self, pts: np.ndarray) -> np.ndarray:
        t = math.radians(self.rotation)
        rot = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
        return self.scale * pts @ rot.T + np.asarray(self.translation, dtype=np.float64)


@dataclass
class SyntheticSpec:
    name: str = "custom"
    num_classes: int = 3
    feature_dim: int = 16
    source_domains: list = field(default_factory=lambda: [DomainTransform()])
    target_domains: list = field(default_factory=lambda: [DomainTransform()])
    source_mix: Optional[list] = None
    target_mix: Optional[list] = None
    noise_std: float = 0.5
    nuisance_std: float = 1.0
    prototype_center: tuple = (0.0, 0.0)
    prototype_radius: float = 2.0
    n_source: int = 2000
    n_target: int = 2000
    n_test: int = 1000
    domain_label_frac: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.source_domains = [d if isinstance(d, DomainTransform) else DomainTransform(**d)
                               for d in self.source_domains]
        self.target_domains = [d if isinstance(d, DomainTransform) else DomainTransform(**d)
                               for d in self.target_domains]
        self.source_mix = self._mix(self.source_mix, len(self.source_domains), "source_mix")
        self.target_mix = self._mix(self.target_mix, len(self.target_domains), "target_mix")
        if self.feature_dim < 2:
            raise ConfigError("feature_dim must be >= 2")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be >= 1")
        if not self.source_domains or not self.target_domains:
            raise ConfigError("need at least one source and one target domain")
        if min(self.n_source, self.n_target) < 1 or self.n_test < 0:
            raise ConfigError("split sizes must be positive")
        if not 0.0 <= self.domain_label_frac <= 1.0:
            raise ConfigError("domain_label_frac must lie in [0, 1]")

    @staticmethod
    def _mix(mix, k, what):
        if mix is None:
            return [1.0 / k] * k
        mix = [float(v) for v in mix]
        if len(mix) != k or min(mix) < 0 or abs(sum(mix) - 1.0) > 1e-9:
            raise ConfigError(f"{what} must be {k} non-negative weights summing to 1")
        return mix

    @property
    def k_source(self) -> int:
        return len(self.source_domains)

    @property
    def k_target(self) -> int:
        return len(self.target_domains)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(f"invalid synthetic spec: {e}") from None

    def to_dict(self) -> dict:
        return asdict(self)

    def prototypes(self) -> np.ndarray:
        angles = 2 * np.pi * np.arange(self.num_classes) / self.num_classes
        ring = np.stack([np.cos(angles), np.sin(angles)], axis=1)
        return np.asarray(self.prototype_center, dtype=np.float64) + self.prototype_radius * ring


def benchmark(name: str) -> SyntheticSpec:
    """Named reference datasets.

    ``blobs2x1``: two source domains rotated by 0 and 60 degrees, one
    target domain at 30 degrees.  ``blobs2x1_close`` moves the second source
    domain to 10 degrees, where the two sources nearly overlap.
    """
    common = dict(num_classes=3, feature_dim=16, target_domains=[DomainTransform(30.0)],
                  n_source=2000, n_target=2000, n_test=1000, seed=7,
                  prototype_center=(5.0, 0.0), prototype_radius=1.5,
                  noise_std=0.3, nuisance_std=0.3)
    if name == "blobs2x1":
        return SyntheticSpec(name=name, source_domains=[DomainTransform(0.0), DomainTransform(60.0)],
                             **common)
    if name == "blobs2x1_close":
        return SyntheticSpec(name=name, source_domains=[DomainTransform(0.0), DomainTransform(10.0)],
                             **common)
    raise ConfigError(f"unknown benchmark {name!r}")


@dataclass
class Split:
    """Column-oriented samples of one split.

    ``labels`` is -1 where no class label exists (unlabeled target data);
    ``domains`` is the ground-truth domain (evaluation only), -1 if unknown;
    ``known`` is the revealed domain label used for supervision, -1 if hidden.
    """

    features: np.ndarray
    labels: np.ndarray
    domains: np.ndarray
    known: np.ndarray

    def __len__(self):
        return self.features.shape[0]

    @classmethod
    def empty(cls, dim: int) -> "Split":
        return cls(np.zeros((0, dim)), *(np.zeros(0, dtype=np.int64) for _ in range(3)))


@dataclass
class Sample:
    features: list
    label: Optional[int]
    split: str
    domain: Optional[int] = None
    known_domain: Optional[int] = None

    def __post_init__(self):
        if self.split not in SPLITS:
            raise FormatError(f"unknown split {self.split!r}")
        if self.split == "source" and self.label is None:
            raise FormatError("source samples need a label")
        if self.split == "target" and self.label is not None:
            raise FormatError("target training samples carry no label")
        if self.known_domain is not None and self.known_domain != self.domain:
            raise FormatError("known_domain must equal domain")


@dataclass
class Dataset:
    splits: dict
    num_classes: int
    name: str = ""

    @property
    def feature_dim(self) -> int:
        return self.splits["source"].features.shape[1]

    def __getitem__(self, split: str) -> Split:
        return self.splits[split]

    def records(self) -> Iterator[Sample]:
        for name in SPLITS:
            s = self.splits[name]
            for i in range(len(s)):
                yield Sample(
                    features=s.features[i].tolist(),
                    label=None if s.labels[i] < 0 else int(s.labels[i]),
                    split=name,
                    domain=None if s.domains[i] < 0 else int(s.domains[i]),
                    known_domain=None if s.known[i] < 0 else int(s.known[i]),
                )

    def summary(self) -> dict:
        out = {}
        for name in SPLITS:
            s = self.splits[name]
            doms, counts = np.unique(s.domains, return_counts=True)
            out[name] = {"count": len(s),
                         "per_domain": {int(d): int(c) for d, c in zip(doms, counts)},
                         "known": int((s.known >= 0).sum())}
        return out


def reveal_domains(split: Split, frac: float, seed: int) -> Split:
    """Reveal the true domain for a uniformly chosen ``frac`` share of samples."""
    if not 0.0 <= frac <= 1.0:
        raise ConfigError("domain label fraction must lie in [0, 1]")
    n = len(split)
    count = int(round(frac * n))
    known = np.full(n, -1, dtype=np.int64)
    if count:
        if np.any(split.domains < 0):
            raise ConfigError("cannot reveal domains: ground truth missing")
        idx = np.random.default_rng(seed).choice(n, size=count, replace=False)
        known[idx] = split.domains[idx]
    return Split(split.features, split.labels, split.domains, known)


def generate(spec: SyntheticSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    protos = spec.prototypes()
    extra = spec.feature_dim - 2

    def draw(n, transforms, mix, labelled):
        doms = rng.choice(len(transforms), size=n, p=mix)
        classes = rng.integers(0, spec.num_classes, size=n)
        pts = protos[classes] + spec.noise_std * rng.standard_normal((n, 2))
        for d, tf in enumerate(transforms):
            sel = doms == d
            pts[sel] = tf.apply(pts[sel])
        noise = spec.nuisance_std * rng.standard_normal((n, extra))
        feats = np.concatenate([pts, noise], axis=1)
        labels = classes if labelled else np.full(n, -1)
        return Split(feats, labels.astype(np.int64), doms.astype(np.int64),
                     np.full(n, -1, dtype=np.int64))

    splits = {
        "source": draw(spec.n_source, spec.source_domains, spec.source_mix, True),
        "target": draw(spec.n_target, spec.target_domains, spec.target_mix, False),
        "test": draw(spec.n_test, spec.target_domains, spec.target_mix, True),
    }
    if spec.domain_label_frac > 0:
        splits["source"] = reveal_domains(splits["source"], spec.domain_label_frac, spec.seed)
    return Dataset(splits, spec.num_classes, spec.name)


# dataset files ---------------------------------------------------------------

def save_jsonl(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for rec in dataset.records():
            f.write(json.dumps(asdict(rec)) + "\n")


def load_jsonl(path, num_classes: Optional[int] = None) -> Dataset:
    rows = {name: [] for name in SPLITS}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = Sample(**json.loads(line))
            except (json.JSONDecodeError, TypeError) as e:
                raise FormatError(f"{path}:{lineno}: {e}") from None
            rows[rec.split].append(rec)
    if not rows["source"] or not rows["target"]:
        raise FormatError(f"{path}: dataset needs source and target samples")
    dim = len(rows["source"][0].features)

    def to_split(recs):
        if not recs:
            return Split.empty(dim)
        feats = np.array([r.features for r in recs], dtype=np.float64)
        if feats.ndim != 2 or feats.shape[1] != dim:
            raise FormatError(f"{path}: inconsistent feature dimensions")

        def col(vals):
            return np.array([-1 if v is None else v for v in vals], dtype=np.int64)

        return Split(feats, col(r.label for r in recs), col(r.domain for r in recs),
                     col(r.known_domain for r in recs))

    splits = {name: to_split(recs) for name, recs in rows.items()}
    if num_classes is None:
        labelled = np.concatenate([splits["source"].labels, splits["test"].labels])
        num_classes = int(labelled.max()) + 1
    return Dataset(splits, num_classes, Path(path).stem)


# IDX -------------------------------------------------------------------------

def load_idx(path) -> np.ndarray:
    """Parse an IDX file of unsigned bytes.

    Image files (magic 0x00000803) are returned as float64 scaled to [0, 1]
    with shape (count, rows, cols); label files (0x00000801) as int64.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic == IDX_IMAGES_MAGIC:
        ndim = 3
    elif magic == IDX_LABELS_MAGIC:
        ndim = 1
    else:
        raise FormatError(f"{path}: bad magic 0x{magic:08x}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated header")
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    size = int(np.prod(dims))
    payload = raw[header:]
    if len(payload) < size:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, expected {size}")
    arr = np.frombuffer(payload, dtype=np.uint8, count=size).reshape(dims)
    if magic == IDX_IMAGES_MAGIC:
        return arr.astype(np.float64) / 255.0
    return arr.astype(np.int64)


def load_idx_pair(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    images = load_idx(images_path)
    labels = load_idx(labels_path)
    if images.ndim != 3 or labels.ndim != 1:
        raise FormatError("expected an image file and a label file")
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    return images, labels


def write_idx(path, array: np.ndarray) -> None:
    """Write uint8 data as IDX (rank 1 labels or rank 3 images)."""
    array = np.asarray(array, dtype=np.uint8)
    magic = {1: IDX_LABELS_MAGIC, 3: IDX_IMAGES_MAGIC}.get(array.ndim)
    if magic is None:
        raise FormatError("IDX writer supports rank 1 or rank 3 arrays")
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        f.write(struct.pack(">" + "I" * array.ndim, *array.shape))
        f.write(array.tobytes())


# batching ----------------------------------------------------------------------

@dataclass
class Batch:
    source_x: np.ndarray
    source_y: np.ndarray
    source_known: np.ndarray
    target_x: np.ndarray
    source_idx: np.ndarray
    target_idx: np.ndarray

    @property
    def n_source(self) -> int:
        return self.source_x.shape[0]

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.source_x, self.target_x], axis=0)


class _Epochs:
    """Endless index stream: a fresh permutation each time the pool is exhausted."""

    def __init__(self, n: int, rng: np.random.Generator):
        if n < 1:
            raise ConfigError("cannot sample from an empty split")
        self.n, self.rng = n, rng
        self.order = rng.permutation(n)
        self.pos = 0

    def take(self, k: int) -> np.ndarray:
        out = []
        while k > 0:
            if self.pos == self.n:
                self.order = self.rng.permutation(self.n)
                self.pos = 0
            chunk = self.order[self.pos:self.pos + k]
            self.pos += len(chunk)
            k -= len(chunk)
            out.append(chunk)
        return np.concatenate(out)


class BatchSampler:
    """Half source, half target per batch, without replacement within an epoch.

    Source samples come from the pooled source set; latent domains play no
    part in sampling unless ``stratify`` is set (known-domain upper bound).
    """

    def __init__(self, dataset: Dataset, batch_size: int, rng: np.random.Generator,
                 stratify: bool = False):
        if batch_size < 2 or batch_size % 2:
            raise ConfigError("batch_size must be even and >= 2")
        self.dataset = dataset
        self.half = batch_size // 2
        src = dataset["source"]
        self.stratify = stratify
        if stratify:
            doms = np.unique(src.domains)
            self._groups = [np.flatnonzero(src.domains == d) for d in doms]
            self._src = [_Epochs(len(g), rng) for g in self._groups]
        else:
            self._src = _Epochs(len(src), rng)
        self._tgt = _Epochs(len(dataset["target"]), rng)

    def _source_indices(self) -> np.ndarray:
        if not self.stratify:
            return self._src.take(self.half)
        k = len(self._groups)
        sizes = [self.half // k + (1 if i < self.half % k else 0) for i in range(k)]
        return np.concatenate([g[e.take(s)] for g, e, s in zip(self._groups, self._src, sizes)])

    def next_batch(self) -> Batch:
        si = self._source_indices()
        ti = self._tgt.take(self.half)
        src, tgt = self.dataset["source"], self.dataset["target"]
        return Batch(src.features[si], src.labels[si], src.known[si], tgt.features[ti], si, ti)


def next_batch(sampler: BatchSampler) -> Batch:
    return sampler.next_batch()
