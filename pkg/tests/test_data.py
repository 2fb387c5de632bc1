import json
import math
import struct

import numpy as np
import pytest

from latentda.data import (BatchSampler, DomainTransform, Sample, SyntheticSpec, benchmark,
                           generate, load_idx, load_idx_pair, load_jsonl, reveal_domains,
                           save_jsonl, write_idx)
from latentda.errors import ConfigError, FormatError


def idx_bytes(magic, dims, payload):
    return struct.pack(">I", magic) + struct.pack(">" + "I" * len(dims), *dims) + bytes(payload)


class TestIdx:
    def test_images_scaled(self, tmp_path):
        p = tmp_path / "img.idx"
        p.write_bytes(idx_bytes(0x803, (2, 2, 3), range(0, 240, 20)))
        arr = load_idx(p)
        assert arr.shape == (2, 2, 3)
        assert arr[0, 0, 1] == pytest.approx(20 / 255)
        assert arr[1, 1, 2] == pytest.approx(220 / 255)

    def test_labels(self, tmp_path):
        p = tmp_path / "lab.idx"
        p.write_bytes(idx_bytes(0x801, (4,), [3, 1, 4, 1]))
        assert load_idx(p).tolist() == [3, 1, 4, 1]

    def test_truncated_payload(self, tmp_path):
        p = tmp_path / "img.idx"
        p.write_bytes(idx_bytes(0x803, (2, 2, 2), range(7)))
        with pytest.raises(FormatError):
            load_idx(p)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.idx"
        p.write_bytes(idx_bytes(0x802, (1,), [0]))
        with pytest.raises(FormatError):
            load_idx(p)

    def test_pair_count_mismatch(self, tmp_path):
        write_idx(tmp_path / "i", np.zeros((3, 2, 2)))
        write_idx(tmp_path / "l", np.zeros(2))
        with pytest.raises(FormatError):
            load_idx_pair(tmp_path / "i", tmp_path / "l")

    def test_writer_round_trip(self, tmp_path, rng):
        imgs = rng.integers(0, 256, (4, 3, 5))
        write_idx(tmp_path / "i", imgs)
        write_idx(tmp_path / "l", np.arange(4))
        got_i, got_l = load_idx_pair(tmp_path / "i", tmp_path / "l")
        np.testing.assert_array_equal(np.rint(got_i * 255), imgs)
        assert got_l.tolist() == [0, 1, 2, 3]


class TestTransforms:
    def test_half_turn_is_point_reflection(self, rng):
        pts = rng.normal(size=(10, 2))
        np.testing.assert_allclose(DomainTransform(180.0).apply(pts), -pts, atol=1e-12)

    def test_quarter_turn(self):
        np.testing.assert_allclose(DomainTransform(90.0).apply(np.array([[1.0, 0.0]])), [[0.0, 1.0]],
                                   atol=1e-15)

    def test_scale_and_translation(self):
        tf = DomainTransform(0.0, translation=(1.0, -1.0), scale=2.0)
        assert tf.apply(np.array([[1.0, 1.0]])).tolist() == [[3.0, 1.0]]


class TestGenerate:
    def test_declared_counts(self, tiny_spec):
        ds = generate(tiny_spec)
        assert [len(ds[s]) for s in ("source", "target", "test")] == [120, 120, 60]
        assert ds.feature_dim == 5

    def test_mixing_proportions_within_three_sigma(self):
        spec = SyntheticSpec(source_domains=[DomainTransform(0), DomainTransform(60)],
                             source_mix=[0.3, 0.7], n_source=4000, n_target=10, n_test=0, seed=2)
        ds = generate(spec)
        n = 4000
        count = int(np.sum(ds["source"].domains == 0))
        assert abs(count - 0.3 * n) <= 3 * math.sqrt(n * 0.3 * 0.7)

    def test_degenerate_mix(self):
        spec = SyntheticSpec(source_domains=[DomainTransform(0), DomainTransform(60)],
                             source_mix=[1.0, 0.0], n_source=200, n_target=10, n_test=0)
        assert np.all(generate(spec)["source"].domains == 0)

    def test_bad_mix(self):
        with pytest.raises(ConfigError):
            SyntheticSpec(source_mix=[0.5, 0.6], source_domains=[DomainTransform(), DomainTransform()])

    def test_same_seed_same_bytes(self, tmp_path, tiny_spec):
        save_jsonl(generate(tiny_spec), tmp_path / "a.jsonl")
        save_jsonl(generate(tiny_spec), tmp_path / "b.jsonl")
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_jsonl_round_trip(self, tmp_path, tiny_dataset):
        save_jsonl(tiny_dataset, tmp_path / "d.jsonl")
        back = load_jsonl(tmp_path / "d.jsonl")
        for name in ("source", "target", "test"):
            for attr in ("features", "labels", "domains", "known"):
                np.testing.assert_array_equal(getattr(back[name], attr), getattr(tiny_dataset[name], attr))
        assert back.num_classes == tiny_dataset.num_classes

    def test_benchmarks(self):
        spec = benchmark("blobs2x1")
        assert [d.rotation for d in spec.source_domains] == [0.0, 60.0]
        assert [d.rotation for d in spec.target_domains] == [30.0]
        assert (spec.num_classes, spec.feature_dim, spec.seed) == (3, 16, 7)
        assert (spec.n_source, spec.n_target, spec.n_test) == (2000, 2000, 1000)
        assert [d.rotation for d in benchmark("blobs2x1_close").source_domains] == [0.0, 10.0]
        with pytest.raises(ConfigError):
            benchmark("nope")


class TestLabelHygiene:
    """Unlabeled target data must never carry class labels into training."""

    def test_target_split_unlabeled(self, tiny_dataset, tmp_path):
        assert np.all(tiny_dataset["target"].labels == -1)
        save_jsonl(tiny_dataset, tmp_path / "d.jsonl")
        for line in (tmp_path / "d.jsonl").read_text().splitlines():
            rec = json.loads(line)
            if rec["split"] == "target":
                assert rec["label"] is None

    def test_labeled_target_record_rejected(self):
        with pytest.raises(FormatError):
            Sample(features=[0.0], label=1, split="target")

    def test_sampler_batches_carry_no_target_labels(self, tiny_dataset, rng):
        batch = BatchSampler(tiny_dataset, 8, rng).next_batch()
        assert not hasattr(batch, "target_y")

    def test_known_domain_must_match(self):
        with pytest.raises(FormatError):
            Sample(features=[0.0], label=0, split="source", domain=0, known_domain=1)


class TestReveal:
    def test_fraction_and_consistency(self, tiny_dataset):
        src = reveal_domains(tiny_dataset["source"], 0.25, seed=0)
        revealed = src.known >= 0
        assert revealed.sum() == 30
        np.testing.assert_array_equal(src.known[revealed], src.domains[revealed])

    def test_nested_by_seed(self, tiny_dataset):
        a = reveal_domains(tiny_dataset["source"], 0.5, seed=1).known
        b = reveal_domains(tiny_dataset["source"], 0.5, seed=1).known
        np.testing.assert_array_equal(a, b)

    def test_bounds(self, tiny_dataset):
        with pytest.raises(ConfigError):
            reveal_domains(tiny_dataset["source"], 1.5, seed=0)


class TestSampler:
    def test_epoch_without_replacement(self, tiny_dataset, rng):
        sampler = BatchSampler(tiny_dataset, 24, rng)
        seen = np.concatenate([sampler.next_batch().source_idx for _ in range(10)])
        assert sorted(seen.tolist()) == list(range(120))

    def test_half_and_half(self, tiny_dataset, rng):
        b = BatchSampler(tiny_dataset, 10, rng).next_batch()
        assert b.n_source == 5 and b.target_x.shape[0] == 5
        assert b.stacked().shape == (10, 5)

    def test_stratified(self, tiny_dataset, rng):
        b = BatchSampler(tiny_dataset, 16, rng, stratify=True).next_batch()
        doms = tiny_dataset["source"].domains[b.source_idx]
        assert np.bincount(doms).tolist() == [4, 4]

    def test_odd_batch(self, tiny_dataset, rng):
        with pytest.raises(ConfigError):
            BatchSampler(tiny_dataset, 7, rng)
