import struct

import numpy as np
import pytest

from latentda.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from latentda.errors import FormatError


@pytest.fixture
def state(rng):
    return {"a.weight": rng.normal(size=(3, 4)), "a.bias": rng.normal(size=4),
            "norm.running_var": rng.uniform(size=(2, 5)), "x.scalarish": np.array([np.pi])}


class TestRoundTrip:
    def test_bit_exact(self, tmp_path, state):
        path = tmp_path / "m.mda"
        save_checkpoint(path, state, {"step": 7})
        loaded, meta = load_checkpoint(path)
        assert meta == {"step": 7}
        assert list(loaded) == list(state)
        for k in state:
            assert loaded[k].shape == state[k].shape
            assert loaded[k].tobytes() == state[k].tobytes()

    def test_layout(self, tmp_path):
        path = tmp_path / "m.mda"
        save_checkpoint(path, {"w": np.array([[1.5, -2.0]])}, {})
        raw = path.read_bytes()
        assert raw[:4] == MAGIC
        version, meta_len = struct.unpack("<II", raw[4:12])
        assert version == 1 and raw[12:12 + meta_len] == b"{}"
        pos = 12 + meta_len
        n, name_len = struct.unpack("<II", raw[pos:pos + 8])
        assert (n, raw[pos + 8:pos + 9]) == (1, b"w")
        rank, d0, d1 = struct.unpack("<III", raw[pos + 9:pos + 21])
        assert (rank, d0, d1) == (2, 1, 2)
        assert struct.unpack("<2d", raw[pos + 21:]) == (1.5, -2.0)


class TestCorruption:
    def test_bad_magic(self, tmp_path, state):
        path = tmp_path / "m.mda"
        save_checkpoint(path, state, {})
        path.write_bytes(b"XXXX" + path.read_bytes()[4:])
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_truncated(self, tmp_path, state):
        path = tmp_path / "m.mda"
        save_checkpoint(path, state, {})
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_trailing_bytes(self, tmp_path, state):
        path = tmp_path / "m.mda"
        save_checkpoint(path, state, {})
        path.write_bytes(path.read_bytes() + b"\0")
        with pytest.raises(FormatError):
            load_checkpoint(path)
