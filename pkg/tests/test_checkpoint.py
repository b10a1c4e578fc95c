"""Checkpoint format: bit-exact round trips and corruption diagnostics."""

import numpy as np
import pytest

from ented.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from ented.errors import CheckpointError

HASH = "ab" * 32


def _sample_arrays():
    rng = np.random.default_rng(0)
    return {
        "gen.w": rng.standard_normal((4, 3, 3, 3)),
        "gen.b": rng.standard_normal(4).astype(np.float32),
        "counts": np.arange(7, dtype=np.int64),
        "blob": np.frombuffer(b"hello config", dtype=np.uint8),
        "scalar": np.array(5, dtype=np.int64),
        "empty": np.zeros((0, 3)),
    }


def test_round_trip_preserves_everything(tmp_path):
    path = tmp_path / "a.entd"
    ckpt = Checkpoint(config_hash=HASH, seed=-3, iteration=1234, arrays=_sample_arrays())
    save_checkpoint(path, ckpt)
    back = load_checkpoint(path)
    assert back.config_hash == HASH
    assert back.seed == -3
    assert back.iteration == 1234
    assert back.version == 1
    assert set(back.arrays) == set(ckpt.arrays)
    for name, a in ckpt.arrays.items():
        got = back.arrays[name]
        assert got.shape == a.shape
        assert got.dtype == np.asarray(a).dtype
        np.testing.assert_array_equal(got, a)


def test_save_is_byte_deterministic(tmp_path):
    a, b = tmp_path / "a.entd", tmp_path / "b.entd"
    arrays = _sample_arrays()
    save_checkpoint(a, Checkpoint(config_hash=HASH, seed=1, iteration=9, arrays=arrays))
    # same contents inserted in reverse order must serialize identically
    reversed_arrays = dict(reversed(list(arrays.items())))
    save_checkpoint(b, Checkpoint(config_hash=HASH, seed=1, iteration=9, arrays=reversed_arrays))
    assert a.read_bytes() == b.read_bytes()


def test_save_load_save_round_trip_is_identity(tmp_path):
    a, b = tmp_path / "a.entd", tmp_path / "b.entd"
    save_checkpoint(a, Checkpoint(config_hash=HASH, seed=7, iteration=3, arrays=_sample_arrays()))
    save_checkpoint(b, load_checkpoint(a))
    assert a.read_bytes() == b.read_bytes()


def test_magic_header_bytes(tmp_path):
    path = tmp_path / "a.entd"
    save_checkpoint(path, Checkpoint(config_hash=HASH, seed=0, iteration=0, arrays={}))
    assert path.read_bytes()[:4] == b"ENTD"


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.entd"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_unsupported_version_rejected(tmp_path):
    path = tmp_path / "a.entd"
    save_checkpoint(path, Checkpoint(config_hash=HASH, seed=0, iteration=0, arrays={}))
    raw = bytearray(path.read_bytes())
    raw[4] = 99
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)


def test_truncation_rejected(tmp_path):
    path = tmp_path / "a.entd"
    save_checkpoint(path, Checkpoint(config_hash=HASH, seed=0, iteration=0,
                                     arrays={"w": np.ones((8, 8))}))
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 5])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_trailing_garbage_rejected(tmp_path):
    path = tmp_path / "a.entd"
    save_checkpoint(path, Checkpoint(config_hash=HASH, seed=0, iteration=0, arrays={}))
    path.write_bytes(path.read_bytes() + b"xx")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(path)


def test_unsupported_dtype_rejected(tmp_path):
    path = tmp_path / "a.entd"
    bad = Checkpoint(config_hash=HASH, seed=0, iteration=0,
                     arrays={"w": np.ones(3, dtype=np.int32)})
    with pytest.raises(CheckpointError, match="dtype"):
        save_checkpoint(path, bad)


def test_bad_hash_rejected(tmp_path):
    with pytest.raises(CheckpointError, match="hex"):
        save_checkpoint(tmp_path / "a.entd",
                        Checkpoint(config_hash="zz", seed=0, iteration=0, arrays={}))
