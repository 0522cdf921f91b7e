from __future__ import annotations

import numpy as np
import pytest

from imac import checkpoint
from imac.checkpoint import CheckpointError


def test_roundtrip(tmp_path):
    arrays = [np.arange(6.0).reshape(2, 3), np.array([np.pi])]
    checkpoint.save(tmp_path / "m.ckpt", b"IMWM", {"obs_dim": 3}, arrays)
    meta, back = checkpoint.load(tmp_path / "m.ckpt", b"IMWM")
    assert meta == {"obs_dim": 3}
    for a, b in zip(arrays, back):
        np.testing.assert_array_equal(a, b)
    assert checkpoint.checksum(arrays) == checkpoint.checksum(back)


def test_bytes_are_deterministic():
    arrays = [np.ones((2, 2))]
    assert checkpoint.dumps(b"IMRT", {"a": 1}, arrays) == checkpoint.dumps(b"IMRT", {"a": 1}, arrays)


def test_wrong_magic_and_truncation(tmp_path):
    buf = checkpoint.dumps(b"IMWM", {}, [np.ones(3)])
    with pytest.raises(CheckpointError):
        checkpoint.loads(buf, b"IMRT")
    with pytest.raises(CheckpointError):
        checkpoint.loads(buf[:-4], b"IMWM")


def test_missing_file_is_named(tmp_path):
    with pytest.raises(FileNotFoundError, match="nope.ckpt"):
        checkpoint.load(tmp_path / "nope.ckpt", b"IMWM")
