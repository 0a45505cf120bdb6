import numpy as np
import pytest

from modalbridge import checkpoint as ckpt
from modalbridge.numerics import Tensor


def test_round_trip_bitwise(tmp_path):
    tensors = {
        "a.0": Tensor(np.arange(6, dtype=np.float32).reshape(2, 3)),
        "b.1": Tensor(np.float32([1.5])),
    }
    path = tmp_path / "c.ckpt"
    ckpt.save(path, ckpt.TAG_LM, tensors, config_hash="abc123")
    tag, loaded, chash = ckpt.load(path)
    assert tag == ckpt.TAG_LM
    assert chash == "abc123"
    assert loaded["a.0"].tobytes() == tensors["a.0"].data.tobytes()
    assert set(loaded) == {"a.0", "b.1"}


def test_save_is_deterministic(tmp_path):
    t = {"x": Tensor(np.ones((3, 3), dtype=np.float32))}
    p1, p2 = tmp_path / "1.ckpt", tmp_path / "2.ckpt"
    ckpt.save(p1, 1, t, "h")
    ckpt.save(p2, 1, t, "h")
    assert p1.read_bytes() == p2.read_bytes()


def test_tag_mismatch(tmp_path):
    path = tmp_path / "c.ckpt"
    ckpt.save(path, ckpt.TAG_LM, {"x": Tensor(np.zeros(2))})
    with pytest.raises(ckpt.CheckpointError, match="tag"):
        ckpt.load(path, expect_tag=ckpt.TAG_PROJECTOR)


def test_bad_magic(tmp_path):
    path = tmp_path / "c.ckpt"
    path.write_bytes(b"XXXX" + b"\x00" * 16)
    with pytest.raises(ckpt.CheckpointError, match="magic"):
        ckpt.load(path)


def test_restore_shape_checked(tmp_path):
    path = tmp_path / "c.ckpt"
    ckpt.save(path, 1, {"w": Tensor(np.zeros((2, 2)))})
    _, tensors, _ = ckpt.load(path)
    with pytest.raises(ckpt.CheckpointError, match="shape"):
        ckpt.restore(tensors, {"w": Tensor(np.zeros((3, 2)))})
    with pytest.raises(ckpt.CheckpointError, match="missing"):
        ckpt.restore(tensors, {"other": Tensor(np.zeros((2, 2)))})


def test_restore_copies_values(tmp_path):
    path = tmp_path / "c.ckpt"
    src = Tensor(np.arange(4, dtype=np.float32).reshape(2, 2))
    ckpt.save(path, 1, {"w": src})
    _, tensors, _ = ckpt.load(path)
    dst = Tensor(np.zeros((2, 2)))
    ckpt.restore(tensors, {"w": dst})
    np.testing.assert_array_equal(dst.data, src.data)
