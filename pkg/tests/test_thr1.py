import numpy as np
import pytest

from thor import thr1
from thor.rng import Rng


def test_header_arithmetic_2x3_f64(tmp_path):
    path = tmp_path / "t.thr1"
    thr1.write_tensor(path, np.zeros((2, 3)))
    # 4 magic + 1 dtype + 1 rank + 6 reserved + 2*8 dims + 6*8 payload
    assert path.stat().st_size == 76


def test_round_trip_bit_identical(tmp_path):
    rng = Rng(9)
    for shape in [(5,), (2, 3), (4, 1, 7), ()]:
        arr = np.asarray(rng.normal(shape))
        path = tmp_path / "x.thr1"
        thr1.write_tensor(path, arr)
        back = thr1.read_tensor(path)
        assert back.dtype == np.float64
        assert back.shape == arr.shape
        assert arr.tobytes() == back.tobytes()


def test_f32_round_trip(tmp_path):
    arr = np.arange(12, dtype=np.float32).reshape(3, 4)
    path = tmp_path / "x.thr1"
    thr1.write_tensor(path, arr)
    back = thr1.read_tensor(path)
    assert back.dtype == np.float32
    assert np.array_equal(arr, back)


def test_wrong_magic_rejected(tmp_path):
    path = tmp_path / "bad.thr1"
    path.write_bytes(b"NOPE" + bytes(72))
    with pytest.raises(thr1.FormatError):
        thr1.read_tensor(path)


def test_truncated_payload_rejected(tmp_path):
    path = tmp_path / "t.thr1"
    thr1.write_tensor(path, np.zeros((2, 3)))
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(thr1.FormatError):
        thr1.read_tensor(path)


def test_rank_limit(tmp_path):
    with pytest.raises(thr1.FormatError):
        thr1.write_tensor(tmp_path / "r.thr1", np.zeros((1,) * 9))


def test_checkpoint_round_trip(tmp_path):
    rng = Rng(4)
    named = {"layer0/weight": np.asarray(rng.normal((3, 2))),
             "layer0/bias": np.asarray(rng.normal((2,)))}
    manifest = thr1.save_checkpoint(tmp_path / "ckpt", named, extra={"config": {"d_model": 8}})
    arrays, loaded = thr1.load_checkpoint(tmp_path / "ckpt")
    assert set(arrays) == set(named)
    for k in named:
        assert np.array_equal(arrays[k], named[k])
    assert loaded["config"]["d_model"] == 8
    assert loaded["content_hash"] == manifest["content_hash"]
