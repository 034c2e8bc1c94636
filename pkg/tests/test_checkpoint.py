import numpy as np
import pytest

from gbrs.checkpoint import load_checkpoint, load_checkpoint_bytes, save_checkpoint
from gbrs.errors import LoadError
from gbrs.networks import build_network


def test_roundtrip_bitwise(tmp_path):
    net = build_network("matting", seed=5)
    path = str(tmp_path / "m.gbrs")
    save_checkpoint(path, net)
    loaded = load_checkpoint(path)
    assert loaded.spec == net.spec
    assert set(loaded.params) == set(net.params)
    for name in net.params:
        assert loaded.params[name].data.tobytes() == net.params[name].data.tobytes()
    assert loaded.weights_hash() == net.weights_hash()


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.gbrs"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(LoadError):
        load_checkpoint(str(path))


def test_truncated(tmp_path):
    net = build_network("depth", seed=1)
    path = str(tmp_path / "d.gbrs")
    save_checkpoint(path, net)
    data = open(path, "rb").read()
    with pytest.raises(LoadError):
        load_checkpoint_bytes(data[: len(data) // 2])


def test_loaded_network_runs_identically(tmp_path):
    from gbrs.tensor import Tensor

    net = build_network("semantic_seg", seed=3)
    path = str(tmp_path / "s.gbrs")
    save_checkpoint(path, net)
    loaded = load_checkpoint(path)
    x = np.random.default_rng(0).uniform(size=(1, 3, 32, 32))
    a = net.forward(Tensor(x)).data
    b = loaded.forward(Tensor(x)).data
    assert np.array_equal(a, b)
