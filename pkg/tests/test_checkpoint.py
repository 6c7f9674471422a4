import numpy as np
import pytest

from provnet.engine.adam import AdamHyper, AdamState
from provnet.engine.checkpoint import load_checkpoint, save_checkpoint
from provnet.errors import DataError


def test_round_trip_bit_exact(tmp_path, rng):
    params = {
        "block1.conv1.weight": rng.standard_normal((4, 1, 3, 3)).astype(np.float32),
        "block1.bn1.gamma": np.ones(4, dtype=np.float32),
        "head.out.bias": rng.standard_normal(2).astype(np.float32),
    }
    meta = {"seed": 7, "epoch": 3, "fingerprint": "abc"}
    adam = AdamState.init(params, AdamHyper(lr=1e-4, weight_decay=5e-5))
    adam.step_count = 42
    adam.first_moment["head.out.bias"][:] = 0.25

    path = tmp_path / "model.ckpt"
    save_checkpoint(path, params, meta, adam=adam)
    loaded_params, loaded_meta, loaded_adam = load_checkpoint(path)

    assert loaded_meta == meta
    assert set(loaded_params) == set(params)
    for name in params:
        assert loaded_params[name].tobytes() == params[name].tobytes()
    assert loaded_adam.step_count == 42
    assert loaded_adam.hyper == adam.hyper
    for name in params:
        assert loaded_adam.first_moment[name].tobytes() == adam.first_moment[name].tobytes()


def test_save_is_deterministic(tmp_path, rng):
    params = {"w": rng.standard_normal(16).astype(np.float32)}
    a = tmp_path / "a.ckpt"
    b = tmp_path / "b.ckpt"
    save_checkpoint(a, params, {"seed": 1})
    save_checkpoint(b, params, {"seed": 1})
    assert a.read_bytes() == b.read_bytes()


def test_magic_bytes(tmp_path):
    path = tmp_path / "x.ckpt"
    save_checkpoint(path, {"w": np.zeros(2, dtype=np.float32)}, {})
    assert path.read_bytes()[:8] == b"PNETCKPT"


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTACKPT" + b"\x00" * 32)
    with pytest.raises(DataError):
        load_checkpoint(path)


def test_no_adam_state(tmp_path):
    path = tmp_path / "p.ckpt"
    save_checkpoint(path, {"w": np.ones(3, dtype=np.float32)}, {"k": 1})
    _, _, adam = load_checkpoint(path)
    assert adam is None
