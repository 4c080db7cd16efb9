import numpy as np
import pytest

from snowflake import checkpoint
from snowflake.model import build_model


def test_round_trip_is_bit_exact(tmp_path):
    model = build_model("completion", n_c=8, n_0=8, dim_feat=8, dim_point=4, seed_width=4,
                        query_hidden=4, attention_hidden=4, encoder_widths=(4,), factors=(1, 2))
    path = tmp_path / "m.ckpt"
    checkpoint.save(path, model.state_dict())
    state = checkpoint.load(path)
    original = model.state_dict()
    assert list(state) == list(original)
    for name in original:
        assert state[name].tobytes() == original[name].tobytes()
        assert state[name].shape == original[name].shape
    assert checkpoint.dumps(state) == path.read_bytes()


def test_scalar_and_empty_tensors():
    params = {"s": np.array(1.5), "e": np.zeros((0, 3)), "m": np.arange(6.0).reshape(2, 3)}
    back = checkpoint.loads(checkpoint.dumps(params))
    assert back["s"].shape == () and back["s"] == 1.5
    assert back["e"].shape == (0, 3)
    np.testing.assert_array_equal(back["m"], params["m"])


def test_corrupt_checkpoints_are_rejected():
    blob = checkpoint.dumps({"w": np.ones(4)})
    with pytest.raises(checkpoint.CheckpointError, match="magic"):
        checkpoint.loads(b"XXXX" + blob[4:])
    with pytest.raises(checkpoint.CheckpointError, match="truncated"):
        checkpoint.loads(blob[:-3])


def test_load_state_dict_rejects_mismatch():
    model = build_model("autoencode", n_c=4, n_0=4, dim_feat=4, dim_point=4, seed_width=4,
                        query_hidden=4, attention_hidden=4, encoder_widths=(4,))
    state = model.state_dict()
    state.pop(next(iter(state)))
    with pytest.raises(checkpoint.CheckpointError):
        model.load_state_dict(state)
