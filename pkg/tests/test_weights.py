import struct

import numpy as np
import pytest

from mllm_redux.config import ModelConfig
from mllm_redux.errors import WeightsFormatError
from mllm_redux.weights import MAGIC, dumps, init_weights, load_weights, loads, save_weights

CFG = ModelConfig(d_model=8, n_heads=2, d_ff=8, vit_depth=2, llm_depth=2, n_patches=4, vocab_size=10,
                  max_text_len=4, patch_dim=3, d_llm=8, prompt_len=1, generate_steps=1)


def same(a, b):
    ta, tb = a.tensors(), b.tensors()
    return list(ta) == list(tb) and all(np.array_equal(ta[k], tb[k]) for k in ta)


def test_round_trip(tmp_path):
    w = init_weights(CFG)
    save_weights(w, tmp_path / "w.bin")
    back = load_weights(tmp_path / "w.bin")
    assert same(w, back)
    back.check(CFG)
    assert dumps(back) == dumps(w)


def test_round_trip_random_values():
    w = init_weights(CFG)
    rng = np.random.default_rng(0)
    for arr in w.tensors().values():
        if arr.ndim:
            arr[...] = rng.normal(size=arr.shape) * 1e10
    assert same(loads(dumps(w)), w)


def test_same_seed_same_weights():
    assert same(init_weights(CFG), init_weights(CFG))
    assert not same(init_weights(CFG), init_weights(CFG.with_seed(1)))


def test_init_conventions():
    w = init_weights(CFG)
    b = w.encoder[0]
    assert np.all(b.ln1_scale == 1.0) and np.all(b.ln1_shift == 0.0) and np.all(w.proj_b1 == 0.0)
    assert w.dec_pos.shape == (4 + 4, 8)


def test_header_layout():
    data = dumps(init_weights(CFG))
    assert data[:4] == MAGIC
    version, count = struct.unpack("<II", data[4:12])
    assert version == 1 and count == len(init_weights(CFG).tensors())
    (name_len,) = struct.unpack("<I", data[12:16])
    assert data[16:16 + name_len] == b"meta.encoder_heads"


@pytest.mark.parametrize("cut", [2, 10, 30, -1])
def test_truncated(cut):
    data = dumps(init_weights(CFG))
    with pytest.raises(WeightsFormatError) as err:
        loads(data[:cut])
    assert 0 <= err.value.offset <= len(data)


def test_bad_magic():
    data = b"XXXX" + dumps(init_weights(CFG))[4:]
    with pytest.raises(WeightsFormatError) as err:
        loads(data)
    assert err.value.offset == 0


def test_trailing_bytes():
    data = dumps(init_weights(CFG)) + b"\0"
    with pytest.raises(WeightsFormatError) as err:
        loads(data)
    assert err.value.offset == len(data) - 1


def test_missing_tensor():
    data = MAGIC + struct.pack("<II", 1, 0)
    with pytest.raises(WeightsFormatError):
        loads(data)


def test_shape_check_against_config():
    with pytest.raises(ValueError):
        init_weights(CFG).check(ModelConfig())
