import numpy as np
import pytest

from brainof.arness import Arness, ArnessDecoder, decode, fuse, resample
from brainof.config import ModelConfig
from brainof.diagnostics import _perturb_scales, check_module
from brainof.encoder import BrainSignalEncoder, encode
from brainof.errors import DimensionError, InputError
from brainof.model import BrainOF
from brainof.signal import Signal, patchify, unpatchify


def test_encode_shape_and_zero_padding_rows():
    rng = np.random.default_rng(0)
    enc = BrainSignalEncoder(16, 32, (4, 4, 4), rng)
    patches = rng.normal(size=(16, 16))
    valid = np.arange(16) < 9
    patches[9:] = 0
    out = encode(patches, valid, enc).data
    assert out.shape == (16, 32)
    assert np.all(out[9:] == 0.0)
    assert np.any(out[:9] != 0.0)


def test_encode_zero_patch_is_zero():
    enc = BrainSignalEncoder(8, 8, rng=np.random.default_rng(1))
    out = encode(np.zeros((2, 8)), np.ones(2, dtype=bool), enc).data
    np.testing.assert_array_equal(out, 0.0)


def test_encode_patch_length_mismatch():
    enc = BrainSignalEncoder(8, 8, rng=np.random.default_rng(1))
    with pytest.raises(DimensionError):
        encode(np.zeros((2, 7)), np.ones(2, dtype=bool), enc)


def test_encode_gradcheck():
    rng = np.random.default_rng(2)
    enc = BrainSignalEncoder(8, 6, (2, 3, 2), rng)
    report = check_module(enc, lambda p: encode(p, np.array([1, 1, 0], bool), enc), extra={"p": rng.normal(size=(3, 8))})
    assert report.worst < 1e-4


def _arness(seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    res = Arness(32, 16, 2, n_layers=1, rng=rng)
    _perturb_scales(res, rng)
    return res, rng


@pytest.mark.parametrize("length", [1, 9, 100, 256])
def test_resample_output_shape_is_fixed(length):
    res, rng = _arness()
    x = rng.normal(size=(length, 32))
    assert resample(x, np.ones(length, bool), res.latents, res).shape == (16, 32)


def test_resample_empty_and_fully_masked_inputs_agree():
    res, rng = _arness(1)
    empty = resample(np.zeros((0, 32)), np.zeros(0, bool), res.latents, res).data
    masked = resample(rng.normal(size=(7, 32)), np.zeros(7, bool), res.latents, res).data
    assert empty.shape == (16, 32)
    np.testing.assert_allclose(empty, masked, atol=1e-6)


def test_masked_keys_do_not_leak():
    res, rng = _arness(2)
    x = rng.normal(size=(20, 32))
    mask = np.arange(20) < 9
    a = resample(x, mask, res.latents, res).data
    x2 = x.copy()
    x2[9:] = rng.normal(scale=100.0, size=(11, 32))
    b = resample(x2, mask, res.latents, res).data
    assert np.max(np.abs(a - b)) < 1e-6


def test_fuse_base_case_order_and_errors():
    res, rng = _arness(3)
    a = (rng.normal(size=(5, 32)), np.ones(5, bool))
    b = (rng.normal(size=(9, 32)), np.ones(9, bool))
    np.testing.assert_array_equal(fuse([a], res).data, resample(*a, res.latents, res).data)
    ab, ba = fuse([a, b], res).data, fuse([b, a], res).data
    assert ab.shape == ba.shape == (16, 32)
    assert not np.allclose(ab, ba)
    for k in (1, 2, 3):
        np.testing.assert_array_equal(fuse([a] * k, res).data, fuse([a] * k, res).data)
    with pytest.raises(InputError):
        fuse([], res)


def test_decode_shapes_and_padding_rows():
    rng = np.random.default_rng(4)
    dec = ArnessDecoder(32, 16, 32, 2, rng)
    valid = np.arange(32) < 20
    for c in (1, 4, 16):
        out = decode(rng.normal(size=(c, 32)), valid, dec).data
        assert out.shape == (32, 16)
        assert np.all(out[20:] == 0)


def test_decode_unpatchify_shape():
    rng = np.random.default_rng(5)
    ts = patchify(Signal("EEG", rng.normal(size=(3, 37))), 8, 32)
    dec = ArnessDecoder(16, 8, 32, 2, rng)
    out = decode(rng.normal(size=(4, 16)), ts.valid, dec).data
    assert unpatchify(out, ts.layout).shape == (3, 37)


def test_arness_and_decoder_gradcheck():
    res, rng = _arness(6)
    small = Arness(8, 3, 2, n_layers=2, rng=rng)
    _perturb_scales(small, rng)
    mask = np.array([True, True, False, True])
    rep = check_module(small, lambda x: fuse([(x, mask)], small), extra={"x": rng.normal(size=(4, 8))}, max_entries=5)
    assert rep.worst < 1e-4
    dec = ArnessDecoder(8, 4, 5, 2, rng)
    rep = check_module(dec, lambda z: decode(z, np.ones(5, bool), dec), extra={"z": rng.normal(size=(3, 8))}, max_entries=5)
    assert rep.worst < 1e-4


def test_padding_content_never_reaches_model_outputs():
    cfg = ModelConfig(d_model=16, n_latents=4, n_heads=2, patch_len=8, max_seq_len=32)
    model = BrainOF(cfg, seed=0)
    for _, p in model.named_parameters():
        if p.data.ndim == 1 and np.allclose(p.data, 1e-4):
            p.data = np.full_like(p.data, 0.7)
    rng = np.random.default_rng(7)
    ts = patchify(Signal("EEG", rng.normal(size=(2, 40))), 8, 32)
    patches = ts.patches[None]
    noisy = patches.copy()
    noisy[0, ~ts.valid] = rng.normal(scale=50.0, size=((~ts.valid).sum(), 8))
    valid = ts.valid[None]
    za = model.latents([(patches, valid)], track_load=False)
    zb = model.latents([(noisy, valid)], track_load=False)
    assert np.max(np.abs(za.data - zb.data)) < 1e-6
    ra, rb = model.reconstruct(za, valid).data, model.reconstruct(zb, valid).data
    assert np.max(np.abs(ra - rb)) < 1e-6
