import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brainof.diagnostics import check_module
from brainof.dint import DintAttention, DintSubBlock, dint_attention, dint_weights, lambda_init, lambda_value
from brainof.errors import InputError
from brainof.numerics import Tensor, rope_rotate, softmax_rows


def zero_lambdas(attn):
    for name in ("lambda_q1", "lambda_k1", "lambda_q2", "lambda_k2"):
        getattr(attn, name).data[...] = 0.0


def test_lambda_init_values():
    assert lambda_init(1) == 0.2
    assert lambda_init(200) == pytest.approx(0.8, abs=1e-12)
    assert lambda_init(3) == pytest.approx(0.8 - 0.6 * math.exp(-0.6), abs=1e-15)
    with pytest.raises(InputError):
        lambda_init(0)


def test_lambda_value_examples():
    attn = DintAttention(16, 2, 1, np.random.default_rng(0))
    zero_lambdas(attn)
    np.testing.assert_array_equal(lambda_value(attn).data, [0.2, 0.2])
    attn.lambda_q1.data[0, 0] = math.log(2)
    attn.lambda_k1.data[0, 0] = 1.0
    assert lambda_value(attn).data[0] == pytest.approx(1.2, abs=1e-12)


def test_lambda_value_is_finite_for_extreme_parameters():
    attn = DintAttention(16, 2, 1, np.random.default_rng(0))
    attn.lambda_q1.data[...] = 100.0
    attn.lambda_k1.data[...] = 100.0
    assert np.all(np.isfinite(lambda_value(attn).data))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(-2.0, 2.0), st.integers(1, 7))
def test_combined_rows_sum_to_one(seed, lam, c):
    rng = np.random.default_rng(seed)
    attn = DintAttention(16, 2, 1, rng)
    z = Tensor(rng.normal(size=(2, c, 16)))
    combined, _ = dint_weights(z, attn, lam=np.full(2, lam))
    np.testing.assert_allclose(combined.data.sum(axis=-1), 1.0, atol=1e-6)


def test_integral_term_is_column_mean_of_first_map():
    rng = np.random.default_rng(1)
    attn = DintAttention(16, 2, 1, rng)
    z = Tensor(rng.normal(size=(1, 5, 16)))
    a1, _ = dint_weights(z, attn, lam=np.zeros(2))
    lam = np.array([0.7, -1.3])
    mixed, _ = dint_weights(z, attn, lam=lam)
    lam2 = np.array([1.7, -0.3])
    mixed2, _ = dint_weights(z, attn, lam=lam2)
    # combined is affine in lambda: (c(l2) - c(l1)) / (l2 - l1) = G - A2
    slope = (mixed2.data - mixed.data) / (lam2 - lam).reshape(1, 2, 1, 1)
    g = a1.data.mean(axis=2, keepdims=True)
    a2 = g - slope
    np.testing.assert_allclose(a2.sum(-1), 1.0, atol=1e-12)
    assert np.all(a2 > 0)
    np.testing.assert_allclose(g.sum(-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(mixed.data, a1.data - lam.reshape(1, 2, 1, 1) * (a2 - g), atol=1e-12)


def test_lambda_zero_is_plain_softmax_attention():
    rng = np.random.default_rng(2)
    attn = DintAttention(8, 1, 1, rng)
    z = rng.normal(size=(3, 8))
    out = dint_attention(z, attn, lam=np.zeros(1)).data
    q, k, v = z @ attn.wq.data, z @ attn.wk.data, z @ attn.wv.data
    pos = np.arange(3)
    q1 = rope_rotate(Tensor(q[:, :4]), pos).data
    k1 = rope_rotate(Tensor(k[:, :4]), pos).data
    a1 = softmax_rows(Tensor(q1 @ k1.T / 2.0)).data
    np.testing.assert_allclose(out, (a1 @ v) @ attn.wo.data, atol=1e-12)


def test_single_token_returns_projected_value():
    rng = np.random.default_rng(3)
    attn = DintAttention(8, 2, 2, rng)
    z = rng.normal(size=(1, 8))
    out = dint_attention(z, attn).data
    np.testing.assert_allclose(out, (z @ attn.wv.data) @ attn.wo.data, atol=1e-12)


def test_zero_layer_scale_gives_identity_block():
    rng = np.random.default_rng(4)
    blk = DintSubBlock(8, 2, 1, rng=rng)
    blk.layer_scale.data[...] = 0.0
    z = rng.normal(size=(2, 4, 8))
    np.testing.assert_array_equal(blk(Tensor(z)).data, z)


def test_head_width_must_split_into_even_halves():
    with pytest.raises(InputError):
        DintAttention(12, 2, 1)


def test_rope_relative_shift_invariance():
    rng = np.random.default_rng(5)
    for _ in range(20):
        q, k = rng.normal(size=(1, 8)), rng.normal(size=(1, 8))
        p, p2, s = rng.integers(0, 50, size=3)
        base = (rope_rotate(Tensor(q), [p]).data @ rope_rotate(Tensor(k), [p2]).data.T).item()
        shifted = (rope_rotate(Tensor(q), [p + s]).data @ rope_rotate(Tensor(k), [p2 + s]).data.T).item()
        assert abs(base - shifted) < 1e-5


def test_dint_block_gradcheck():
    rng = np.random.default_rng(6)
    blk = DintSubBlock(8, 2, 2, layer_scale=0.5, rng=rng)
    rep = check_module(blk, lambda z: blk(z), extra={"z": rng.normal(size=(2, 3, 8))}, max_entries=6)
    assert rep.worst < 1e-4
