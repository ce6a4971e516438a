import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amifml import compression as comp
from amifml.compression import (
    CompressionSpec,
    PayloadError,
    QuantizedTensor,
    apply_mask,
    decode,
    dequantize,
    encode,
    encode_dense,
    encode_masked,
    encode_quantized,
    kept_count,
    pack_codes,
    quantize,
    unpack_codes,
)
from amifml.numerics import RngStream, stream


def rng(i=0):
    return RngStream(99, ("t", i))


def test_mask_extremes_and_count():
    d = np.arange(1.0, 11.0)
    np.testing.assert_array_equal(apply_mask(d, 1.0, rng())[0], d)
    np.testing.assert_array_equal(apply_mask(d, 0.0, rng())[0], 0.0)
    masked, mask = apply_mask(d, 0.5, rng())
    assert np.count_nonzero(masked) == 5 == mask.sum()
    np.testing.assert_array_equal(masked[mask], d[mask])


@settings(max_examples=60)
@given(st.integers(1, 500), st.floats(0, 1), st.integers(0, 1000))
def test_mask_exact_count(n, kappa, seed):
    d = np.random.default_rng(seed).uniform(0.5, 1.5, n)
    masked, _ = apply_mask(d, kappa, RngStream(seed))
    assert np.count_nonzero(masked) == kept_count(kappa, n) == int(np.floor(kappa * n + 0.5))


def test_mask_deterministic_and_per_client():
    d = np.ones(100)
    a = apply_mask(d, 0.1, stream(1, "mask", "m0", 5))[1]
    b = apply_mask(d, 0.1, stream(1, "mask", "m0", 5))[1]
    c = apply_mask(d, 0.1, stream(1, "mask", "m1", 5))[1]
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_mask_positions_uniform():
    hits = np.zeros(10)
    for r in range(5000):
        hits += apply_mask(np.ones(10), 0.3, stream(2, "mask", 0, r))[1]
    np.testing.assert_allclose(hits / 5000, 0.3, atol=0.03)


def test_quantize_endpoints_deterministic():
    v = np.array([-0.5, 0.25, 1.0], dtype=np.float32).astype(np.float64)
    for seed in range(20):
        for b in (1, 2, 4, 8):
            out = dequantize(quantize(v, b, rng(seed)))
            assert out[0] == -0.5 and out[2] == 1.0


def test_quantize_midpoint_one_bit():
    v = np.concatenate([[0.0, 1.0], np.full(100_000, 0.5)])
    out = dequantize(quantize(v, 1, rng()))
    mid = out[2:]
    assert set(np.unique(mid)) == {0.0, 1.0}
    assert abs(mid.mean() - 0.5) < 0.005


def test_one_bit_probability_matches_rule():
    # P(max) = (v - min) / (max - min)
    v = np.concatenate([[0.0, 4.0], np.full(200_000, 1.0)])
    out = dequantize(quantize(v, 1, rng(3)))[2:]
    assert abs(np.mean(out == 4.0) - 0.25) < 0.005


def test_quantize_constant_vector():
    q = quantize(np.full(7, 0.375), 4, rng())
    np.testing.assert_array_equal(q.codes, 0)
    np.testing.assert_array_equal(dequantize(q), 0.375)


def test_quantize_rejects_nonfinite():
    with pytest.raises(ValueError):
        quantize(np.array([0.0, np.nan]), 2, rng())
    with pytest.raises(ValueError):
        quantize(np.array([0.0, 1.0]), 3, rng())


def test_dequantize_all_ones_one_bit():
    q = QuantizedTensor(1, -2.0, 3.0, np.ones(5, dtype=np.uint8))
    np.testing.assert_array_equal(dequantize(q), 3.0)
    with pytest.raises(PayloadError):
        dequantize(QuantizedTensor(2, 0.0, 1.0, np.array([4], dtype=np.uint8)))


@pytest.mark.parametrize("bits", [1, 2, 4, 8])
def test_on_grid_roundtrip_exact(bits):
    L = (1 << bits) - 1
    levels = -1.0 + np.arange(L + 1) * (3.0 / L)  # s_min=-1, s_max=2, exact f32 bounds
    out = dequantize(quantize(levels, bits, rng()))
    np.testing.assert_array_equal(out, levels)


@pytest.mark.parametrize("bits", [1, 2, 4])
def test_unbiased(bits):
    v = np.random.default_rng(bits).normal(size=20)
    trials = 100_000
    out = dequantize(quantize(np.tile(v, trials), bits, rng(bits))).reshape(trials, -1)
    span = v.max() - v.min()
    assert np.max(np.abs(out.mean(axis=0) - v)) < 0.01 * span


def test_decoded_values_within_range():
    v = np.random.default_rng(0).normal(size=1000)
    q = quantize(v, 2, rng())
    out = dequantize(q)
    assert q.s_min <= v.min() and q.s_max >= v.max()
    assert np.all((out >= q.s_min) & (out <= q.s_max))
    assert np.float32(q.s_min) == q.s_min and np.float32(q.s_max) == q.s_max


@pytest.mark.parametrize("bits", [1, 2, 4, 8])
@pytest.mark.parametrize("n", [1, 7, 8, 9, 10_601])
def test_pack_sizes_and_roundtrip(bits, n):
    codes = np.random.default_rng(n).integers(0, 1 << bits, n).astype(np.uint8)
    buf = pack_codes(codes, bits)
    assert len(buf) == -(-bits * n // 8)
    np.testing.assert_array_equal(unpack_codes(buf, bits, n), codes)


@pytest.mark.parametrize("n", [1, 7, 8, 9, 10_601])
def test_payload_size_formulas(n):
    d = np.random.default_rng(n).normal(size=n)
    assert encode_dense(d).byte_size == 1 + 4 * n
    assert encode_dense(d).body_size == 4 * n
    mask = np.zeros(n, bool)
    mask[: kept_count(0.5, n)] = True
    assert encode_masked(d, mask).byte_size == 1 + -(-n // 8) + 4 * mask.sum()
    for b in (1, 2, 4, 8):
        p = encode_quantized(quantize(d, b, rng()))
        assert p.byte_size == 8 + -(-b * n // 8) + 2 == comp.quantized_size(n, b)


def test_h50_size_example():
    n = 10_601
    d = np.random.default_rng(0).normal(size=n)
    dense = encode_dense(d)
    q4 = encode(d, CompressionSpec("quantize", bits=4), rng())
    assert dense.body_size == 42_404
    assert q4.byte_size == 5_311
    assert dense.body_size / q4.byte_size == pytest.approx(7.98, abs=0.01)


def test_dense_roundtrip_float32():
    d = np.random.default_rng(1).normal(size=50)
    np.testing.assert_array_equal(decode(encode_dense(d), 50), d.astype(np.float32).astype(np.float64))


def test_masked_roundtrip_keeps_zero_entries():
    d = np.array([0.0, 1.5, -2.0, 0.0, 3.0])
    mask = np.array([True, True, False, False, True])
    out = decode(encode_masked(np.where(mask, d, 0.0), mask), 5)
    np.testing.assert_array_equal(out, [0.0, 1.5, 0.0, 0.0, 3.0])


@pytest.mark.parametrize("spec", [
    CompressionSpec("dense"),
    CompressionSpec("mask", keep_fraction=0.3),
    CompressionSpec("quantize", bits=2),
])
def test_encode_decode_dispatch(spec):
    d = np.random.default_rng(2).normal(size=33)
    p = encode(d, spec, rng())
    out = decode(p.data, 33)
    assert out.shape == (33,)
    assert decode(p, 33).tolist() == out.tolist()


def test_decode_errors():
    d = np.ones(9)
    good = encode_dense(d).data
    with pytest.raises(PayloadError, match="tag"):
        decode(b"\x07" + good[1:], 9)
    with pytest.raises(PayloadError):
        decode(good[:-1], 9)
    with pytest.raises(PayloadError):
        decode(b"", 9)
    q = encode_quantized(quantize(d * np.arange(9), 4, rng())).data
    with pytest.raises(PayloadError):
        decode(q[:-1], 9)
    m = encode_masked(d, np.ones(9, bool)).data
    with pytest.raises(PayloadError):
        decode(m[:-2], 9)


def test_spec_validation():
    with pytest.raises(ValueError):
        CompressionSpec("mask")
    with pytest.raises(ValueError):
        CompressionSpec("mask", keep_fraction=1.5)
    with pytest.raises(ValueError):
        CompressionSpec("quantize", bits=3)
    with pytest.raises(ValueError):
        CompressionSpec("zip")
    assert CompressionSpec("mask", keep_fraction=0.1).label == "mask0.1"
