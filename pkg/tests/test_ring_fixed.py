import numpy as np
import pytest

from ppcl.mpc.ring_fixed import (RING_MODULUS, FixedPointCodec, as_ring, ring_add, ring_element_bytes,
                                 ring_from_bytes, ring_matmul, ring_mul, ring_neg, ring_sub, ring_to_bytes, to_signed)


@pytest.fixture
def codec():
    return FixedPointCodec()


def test_codec_defaults(codec):
    assert codec.scale == 100000
    assert codec.resolution == pytest.approx(1e-5)
    assert codec.to_dict() == {'base': 10, 'frac_digits': 5}


def test_round_trip_error_within_half_ulp(codec):
    rng = np.random.default_rng(0)
    x = rng.uniform(-100.0, 100.0, size=100000)
    decoded = codec.decode(codec.encode(x))
    assert np.max(np.abs(decoded - x)) <= 0.5e-5 + 1e-12


@pytest.mark.parametrize("value,expected", [
    (0.0, 0),
    (1.0, 100000),
    (-1e-5, RING_MODULUS - 1),
    (-1.0, RING_MODULUS - 100000),
    (0.123456, 12346),
    (-0.123456, RING_MODULUS - 12346),
    (2.5e-6, 0),
])
def test_encode_edge_cases(codec, value, expected):
    assert int(codec.encode(value)) == expected


def test_decode_negative_residues(codec):
    assert codec.decode(RING_MODULUS - 1) == pytest.approx(-1e-5)
    assert codec.decode(2 ** 63 - 1) > 0
    assert codec.decode(2 ** 63) < 0


def test_encode_rejects_out_of_range(codec):
    with pytest.raises(ValueError):
        codec.encode(codec.max_magnitude * 2)
    with pytest.raises(ValueError):
        codec.encode(np.array([1.0, np.nan]))


def test_scale_exponent_zero_keeps_integers(codec):
    bits = np.array([0, 1, 1, 0])
    assert np.array_equal(codec.encode(bits, scale_exponent=0), bits.astype(np.uint64))
    assert np.array_equal(codec.decode(codec.encode(bits, 0), 0), bits.astype(float))


def test_double_scale_product_decodes(codec):
    a, b = codec.encode(1.5), codec.encode(-2.25)
    assert codec.decode(ring_mul(a, b), scale_exponent=2) == pytest.approx(-3.375)


def test_binary_codec():
    binary = FixedPointCodec(base=2, frac_digits=16)
    assert binary.scale == 65536
    assert binary.decode(binary.encode(0.5)) == 0.5


def test_invalid_codec():
    with pytest.raises(ValueError):
        FixedPointCodec(base=1)
    with pytest.raises(ValueError):
        FixedPointCodec(frac_digits=0)


def test_ring_arithmetic_wraps():
    top = as_ring(RING_MODULUS - 1)
    assert int(ring_add(top, 1)) == 0
    assert int(ring_sub(0, 1)) == RING_MODULUS - 1
    assert int(ring_neg(1)) == RING_MODULUS - 1
    assert int(ring_mul(2 ** 63, 2)) == 0
    assert int(as_ring(-5)) == RING_MODULUS - 5
    assert int(to_signed(as_ring(-5))) == -5


def test_as_ring_rejects_floats():
    with pytest.raises(TypeError):
        as_ring(np.array([1.5]))


def test_ring_matmul_matches_python_integers():
    rng = np.random.default_rng(1)
    a = rng.integers(0, 2 ** 63, size=(3, 4), dtype=np.uint64) * np.uint64(2)
    b = rng.integers(0, 2 ** 63, size=(4, 2), dtype=np.uint64)
    expected = [[sum(int(a[i, p]) * int(b[p, j]) for p in range(4)) % RING_MODULUS for j in range(2)]
                for i in range(3)]
    assert ring_matmul(a, b).tolist() == expected


def test_ring_matmul_shape_mismatch():
    with pytest.raises(ValueError):
        ring_matmul(np.zeros((2, 3), dtype=np.uint64), np.zeros((2, 3), dtype=np.uint64))


def test_element_serialization_is_little_endian():
    assert ring_element_bytes(1) == b'\x01' + b'\x00' * 7
    assert ring_element_bytes(-1) == b'\xff' * 8
    values = as_ring(np.array([[1, 2], [3, -4]]))
    assert np.array_equal(ring_from_bytes(ring_to_bytes(values), (2, 2)), values)
    with pytest.raises(ValueError):
        ring_from_bytes(b'\x00' * 7)
