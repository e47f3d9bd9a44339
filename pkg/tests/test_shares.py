import numpy as np
import pytest

from ppcl.mpc.dealer import gen_beaver, gen_cmp_tuple, gen_trunc_pair
from ppcl.mpc.ring_fixed import RING_DTYPE, FixedPointCodec, ring_from_bytes
from ppcl.mpc.shares import (SharedTensor, add_public, add_shared, concat_shared, deserialize_block, matmul_beaver, msb,
                             mul_beaver, mul_public, neg, reconstruct, reconstruct_bits, relu_with_mask, reshape,
                             semi_sigmoid_with_mask, serialize_block, share, share_bits, sub_shared, sum_rows,
                             take_rows, transpose, truncate)
from ppcl.mpc.transport import Network, ProtocolError, top_byte_uniformity_pvalue

ULP = 1e-5


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


@pytest.fixture
def net():
    return Network(party_count=2, session_id=11)


@pytest.fixture
def codec():
    return FixedPointCodec()


def _quantized(codec, x):
    return codec.decode(codec.encode(x))


def test_share_reconstruct(rng):
    x = rng.uniform(-50, 50, size=(4, 5))
    t = share(x, 2, rng)
    assert t.shape == (4, 5)
    assert t.party_count == 2
    np.testing.assert_allclose(reconstruct(t), x, atol=0.5 * ULP)


def test_three_party_sharing(rng):
    t = share(np.array([1.25, -3.5]), 3, rng)
    np.testing.assert_allclose(reconstruct(t), [1.25, -3.5])


def test_sharing_needs_two_parties(rng):
    with pytest.raises(ValueError):
        share(np.ones(2), 1, rng)


def test_single_share_looks_uniform(rng):
    t = share(np.zeros(100000), 2, rng)
    assert top_byte_uniformity_pvalue(t.party_share(0)) > 0.01


def test_linear_ops(rng, codec):
    x, y = rng.uniform(-5, 5, size=6), rng.uniform(-5, 5, size=6)
    tx, ty = share(x, 2, rng), share(y, 2, rng)
    np.testing.assert_allclose(reconstruct(add_shared(tx, ty)), _quantized(codec, x) + _quantized(codec, y), atol=1e-9)
    np.testing.assert_allclose(reconstruct(sub_shared(tx, ty)), _quantized(codec, x) - _quantized(codec, y), atol=1e-9)
    np.testing.assert_allclose(reconstruct(neg(tx)), -_quantized(codec, x), atol=1e-9)
    np.testing.assert_allclose(reconstruct(add_public(tx, 2.0)), _quantized(codec, x) + 2.0, atol=1e-9)
    np.testing.assert_allclose(reconstruct(mul_public(tx, 3)), 3 * _quantized(codec, x), atol=1e-9)


def test_add_rejects_scale_mismatch(rng):
    with pytest.raises(ProtocolError):
        add_shared(share(np.ones(2), 2, rng), share(np.ones(2), 2, rng, scale_exponent=0))


def test_local_reshaping_helpers(rng, codec):
    x = rng.uniform(-3, 3, size=(4, 3))
    t = share(x, 2, rng)
    q = _quantized(codec, x)
    np.testing.assert_allclose(reconstruct(transpose(t)), q.T, atol=1e-9)
    np.testing.assert_allclose(reconstruct(take_rows(t, [2, 0])), q[[2, 0]], atol=1e-9)
    np.testing.assert_allclose(reconstruct(sum_rows(t)), q.sum(axis=0), atol=1e-8)
    np.testing.assert_allclose(reconstruct(reshape(t, (3, 4))), q.reshape(3, 4), atol=1e-9)


def test_concat_matches_plaintext(rng, codec):
    a, b = rng.uniform(-1, 1, size=(3, 2)), rng.uniform(-1, 1, size=(3, 4))
    joined = concat_shared([share(a, 2, rng), share(b, 2, rng)], axis=1)
    assert joined.shape == (3, 6)
    np.testing.assert_allclose(reconstruct(joined), np.hstack([_quantized(codec, a), _quantized(codec, b)]), atol=1e-9)
    rows = concat_shared([share(a, 2, rng), share(a, 2, rng)], axis=0)
    assert rows.shape == (6, 2)
    with pytest.raises(ProtocolError):
        concat_shared([share(a, 2, rng), share(b, 2, rng)], axis=0)


def test_mul_then_truncate_within_one_ulp(rng, net, codec):
    x, y = rng.uniform(-10, 10, size=10000), rng.uniform(-10, 10, size=10000)
    tx, ty = share(x, 2, rng), share(y, 2, rng)
    product = mul_beaver(tx, ty, gen_beaver((10000,), rng), net)
    assert product.scale_exponent == 2
    out = truncate(product, gen_trunc_pair((10000,), rng), net)
    assert out.scale_exponent == 1
    expected = _quantized(codec, x) * _quantized(codec, y)
    assert np.max(np.abs(reconstruct(out) - expected)) <= ULP + 1e-9
    assert net.stats.rounds(0) == 2


def test_truncate_handles_negative_and_zero(rng, net, codec):
    values = np.array([0.0, -1e-5, 1e-5, -123.45678, 99.99999, -0.5])
    t = share(values, 2, rng, scale_exponent=2)
    out = truncate(t, gen_trunc_pair(values.shape, rng), net)
    assert np.max(np.abs(reconstruct(out) - values)) <= ULP + 1e-9


def test_matmul_within_k_plus_one_ulp(rng, net, codec):
    m, k, n = 100, 7, 100
    x, y = rng.uniform(-2, 2, size=(m, k)), rng.uniform(-2, 2, size=(k, n))
    product = matmul_beaver(share(x, 2, rng), share(y, 2, rng), gen_beaver((m, k, n), rng, matmul=True), net)
    out = truncate(product, gen_trunc_pair((m, n), rng), net)
    expected = _quantized(codec, x) @ _quantized(codec, y)
    assert np.max(np.abs(reconstruct(out) - expected)) <= (k + 1) * ULP


def test_triple_is_single_use(rng, net):
    triple = gen_beaver((3,), rng)
    tx = share(np.ones(3), 2, rng)
    mul_beaver(tx, tx, triple, net)
    with pytest.raises(ProtocolError):
        mul_beaver(tx, tx, triple, net)


def test_mul_rejects_scale_overflow(rng, net):
    t2 = share(np.ones(3), 2, rng, scale_exponent=2)
    with pytest.raises(ProtocolError):
        mul_beaver(t2, share(np.ones(3), 2, rng), gen_beaver((3,), rng), net)


def test_mul_rejects_shape_mismatch(rng, net):
    with pytest.raises(ProtocolError):
        mul_beaver(share(np.ones(3), 2, rng), share(np.ones(4), 2, rng), gen_beaver((3,), rng), net)


def test_msb_exact_and_eight_rounds(rng, net, codec):
    values = np.concatenate([rng.uniform(-1000, 1000, size=10000), [0.0, 1e-5, -1e-5, 999.99999, -999.99999]])
    bits = msb(share(values, 2, rng), gen_cmp_tuple(values.shape, rng), net)
    assert bits.scale_exponent == 0
    assert np.array_equal(reconstruct(bits), (_quantized(codec, values) < 0).astype(float))
    assert net.stats.rounds(0) == 8


def test_relu_exact_with_mask(rng, net, codec):
    values = np.concatenate([rng.uniform(-20, 20, size=10000), [0.0, 1e-5, -1e-5]])
    out, mask = relu_with_mask(share(values, 2, rng), gen_cmp_tuple(values.shape, rng),
                               gen_beaver(values.shape, rng), net)
    q = _quantized(codec, values)
    np.testing.assert_allclose(reconstruct(out), np.maximum(q, 0.0), atol=1e-9)
    assert np.array_equal(reconstruct(mask), (q > 0).astype(float))


def test_semi_sigmoid_exact_with_mask(rng, net, codec):
    values = np.concatenate([rng.uniform(-3, 3, size=10000), [0.0, 1.0, 0.5, -1e-5, 1.00001]])
    cmps = [gen_cmp_tuple(values.shape, rng) for _ in range(2)]
    triples = [gen_beaver(values.shape, rng) for _ in range(2)]
    out, mask = semi_sigmoid_with_mask(share(values, 2, rng), cmps, triples, net)
    q = _quantized(codec, values)
    np.testing.assert_allclose(reconstruct(out), np.clip(q, 0.0, 1.0), atol=1e-9)
    assert np.array_equal(reconstruct(mask), ((q > 0) & (q < 1)).astype(float))


def test_opened_wire_values_are_uniform(rng):
    net = Network(party_count=2, session_id=3, record_transcripts=True)
    t = share(np.zeros(50000), 2, rng)
    mul_beaver(t, t, gen_beaver((50000,), rng), net)
    words = np.concatenate([ring_from_bytes(msg.payload) for msg in net.transcript(1)])
    assert words.size == 100000
    assert top_byte_uniformity_pvalue(words) > 0.01


def test_truncation_opening_is_uniform(rng):
    net = Network(party_count=2, session_id=4, record_transcripts=True)
    t = share(np.zeros(100000), 2, rng, scale_exponent=2)
    truncate(t, gen_trunc_pair((100000,), rng), net)
    opened, = net.transcript(1)
    words = ring_from_bytes(opened.payload)
    assert words.size == 100000
    assert top_byte_uniformity_pvalue(words) > 0.01


def test_comparison_openings_are_uniform(rng):
    n = 20000
    net = Network(party_count=2, session_id=5, record_transcripts=True)
    values = rng.uniform(-1000, 1000, size=n)
    msb(share(values, 2, rng), gen_cmp_tuple((n,), rng), net)
    messages = net.transcript(1)
    assert len(messages) == 8
    masked_input = ring_from_bytes(messages[0].payload)
    masked_bit = ring_from_bytes(messages[-1].payload)
    assert masked_input.size == masked_bit.size == n
    assert top_byte_uniformity_pvalue(masked_input) > 0.01
    assert top_byte_uniformity_pvalue(masked_bit) > 0.01
    circuit = np.concatenate([ring_from_bytes(msg.payload) for msg in messages[1:-1]])
    assert circuit.size == 6 * 4 * n
    assert top_byte_uniformity_pvalue(circuit) > 0.01


def test_share_bits_reconstruct(rng):
    words = rng.integers(0, 2 ** 63, size=10, dtype=np.uint64)
    assert np.array_equal(reconstruct_bits(share_bits(words, 2, rng)), words)


def test_serialize_block_layout(rng):
    values = np.arange(6, dtype=RING_DTYPE).reshape(2, 3)
    buffer = serialize_block(values, 1)
    assert buffer[:2] == bytes([1, 2])
    assert len(buffer) == 2 + 2 * 4 + 6 * 8
    scale, parsed, offset = deserialize_block(buffer + serialize_block(values[0], 0xFF))
    assert scale == 1 and offset == len(buffer)
    assert np.array_equal(parsed, values)
    with pytest.raises(ProtocolError):
        deserialize_block(buffer[:-1])


def test_shared_tensor_validation():
    with pytest.raises(TypeError):
        SharedTensor(np.zeros((2, 3)))
    with pytest.raises(ProtocolError):
        SharedTensor(np.zeros((2, 3), dtype=RING_DTYPE), scale_exponent=3)
