"""
Additive n-of-n secret sharing over the :math:`2^{64}` ring and the secure tensor operations built on
it.

A :class:`SharedTensor` stores every party's share in one ``uint64`` array of shape
``(party_count, *shape)``. Row ``i`` is what party ``i`` holds; the logical value is the sum of the
rows modulo :math:`2^{64}`, decoded at ``scale ** scale_exponent``. Scale exponent 1 is a regular
fixed-point value, 2 is a raw product awaiting :func:`truncate`, and 0 is an integer-valued tensor
such as the shared bits returned by :func:`msb`.

Linear operations (:func:`add_shared`, :func:`sub_shared`, :func:`add_public`, :func:`mul_public`,
:func:`concat_shared` and the reshaping helpers) are local and never touch the network. Products,
truncation and comparison consume single-use correlated randomness from the dealer
(:class:`BeaverTriple`, :class:`TruncationPair`, :class:`ComparisonTuple`) and open masked values
through :meth:`ppcl.mpc.transport.Network.open`.

Comparison works on XOR-shared 64-bit words (:class:`SharedBits`). After opening ``c = x + r``, the
borrow of ``c - r`` out of the low 63 bits is computed by a generate/propagate prefix circuit whose
six levels each cost one round of two AND gates; the sign bit is then
``c_63 XOR r_63 XOR borrow``, converted back to an arithmetic share with a masked opening.

See Also:
    * :mod:`ppcl.mpc.dealer` - generation of the correlated randomness consumed here.
    * :class:`ppcl.mpc.session.MPCSession` - convenience wrapper that fetches randomness automatically.

"""
from dataclasses import dataclass, field
import struct
from typing import Sequence
import numpy as np

from .ring_fixed import (ALL_ONES, LOW_63_MASK, ONE, RING_DTYPE, RING_MODULUS, SHIFT_MSB, TWO, FixedPointCodec,
                         ring_from_bytes, ring_matmul, ring_to_bytes)
from .transport import Network, ProtocolError

BITS_SCALE_MARKER = 0xFF
PREFIX_LEVELS = 6
AND_GATES_PER_CMP = 2 * PREFIX_LEVELS


@dataclass(frozen=True, eq=False)
class SharedTensor:
    """
    Additively shared tensor.

    Attributes:
        shares (np.ndarray): ``uint64`` array of shape ``(party_count, *shape)``.
        scale_exponent (int): Scale factors carried by the logical value (0, 1 or 2).
        codec (FixedPointCodec): Codec used to decode the logical value.
    """
    shares: np.ndarray
    scale_exponent: int = 1
    codec: FixedPointCodec = field(default_factory=FixedPointCodec)

    def __post_init__(self):
        if self.shares.dtype != RING_DTYPE:
            raise TypeError(f"Shares must be uint64 ring residues, got {self.shares.dtype}.")
        if self.shares.ndim < 1 or self.shares.shape[0] < 2:
            raise ValueError("A SharedTensor needs one share row per party and at least two parties.")
        if self.scale_exponent not in (0, 1, 2):
            raise ProtocolError(f"Unsupported scale exponent {self.scale_exponent}.")
        self.shares.flags.writeable = False

    @classmethod
    def from_party_shares(cls, party_shares: Sequence[np.ndarray], scale_exponent: int = 1,
                          codec: FixedPointCodec = None) -> 'SharedTensor':
        """
        Assembles a tensor from per-party share arrays.

        Raises:
            ProtocolError: If the parties' arrays have different shapes.
        """
        shapes = {np.shape(s) for s in party_shares}
        if len(shapes) != 1:
            raise ProtocolError(f"Party shares disagree on shape: {sorted(shapes)}.")
        return cls(np.stack([np.asarray(s, dtype=RING_DTYPE) for s in party_shares]), scale_exponent,
                   codec or FixedPointCodec())

    @property
    def shape(self) -> tuple:
        return self.shares.shape[1:]

    @property
    def party_count(self) -> int:
        return self.shares.shape[0]

    def party_share(self, party: int) -> np.ndarray:
        return self.shares[party]

    def _like(self, shares: np.ndarray, scale_exponent: int = None) -> 'SharedTensor':
        return SharedTensor(shares, self.scale_exponent if scale_exponent is None else scale_exponent, self.codec)


@dataclass(frozen=True, eq=False)
class SharedBits:
    """XOR-shared 64-bit words, shape ``(party_count, *shape)``."""
    shares: np.ndarray

    def __post_init__(self):
        if self.shares.dtype != RING_DTYPE:
            raise TypeError(f"Bit shares must be uint64 words, got {self.shares.dtype}.")
        self.shares.flags.writeable = False

    @property
    def shape(self) -> tuple:
        return self.shares.shape[1:]

    @property
    def party_count(self) -> int:
        return self.shares.shape[0]


class _SingleUse:
    consumed: bool

    def consume(self):
        if self.consumed:
            raise ProtocolError(f"{type(self).__name__} has already been consumed; correlated randomness is single-use.")
        self.consumed = True


@dataclass(eq=False)
class BeaverTriple(_SingleUse):
    """
    Multiplication triple with ``c = a * b`` (elementwise) or ``C = A @ B`` (``matmul=True``).

    All three tensors are raw ring values (scale exponent 0).
    """
    a: SharedTensor
    b: SharedTensor
    c: SharedTensor
    matmul: bool = False
    consumed: bool = False


@dataclass(eq=False)
class TruncationPair(_SingleUse):
    """
    Truncation mask: ``r_small = floor(r_big / scale)`` over the unsigned value of ``r_big`` and
    ``r_msb`` = bit 63 of ``r_big``, all arithmetically shared.
    """
    r_big: SharedTensor
    r_small: SharedTensor
    r_msb: SharedTensor
    consumed: bool = False

    @property
    def shape(self) -> tuple:
        return self.r_big.shape


@dataclass(eq=False)
class ComparisonTuple(_SingleUse):
    """
    Correlated randomness for one :func:`msb` call over a tensor.

    Attributes:
        r (SharedTensor): Uniform arithmetic mask.
        r_bits (SharedBits): XOR shares of the bit decomposition of ``r`` (one word per element).
        mask_bits (SharedBits): Uniform word ``rho`` used to open the result bit.
        mask_lsb (SharedTensor): Arithmetic shares of ``rho & 1``.
        and_a, and_b, and_c (SharedBits): Boolean AND triples with a leading axis of
            :data:`AND_GATES_PER_CMP` gates, ``and_c = and_a & and_b``.
    """
    r: SharedTensor
    r_bits: SharedBits
    mask_bits: SharedBits
    mask_lsb: SharedTensor
    and_a: SharedBits
    and_b: SharedBits
    and_c: SharedBits
    consumed: bool = False

    @property
    def r_msb(self) -> SharedBits:
        """XOR shares of the most significant bit of ``r`` (in bit 0 of each word)."""
        return SharedBits(self.r_bits.shares >> SHIFT_MSB)

    @property
    def shape(self) -> tuple:
        return self.r.shape


def _uniform(rng: np.random.Generator, shape: tuple) -> np.ndarray:
    return rng.integers(0, RING_MODULUS, size=shape, dtype=RING_DTYPE, endpoint=False)


def share_ring(values: np.ndarray, party_count: int, rng: np.random.Generator) -> np.ndarray:
    """Splits raw residues into ``party_count`` additive shares; returns the stacked share array."""
    values = np.asarray(values, dtype=RING_DTYPE)
    others = _uniform(rng, (party_count - 1,) + values.shape)
    last = values - others.sum(axis=0, dtype=RING_DTYPE)
    return np.concatenate([others, last[None]], axis=0)


def share(secret, party_count: int, rng: np.random.Generator, codec: FixedPointCodec = None,
          scale_exponent: int = 1) -> SharedTensor:
    """
    Secret-shares a plaintext tensor.

    Parties ``0 .. p-2`` receive uniform residues; party ``p-1`` receives the encoding minus their sum.

    Args:
        secret (np.ndarray | float): Plaintext values.
        party_count (int): Number of parties (at least 2).
        rng (np.random.Generator): Source of the uniform shares.
        codec (FixedPointCodec, optional): Codec. Defaults to base 10, five fractional digits.
        scale_exponent (int): Scale of the encoding (1 for values, 0 for integers).

    Returns:
        SharedTensor: Shares of ``encode(secret)``.

    Example:

        .. code-block:: python

            rng = np.random.default_rng(0)
            t = share(np.array([1.5, -2.0]), party_count=2, rng=rng)
            reconstruct(t)   # array([ 1.5, -2. ])

    """
    if party_count < 2:
        raise ValueError(f"Sharing needs at least two parties, got {party_count}.")
    codec = codec or FixedPointCodec()
    encoded = codec.encode(secret, scale_exponent)
    return SharedTensor(share_ring(encoded, party_count, rng), scale_exponent, codec)


def share_bits(words: np.ndarray, party_count: int, rng: np.random.Generator) -> SharedBits:
    """XOR-shares 64-bit words."""
    words = np.asarray(words, dtype=RING_DTYPE)
    others = _uniform(rng, (party_count - 1,) + words.shape)
    last = words ^ np.bitwise_xor.reduce(others, axis=0)
    return SharedBits(np.concatenate([others, last[None]], axis=0))


def reconstruct_ring(t: SharedTensor) -> np.ndarray:
    """Modular sum of all parties' shares (raw residues)."""
    return t.shares.sum(axis=0, dtype=RING_DTYPE)


def reconstruct(t: SharedTensor) -> np.ndarray:
    """Decoded plaintext value of a shared tensor at its scale exponent."""
    return t.codec.decode(reconstruct_ring(t), t.scale_exponent)


def reconstruct_bits(b: SharedBits) -> np.ndarray:
    """XOR of all parties' word shares."""
    return np.bitwise_xor.reduce(b.shares, axis=0)


def _require_same_shape(x: SharedTensor, y: SharedTensor, op: str):
    if x.shape != y.shape:
        raise ProtocolError(f"{op}: shape mismatch {x.shape} vs {y.shape}.")
    if x.party_count != y.party_count:
        raise ProtocolError(f"{op}: party count mismatch {x.party_count} vs {y.party_count}.")


def add_shared(x: SharedTensor, y: SharedTensor) -> SharedTensor:
    """Local addition of two shared tensors with equal shape and scale."""
    _require_same_shape(x, y, 'add_shared')
    if x.scale_exponent != y.scale_exponent:
        raise ProtocolError(f"add_shared: scale mismatch {x.scale_exponent} vs {y.scale_exponent}.")
    return x._like(x.shares + y.shares)


def sub_shared(x: SharedTensor, y: SharedTensor) -> SharedTensor:
    """Local subtraction of two shared tensors with equal shape and scale."""
    _require_same_shape(x, y, 'sub_shared')
    if x.scale_exponent != y.scale_exponent:
        raise ProtocolError(f"sub_shared: scale mismatch {x.scale_exponent} vs {y.scale_exponent}.")
    return x._like(x.shares - y.shares)


def neg(x: SharedTensor) -> SharedTensor:
    return x._like(np.uint64(0) - x.shares)


def add_public(x: SharedTensor, c) -> SharedTensor:
    """Adds a public constant; only party 0 applies it."""
    encoded = np.broadcast_to(x.codec.encode(c, x.scale_exponent), x.shape)
    shares = np.array(x.shares)
    shares[0] += encoded
    return x._like(shares)


def mul_public(x: SharedTensor, c) -> SharedTensor:
    """
    Multiplies by a public constant (scalar or array broadcastable to ``x.shape``).

    Integer constants keep the scale exponent. Real constants are encoded at scale 1, so the result
    carries one more scale factor and must be passed to :func:`truncate`.

    Raises:
        ProtocolError: If a real constant would push the scale exponent above 2.
    """
    c_arr = np.asarray(c)
    if np.issubdtype(c_arr.dtype, np.integer):
        factor = c_arr.astype(np.int64).astype(RING_DTYPE)
        return x._like(x.shares * np.broadcast_to(factor, x.shape))
    if x.scale_exponent + 1 > 2:
        raise ProtocolError("mul_public: real constant on a scale-2 tensor; truncate first.")
    factor = np.broadcast_to(x.codec.encode(c_arr, 1), x.shape)
    return x._like(x.shares * factor, x.scale_exponent + 1)


def concat_shared(parts: Sequence[SharedTensor], axis: int = -1) -> SharedTensor:
    """
    Concatenates shared tensors along ``axis`` without communication.

    Raises:
        ProtocolError: On scale or shape mismatch.
    """
    if not parts:
        raise ValueError("concat_shared needs at least one tensor.")
    first = parts[0]
    if any(p.scale_exponent != first.scale_exponent for p in parts):
        raise ProtocolError("concat_shared: all parts must share one scale exponent.")
    if any(p.party_count != first.party_count for p in parts):
        raise ProtocolError("concat_shared: party count mismatch.")
    ndim = len(first.shape)
    share_axis = (axis % ndim) + 1 if ndim else 1
    try:
        shares = np.concatenate([p.shares for p in parts], axis=share_axis)
    except ValueError as err:
        raise ProtocolError(f"concat_shared: incompatible shapes {[p.shape for p in parts]}.") from err
    return first._like(shares)


def transpose(x: SharedTensor) -> SharedTensor:
    """Transposes a shared matrix."""
    return x._like(np.ascontiguousarray(np.swapaxes(x.shares, 1, 2)))


def take_rows(x: SharedTensor, rows) -> SharedTensor:
    """Selects rows (first logical axis) with a public index array."""
    return x._like(np.ascontiguousarray(x.shares[:, rows]))


def sum_rows(x: SharedTensor) -> SharedTensor:
    """Sums over the first logical axis."""
    return x._like(x.shares.sum(axis=1, dtype=RING_DTYPE))


def broadcast_rows(x: SharedTensor, n_rows: int) -> SharedTensor:
    """Repeats a shared vector into ``n_rows`` rows."""
    return x._like(np.ascontiguousarray(np.broadcast_to(x.shares[:, None, :], (x.party_count, n_rows) + x.shape)))


def reshape(x: SharedTensor, shape: tuple) -> SharedTensor:
    return x._like(x.shares.reshape((x.party_count,) + tuple(shape)))


def mul_beaver(x: SharedTensor, y: SharedTensor, triple: BeaverTriple, network: Network) -> SharedTensor:
    """
    Elementwise product with one Beaver triple and one round opening ``x - a`` and ``y - b``.

    The result carries ``x.scale_exponent + y.scale_exponent`` scale factors.

    Raises:
        ProtocolError: On shape mismatch, triple reuse or a resulting scale above 2.
    """
    _require_same_shape(x, y, 'mul_beaver')
    if triple.matmul or triple.a.shape != x.shape:
        raise ProtocolError(f"mul_beaver: triple of shape {triple.a.shape} does not fit operands {x.shape}.")
    scale_exponent = x.scale_exponent + y.scale_exponent
    if scale_exponent > 2:
        raise ProtocolError("mul_beaver: product would exceed scale exponent 2; truncate first.")
    triple.consume()
    d, e = network.open([x.shares - triple.a.shares, y.shares - triple.b.shares])
    z = triple.c.shares + d * triple.b.shares + e * triple.a.shares
    z[0] += d * e
    return SharedTensor(z, scale_exponent, x.codec)


def matmul_beaver(x: SharedTensor, y: SharedTensor, triple: BeaverTriple, network: Network) -> SharedTensor:
    """
    Matrix product ``X @ Y`` with a matrix triple and one round opening ``X - A`` and ``Y - B``.

    Raises:
        ProtocolError: On non-conformable shapes, a mismatched or reused triple, or a resulting scale
            above 2.
    """
    if len(x.shape) != 2 or len(y.shape) != 2 or x.shape[1] != y.shape[0]:
        raise ProtocolError(f"matmul_beaver: cannot multiply {x.shape} by {y.shape}.")
    if not triple.matmul or triple.a.shape != x.shape or triple.b.shape != y.shape:
        raise ProtocolError(f"matmul_beaver: triple {triple.a.shape}x{triple.b.shape} does not fit "
                            f"{x.shape}x{y.shape}.")
    scale_exponent = x.scale_exponent + y.scale_exponent
    if scale_exponent > 2:
        raise ProtocolError("matmul_beaver: product would exceed scale exponent 2; truncate first.")
    triple.consume()
    d, e = network.open([x.shares - triple.a.shares, y.shares - triple.b.shares])
    z = np.empty((x.party_count, x.shape[0], y.shape[1]), dtype=RING_DTYPE)
    for party in range(x.party_count):
        z[party] = (triple.c.shares[party] + ring_matmul(d, triple.b.shares[party])
                    + ring_matmul(triple.a.shares[party], e))
    z[0] += ring_matmul(d, e)
    return SharedTensor(z, scale_exponent, x.codec)


def truncate(t: SharedTensor, pair: TruncationPair, network: Network) -> SharedTensor:
    """
    Divides a shared value by the scale (floor), removing one scale factor, with one opening.

    Party 0 adds a public offset ``K`` (the largest multiple of the scale below :math:`2^{62}`) so the
    logical value is non-negative, then all parties open ``t + K + r_big``. The wrap of that opening is
    ``r_msb AND NOT c_63``, which is linear in the shared ``r_msb``; the quotient of the opened value
    is corrected locally and ``r_small`` is subtracted. The result is within one unit in the last place
    of the exact quotient.

    Args:
        t (SharedTensor): Tensor with scale exponent 1 or 2 and ``|t| < 2**62`` as a signed integer.
        pair (TruncationPair): Unused truncation pair matching ``t.shape``.
        network (Network): Session network.

    Returns:
        SharedTensor: ``t / scale`` with the scale exponent lowered by one.

    Raises:
        ProtocolError: On a missing, mismatched or reused pair, or a scale exponent of 0.
    """
    if pair is None:
        raise ProtocolError("truncate: no truncation pair available.")
    if t.scale_exponent < 1:
        raise ProtocolError("truncate: tensor carries no scale factor to remove.")
    if pair.shape != t.shape:
        raise ProtocolError(f"truncate: pair of shape {pair.shape} does not fit {t.shape}.")
    pair.consume()
    scale = t.codec.scale
    offset = scale * ((2 ** 62) // scale)
    quotient_wrap = np.uint64(RING_MODULUS // scale)
    remainder_wrap = np.uint64(RING_MODULUS % scale)
    scale_u = np.uint64(scale)

    masked = t.shares + pair.r_big.shares
    masked[0] += np.uint64(offset)
    c, = network.open([masked])
    c_quot = c // scale_u
    carry = ((c % scale_u) + remainder_wrap >= scale_u).astype(RING_DTYPE)
    wrap_coeff = (ONE - (c >> SHIFT_MSB)) * (quotient_wrap + carry)

    out = pair.r_msb.shares * wrap_coeff - pair.r_small.shares
    out[0] += c_quot - np.uint64(offset // scale)
    return SharedTensor(out, t.scale_exponent - 1, t.codec)


def and_words(pairs: Sequence[tuple[np.ndarray, np.ndarray]], triples: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray]],
              network: Network) -> list[np.ndarray]:
    """
    Batched AND of XOR-shared words in one round.

    Args:
        pairs: ``(x_shares, y_shares)`` tuples, each array of shape ``(party_count, ...)``.
        triples: ``(a, b, c)`` share arrays with ``c = a & b``.
        network (Network): Session network.

    Returns:
        list[np.ndarray]: XOR shares of ``x & y`` for every pair.
    """
    blocks = []
    for (x_sh, y_sh), (a_sh, b_sh, _) in zip(pairs, triples):
        blocks.extend([x_sh ^ a_sh, y_sh ^ b_sh])
    opened = network.open(blocks, xor=True)
    results = []
    for i, (a_sh, b_sh, c_sh) in enumerate(triples):
        d, e = opened[2 * i], opened[2 * i + 1]
        z = c_sh ^ (d & b_sh) ^ (e & a_sh)
        z[0] ^= d & e
        results.append(z)
    return results


def msb(t: SharedTensor, cmp: ComparisonTuple, network: Network) -> SharedTensor:
    """
    Shared most significant bit (1 where the signed value is negative, 0 otherwise).

    Costs eight rounds regardless of tensor size: one opening of ``t + r``, six levels of the
    prefix comparison circuit and one masked opening of the result bit.

    Returns:
        SharedTensor: Arithmetic shares of the bits (scale exponent 0).

    Raises:
        ProtocolError: On a reused or mismatched tuple.
    """
    if cmp.shape != t.shape:
        raise ProtocolError(f"msb: comparison tuple of shape {cmp.shape} does not fit {t.shape}.")
    cmp.consume()
    c, = network.open([t.shares + cmp.r.shares])
    c_low = c & LOW_63_MASK
    r_bits = cmp.r_bits.shares
    r_low = r_bits & LOW_63_MASK

    # generate: r_i = 1, c_i = 0; propagate: r_i == c_i
    generate = r_low & ~c_low
    propagate = np.array(r_low)
    propagate[0] ^= c_low ^ ALL_ONES
    for level in range(PREFIX_LEVELS):
        shift = np.uint64(1 << level)
        gates = [(cmp.and_a.shares[:, 2 * level + k], cmp.and_b.shares[:, 2 * level + k],
                  cmp.and_c.shares[:, 2 * level + k]) for k in range(2)]
        carried, propagate = and_words([(propagate, generate << shift), (propagate, propagate << shift)],
                                       gates, network)
        generate = generate ^ carried

    borrow = (generate >> np.uint64(62)) & ONE
    sign_bits = borrow ^ (r_bits >> SHIFT_MSB)
    sign_bits[0] ^= c >> SHIFT_MSB
    e, = network.open([sign_bits ^ cmp.mask_bits.shares], xor=True)
    e_low = e & ONE
    out = cmp.mask_lsb.shares * (ONE - TWO * e_low)
    out[0] += e_low
    return SharedTensor(out, 0, t.codec)


def relu_with_mask(t: SharedTensor, cmp: ComparisonTuple, triple: BeaverTriple,
                   network: Network) -> tuple[SharedTensor, SharedTensor]:
    """ReLU and its derivative mask ``[t > 0]`` (one comparison tuple, one triple)."""
    positive = msb(neg(t), cmp, network)
    return mul_beaver(t, positive, triple, network), positive


def relu(t: SharedTensor, cmp: ComparisonTuple, triple: BeaverTriple, network: Network) -> SharedTensor:
    """Elementwise ``max(0, t)``, exact on the fixed-point value."""
    return relu_with_mask(t, cmp, triple, network)[0]


def semi_sigmoid_with_mask(t: SharedTensor, cmps: Sequence[ComparisonTuple], triples: Sequence[BeaverTriple],
                           network: Network) -> tuple[SharedTensor, SharedTensor]:
    """
    Semi-sigmoid ``relu(t) - relu(t - 1)`` and its derivative mask ``[0 < t < 1]``.

    Uses two comparison tuples and two triples.
    """
    above_zero = msb(neg(t), cmps[0], network)
    low = mul_beaver(t, above_zero, triples[0], network)
    shifted = add_public(t, -1.0)
    at_least_one = add_public(neg(msb(shifted, cmps[1], network)), 1)
    high = mul_beaver(shifted, at_least_one, triples[1], network)
    return sub_shared(low, high), sub_shared(above_zero, at_least_one)


def semi_sigmoid(t: SharedTensor, cmps: Sequence[ComparisonTuple], triples: Sequence[BeaverTriple],
                 network: Network) -> SharedTensor:
    """Elementwise ``clamp(t, 0, 1)``."""
    return semi_sigmoid_with_mask(t, cmps, triples, network)[0]


def serialize_block(values: np.ndarray, scale_exponent: int) -> bytes:
    """
    Serializes one party's share block: scale byte, rank byte, ``rank`` little-endian 32-bit dims,
    then 8-byte little-endian elements row-major. XOR-shared words use the scale byte ``0xFF``.
    """
    values = np.asarray(values, dtype=RING_DTYPE)
    header = struct.pack('<BB', scale_exponent, values.ndim) + struct.pack(f'<{values.ndim}I', *values.shape)
    return header + ring_to_bytes(values)


def deserialize_block(buffer: bytes, offset: int = 0) -> tuple[int, np.ndarray, int]:
    """
    Parses a share block written by :func:`serialize_block`.

    Returns:
        tuple: ``(scale_exponent, values, next_offset)``.

    Raises:
        ProtocolError: If the buffer is truncated.
    """
    if len(buffer) < offset + 2:
        raise ProtocolError("Truncated share block header.")
    scale_exponent, rank = struct.unpack_from('<BB', buffer, offset)
    offset += 2
    shape = struct.unpack_from(f'<{rank}I', buffer, offset)
    offset += 4 * rank
    n_bytes = 8 * int(np.prod(shape, dtype=np.int64))
    if len(buffer) < offset + n_bytes:
        raise ProtocolError(f"Share block of shape {shape} is truncated.")
    values = ring_from_bytes(buffer[offset:offset + n_bytes], shape)
    return scale_exponent, values, offset + n_bytes
