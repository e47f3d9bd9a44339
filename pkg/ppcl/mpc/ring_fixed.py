"""
Exact arithmetic in the ring of integers modulo :math:`2^{64}` and the fixed-point codec that embeds
real numbers into it.

Every secret-shared value in :mod:`ppcl` lives in this ring. Residues are stored as NumPy
``uint64`` arrays so that additions and multiplications wrap modulo :math:`2^{64}` for free. The
signed interpretation follows the two's-complement convention: residues in :math:`[0, 2^{63})` are
non-negative and residues in :math:`[2^{63}, 2^{64})` are negative.

Reals are represented at a fixed scale :math:`s = \\text{base}^f`. A value :math:`x` is encoded as
:math:`\\text{round}(x \\cdot s) \\bmod 2^{64}`, rounding half away from zero. A raw ring product of two
encodings carries the scale :math:`s^2`, which is why :class:`FixedPointCodec` accepts a
``scale_exponent`` when decoding.

The exact modular matrix product is computed with a `numba <https://numba.pydata.org>`_ kernel,
:func:`_ring_matmul_kernel`, which keeps every operand in ``uint64`` so overflow wraps the same way
it does in NumPy.

Example:

    .. code-block:: python

        import numpy as np
        from ppcl.mpc.ring_fixed import FixedPointCodec, ring_mul

        codec = FixedPointCodec()
        e = codec.encode(np.array([1.5, -1.0]))
        # array([150000, 18446744073709451616], dtype=uint64)
        codec.decode(ring_mul(e, codec.encode(2.0)), scale_exponent=2)
        # array([ 3., -2.])

"""
from dataclasses import dataclass
import struct
import numba
import numpy as np

RING_BITS = 64
RING_MODULUS = 2 ** RING_BITS
RING_DTYPE = np.uint64

ONE = np.uint64(1)
TWO = np.uint64(2)
ALL_ONES = np.uint64(RING_MODULUS - 1)
LOW_63_MASK = np.uint64(2 ** 63 - 1)
SHIFT_MSB = np.uint64(RING_BITS - 1)


def as_ring(value) -> np.ndarray:
    """
    Converts integers (Python or NumPy, possibly negative) into ring residues.

    Python integers are reduced modulo :math:`2^{64}` before conversion; signed NumPy arrays are
    reinterpreted with two's-complement wrapping; unsigned arrays are passed through.

    Args:
        value (int | np.ndarray): Integer scalar or array.

    Returns:
        np.ndarray: ``uint64`` array (0-d for scalars).

    Raises:
        TypeError: If ``value`` holds non-integer data.
    """
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return np.asarray(int(value) % RING_MODULUS, dtype=RING_DTYPE)
    arr = np.asarray(value)
    if arr.dtype == RING_DTYPE:
        return arr
    if arr.dtype == object:
        return np.asarray([int(v) % RING_MODULUS for v in arr.ravel()], dtype=RING_DTYPE).reshape(arr.shape)
    if not np.issubdtype(arr.dtype, np.integer):
        raise TypeError(f"Ring elements must be integers, got dtype {arr.dtype}.")
    return arr.astype(np.int64).astype(RING_DTYPE)


def to_signed(e) -> np.ndarray:
    """Two's-complement signed view of ring residues."""
    return np.asarray(e, dtype=RING_DTYPE).view(np.int64)


def ring_add(a, b) -> np.ndarray:
    """Elementwise :math:`a + b \\bmod 2^{64}`."""
    with np.errstate(over='ignore'):
        return as_ring(a) + as_ring(b)


def ring_sub(a, b) -> np.ndarray:
    """Elementwise :math:`a - b \\bmod 2^{64}`."""
    with np.errstate(over='ignore'):
        return as_ring(a) - as_ring(b)


def ring_mul(a, b) -> np.ndarray:
    """Elementwise :math:`a \\cdot b \\bmod 2^{64}`."""
    with np.errstate(over='ignore'):
        return as_ring(a) * as_ring(b)


def ring_neg(a) -> np.ndarray:
    """Elementwise :math:`-a \\bmod 2^{64}`."""
    with np.errstate(over='ignore'):
        return np.uint64(0) - as_ring(a)


@numba.njit()
def _ring_matmul_kernel(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n), dtype=np.uint64)
    for i in range(m):
        for p in range(k):
            a_ip = a[i, p]
            for j in range(n):
                out[i, j] += a_ip * b[p, j]
    return out


def ring_matmul(a, b) -> np.ndarray:
    """
    Exact matrix product modulo :math:`2^{64}`.

    Args:
        a (np.ndarray): ``m x k`` residues.
        b (np.ndarray): ``k x n`` residues.

    Returns:
        np.ndarray: ``m x n`` residues.

    Raises:
        ValueError: If the operands are not conformable 2-D arrays.
    """
    a = np.ascontiguousarray(as_ring(a))
    b = np.ascontiguousarray(as_ring(b))
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"Cannot multiply ring matrices of shapes {a.shape} and {b.shape}.")
    return _ring_matmul_kernel(a, b)


def ring_to_bytes(e) -> bytes:
    """Serializes residues as 8-byte little-endian words, row-major."""
    return np.ascontiguousarray(as_ring(e)).astype('<u8').tobytes()


def ring_from_bytes(buffer: bytes, shape: tuple = None) -> np.ndarray:
    """
    Parses 8-byte little-endian words into residues.

    Args:
        buffer (bytes): Serialized words; length must be a multiple of 8.
        shape (tuple, optional): Target shape. Defaults to a flat vector.

    Returns:
        np.ndarray: ``uint64`` array.
    """
    if len(buffer) % 8:
        raise ValueError(f"Ring buffer length {len(buffer)} is not a multiple of 8 bytes.")
    words = np.frombuffer(buffer, dtype='<u8').astype(RING_DTYPE)
    return words if shape is None else words.reshape(shape)


def ring_element_bytes(value: int) -> bytes:
    """Serializes one ring element (exactly 8 bytes, little-endian)."""
    return struct.pack('<Q', int(value) % RING_MODULUS)


@dataclass(frozen=True)
class FixedPointCodec:
    """
    Fixed-point codec mapping reals to ring residues at scale ``base ** frac_digits``.

    Attributes:
        base (int): Radix of the scale. Defaults to 10.
        frac_digits (int): Number of fractional digits ``f``. Defaults to 5.
        max_magnitude (float): Largest encodable absolute value. Defaults to ``2**40 / scale``.

    Example:

        .. code-block:: python

            codec = FixedPointCodec()
            codec.scale              # 100000
            codec.encode(0.123456)   # array(12346, dtype=uint64)
            codec.decode(2**64 - 1)  # -1e-05

            binary = FixedPointCodec(base=2, frac_digits=16)

    """
    base: int = 10
    frac_digits: int = 5
    max_magnitude: float = None

    def __post_init__(self):
        if self.base < 2:
            raise ValueError(f"Codec base must be at least 2, got {self.base}.")
        if self.frac_digits < 1:
            raise ValueError(f"Codec needs at least one fractional digit, got {self.frac_digits}.")
        if self.max_magnitude is None:
            object.__setattr__(self, 'max_magnitude', 2.0 ** 40 / self.scale)

    @property
    def scale(self) -> int:
        """Integer scale ``base ** frac_digits``."""
        return self.base ** self.frac_digits

    @property
    def resolution(self) -> float:
        """One unit in the last place, ``1 / scale``."""
        return 1.0 / self.scale

    def encode(self, x, scale_exponent: int = 1) -> np.ndarray:
        """
        Encodes reals as ring residues at ``scale ** scale_exponent``.

        Args:
            x (float | np.ndarray): Values to encode.
            scale_exponent (int): Number of scale factors to apply. ``0`` encodes integers as-is.

        Returns:
            np.ndarray: ``uint64`` residues, same shape as ``x``.

        Raises:
            ValueError: If any ``|x| > max_magnitude`` or any value is not finite.
        """
        values = np.asarray(x, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise ValueError("Cannot encode non-finite values.")
        if scale_exponent >= 1 and np.any(np.abs(values) > self.max_magnitude):
            raise ValueError(f"Value out of fixed-point range: |x| must be <= {self.max_magnitude:.6g}, "
                             f"got {np.max(np.abs(values)):.6g}.")
        scaled = values * float(self.scale ** scale_exponent)
        rounded = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
        return rounded.astype(np.int64).astype(RING_DTYPE)

    def decode(self, e, scale_exponent: int = 1) -> np.ndarray:
        """
        Decodes residues into reals using the signed interpretation.

        Args:
            e (np.ndarray | int): Residues.
            scale_exponent (int): Number of scale factors carried by ``e``.

        Returns:
            np.ndarray: ``float64`` values.
        """
        return to_signed(as_ring(e)).astype(np.float64) / float(self.scale ** scale_exponent)

    def to_dict(self) -> dict:
        return {'base': self.base, 'frac_digits': self.frac_digits}
