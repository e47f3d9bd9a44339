"""
A trusted, non-colluding dealer that generates the correlated randomness consumed by
:mod:`ppcl.mpc.shares` and never sees any data share.

Randomness comes in four kinds (:class:`RandomnessKind`), each keyed by the tensor shape it serves:

* ``MUL`` - elementwise Beaver triples,
* ``MATMUL`` - matrix triples for an ``(m, k, n)`` product,
* ``TRUNC`` - truncation pairs,
* ``CMP`` - comparison tuples for :func:`ppcl.mpc.shares.msb`.

:func:`plan_budget` derives the exact number of items of every key a secure training phase will
consume, before training starts. In offline mode :meth:`Dealer.run_offline` generates the whole budget
from its seed and streams every party's shares over ``RANDOMNESS``-tagged messages; each party keeps
them in a :class:`RandomnessPool`. Running out of a key in offline mode is a protocol error. The
on-demand mode (:meth:`Dealer.provide`) generates one item per request.

Triple files use the same per-party encoding as the wire: for each key a section header (kind byte,
little-endian 32-bit count, spec as a rank byte plus 32-bit dims) followed by ``count`` items, each
item being the party's component blocks in the share-block serialization.

"""
from collections import Counter, defaultdict, deque
from dataclasses import dataclass, field
from enum import IntEnum
import os
import struct
from typing import NamedTuple
import numpy as np

from .ring_fixed import RING_DTYPE, RING_MODULUS, SHIFT_MSB, FixedPointCodec, ring_matmul
from .shares import (AND_GATES_PER_CMP, BITS_SCALE_MARKER, BeaverTriple, ComparisonTuple, SharedBits, SharedTensor,
                     TruncationPair, deserialize_block, serialize_block, share_bits, share_ring)
from .transport import DEALER, MessageType, Network, PhaseTag, ProtocolError
from ..utils.constants import Method


class RandomnessKind(IntEnum):
    MUL = 1
    MATMUL = 2
    TRUNC = 3
    CMP = 4


class RandomnessKey(NamedTuple):
    kind: RandomnessKind
    spec: tuple

    def __str__(self):
        return f"{self.kind.name}{self.spec}"


@dataclass
class RandomnessBudget:
    """
    Item counts per :class:`RandomnessKey`.

    The same type records a plan (what the dealer generates) and consumption (what the parties used).
    Budgets add up with ``+`` so the plans of several secure phases can be combined.
    """
    counts: Counter = field(default_factory=Counter)

    def add(self, kind: RandomnessKind, spec, n: int = 1):
        if n > 0:
            self.counts[RandomnessKey(RandomnessKind(kind), tuple(int(s) for s in spec))] += n

    def __add__(self, other: 'RandomnessBudget') -> 'RandomnessBudget':
        return RandomnessBudget(self.counts + other.counts)

    def __eq__(self, other):
        return isinstance(other, RandomnessBudget) and +self.counts == +other.counts

    def total(self, kind: RandomnessKind = None) -> int:
        """Number of items, optionally restricted to one kind."""
        return sum(n for key, n in self.counts.items() if kind is None or key.kind == kind)

    def elements(self, kind: RandomnessKind) -> int:
        """Number of tensor elements covered by items of ``kind`` (matrix triples count ``m*k*n``)."""
        return sum(n * int(np.prod(key.spec)) for key, n in self.counts.items() if key.kind == kind)

    def remaining(self, consumed: 'RandomnessBudget') -> 'RandomnessBudget':
        return RandomnessBudget(self.counts - consumed.counts)

    def keys(self) -> list[RandomnessKey]:
        return sorted(self.counts)

    def to_records(self) -> list[dict]:
        return [{'kind': key.kind.name, 'spec': 'x'.join(map(str, key.spec)), 'count': self.counts[key]}
                for key in self.keys()]


def _plan_activation(budget: RandomnessBudget, activation: str, shape: tuple):
    n = 2 if activation == 'semi_sigmoid' else 1
    budget.add(RandomnessKind.CMP, shape, n)
    budget.add(RandomnessKind.MUL, shape, n)


def plan_forward(layer_sizes, activations, batch_size: int, budget: RandomnessBudget = None) -> RandomnessBudget:
    """
    Randomness consumed by one secure forward pass of a dense network on one batch.

    Each layer needs one matrix triple ``(batch, fan_in, fan_out)``, one truncation pair and the
    activation's comparison tuples and triples.
    """
    budget = budget if budget is not None else RandomnessBudget()
    for fan_in, fan_out, activation in zip(layer_sizes[:-1], layer_sizes[1:], activations):
        budget.add(RandomnessKind.MATMUL, (batch_size, fan_in, fan_out))
        budget.add(RandomnessKind.TRUNC, (batch_size, fan_out))
        _plan_activation(budget, activation, (batch_size, fan_out))
    return budget


def plan_train_step(layer_sizes, activations, batch_size: int, budget: RandomnessBudget = None) -> RandomnessBudget:
    """Randomness consumed by one secure SGD step (forward, MSE backward, L2 update) on one batch."""
    budget = plan_forward(layer_sizes, activations, batch_size, budget)
    sizes = list(layer_sizes)
    budget.add(RandomnessKind.MUL, (batch_size, sizes[-1]))
    budget.add(RandomnessKind.TRUNC, (batch_size, sizes[-1]))
    for layer in range(len(sizes) - 1, 0, -1):
        fan_in, fan_out = sizes[layer - 1], sizes[layer]
        budget.add(RandomnessKind.MATMUL, (fan_out, batch_size, fan_in))
        budget.add(RandomnessKind.TRUNC, (fan_out, fan_in))
        if layer > 1:
            budget.add(RandomnessKind.MATMUL, (batch_size, fan_out, fan_in))
            budget.add(RandomnessKind.TRUNC, (batch_size, fan_in))
            budget.add(RandomnessKind.MUL, (batch_size, fan_in))
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        budget.add(RandomnessKind.TRUNC, (fan_out, fan_in), 2)
        budget.add(RandomnessKind.TRUNC, (fan_out,), 2)
    return budget


def epoch_batch_sizes(n_samples: int, batch_size: int) -> list[int]:
    """Rows of every step of one epoch over ``n_samples`` rows, the last batch possibly partial."""
    full, last = divmod(n_samples, batch_size)
    return [batch_size] * full + ([last] if last else [])


def plan_budget(arch, n_batches: int, n_epochs: int, method, *, batch_size: int = 32, batch_sizes=None,
                inference_batch_sizes=(), party_count: int = 2) -> RandomnessBudget:
    """
    Exact randomness needed by one party's secure phase of a training scenario.

    Secure scopes per method:

    * ``CTFE`` - the whole network is trained on the other party's shared subset.
    * ``SFE`` - only the classifier (``layer_sizes[fe_layers:]``) is trained.
    * ``LTFE`` - secure feature-extractor forward passes over ``inference_batch_sizes`` plus training of
      a classifier whose input width is ``party_count * q``.
    * ``NC`` - nothing.

    Args:
        arch: Model configuration with ``layer_sizes``, ``fe_layers``, ``hidden_activation`` and
            ``output_activation`` (:class:`ppcl.learning.tensor_nn.ModelConfig`).
        n_batches (int): Training steps per epoch when all batches have ``batch_size`` rows.
        n_epochs (int): Number of secure epochs.
        method (Method | str): Scenario.
        batch_size (int): Rows per batch.
        batch_sizes (list[int], optional): Explicit rows of every step in an epoch (overrides
            ``n_batches``/``batch_size``; covers a final partial batch).
        inference_batch_sizes (list[int]): Rows of every secure extractor forward batch (LTFE only).
        party_count (int): Number of parties.

    Returns:
        RandomnessBudget: Item counts per key.

    Example:

        .. code-block:: python

            budget = plan_budget(ModelConfig(), n_batches=7, n_epochs=1, method='sfe')
            budget.total(RandomnessKind.MATMUL)   # 14: forward + weight gradient per step

    """
    method = Method(getattr(method, 'value', method))
    sizes = [int(s) for s in arch.layer_sizes]
    hidden, output = _activation_names(arch)
    steps = list(batch_sizes) if batch_sizes is not None else [batch_size] * n_batches
    budget = RandomnessBudget()
    if method == Method.NC:
        return budget
    if method == Method.CTFE:
        train_sizes = sizes
    elif method == Method.SFE:
        train_sizes = sizes[arch.fe_layers:]
    else:
        train_sizes = [party_count * sizes[arch.fe_layers]] + sizes[arch.fe_layers + 1:]
        fe_sizes = sizes[:arch.fe_layers + 1]
        for rows in inference_batch_sizes:
            plan_forward(fe_sizes, [hidden] * arch.fe_layers, rows, budget)
    train_acts = [hidden] * (len(train_sizes) - 2) + [output]
    for _ in range(n_epochs):
        for rows in steps:
            if rows > 0:
                plan_train_step(train_sizes, train_acts, rows, budget)
    return budget


def _activation_names(arch) -> tuple[str, str]:
    hidden = getattr(arch.hidden_activation, 'value', arch.hidden_activation)
    output = getattr(arch.output_activation, 'value', arch.output_activation)
    return hidden, output


def _uniform(rng: np.random.Generator, shape: tuple) -> np.ndarray:
    return rng.integers(0, RING_MODULUS, size=shape, dtype=RING_DTYPE, endpoint=False)


def gen_beaver(spec, rng: np.random.Generator, party_count: int = 2, codec: FixedPointCodec = None,
               matmul: bool = False) -> BeaverTriple:
    """
    Generates an elementwise triple for shape ``spec`` or a matrix triple for ``spec = (m, k, n)``.
    """
    codec = codec or FixedPointCodec()
    if matmul:
        m, k, n = spec
        a, b = _uniform(rng, (m, k)), _uniform(rng, (k, n))
        c = ring_matmul(a, b)
    else:
        a, b = _uniform(rng, tuple(spec)), _uniform(rng, tuple(spec))
        c = a * b
    return BeaverTriple(*(SharedTensor(share_ring(v, party_count, rng), 0, codec) for v in (a, b, c)), matmul=matmul)


def gen_trunc_pair(shape, rng: np.random.Generator, party_count: int = 2,
                   codec: FixedPointCodec = None) -> TruncationPair:
    """Generates ``r_big`` uniform, ``r_small = floor(r_big / scale)`` and ``r_msb``."""
    codec = codec or FixedPointCodec()
    r_big = _uniform(rng, tuple(shape))
    r_small = r_big // np.uint64(codec.scale)
    r_msb = r_big >> SHIFT_MSB
    return TruncationPair(*(SharedTensor(share_ring(v, party_count, rng), 0, codec) for v in (r_big, r_small, r_msb)))


def gen_cmp_tuple(shape, rng: np.random.Generator, party_count: int = 2,
                  codec: FixedPointCodec = None) -> ComparisonTuple:
    """Generates the mask, its XOR-shared bits, the result mask and the prefix-circuit AND triples."""
    codec = codec or FixedPointCodec()
    shape = tuple(shape)
    r = _uniform(rng, shape)
    rho = _uniform(rng, shape)
    and_a = _uniform(rng, (AND_GATES_PER_CMP,) + shape)
    and_b = _uniform(rng, (AND_GATES_PER_CMP,) + shape)
    return ComparisonTuple(r=SharedTensor(share_ring(r, party_count, rng), 0, codec),
                           r_bits=share_bits(r, party_count, rng),
                           mask_bits=share_bits(rho, party_count, rng),
                           mask_lsb=SharedTensor(share_ring(rho & np.uint64(1), party_count, rng), 0, codec),
                           and_a=share_bits(and_a, party_count, rng),
                           and_b=share_bits(and_b, party_count, rng),
                           and_c=share_bits(and_a & and_b, party_count, rng))


def _components(item) -> list[tuple[int, np.ndarray]]:
    """(scale byte, stacked shares) for every component of a randomness item."""
    if isinstance(item, BeaverTriple):
        return [(0, item.a.shares), (0, item.b.shares), (0, item.c.shares)]
    if isinstance(item, TruncationPair):
        return [(0, item.r_big.shares), (0, item.r_small.shares), (0, item.r_msb.shares)]
    return [(0, item.r.shares), (BITS_SCALE_MARKER, item.r_bits.shares), (BITS_SCALE_MARKER, item.mask_bits.shares),
            (0, item.mask_lsb.shares), (BITS_SCALE_MARKER, item.and_a.shares),
            (BITS_SCALE_MARKER, item.and_b.shares), (BITS_SCALE_MARKER, item.and_c.shares)]


_N_COMPONENTS = {RandomnessKind.MUL: 3, RandomnessKind.MATMUL: 3, RandomnessKind.TRUNC: 3, RandomnessKind.CMP: 7}


def _section_header(key: RandomnessKey, count: int) -> bytes:
    return (struct.pack('<BIB', int(key.kind), count, len(key.spec))
            + struct.pack(f'<{len(key.spec)}I', *key.spec))


def pack_party_items(key: RandomnessKey, items: list, party: int) -> bytes:
    """Serializes party ``party``'s shares of ``items`` (all of ``key``) as one section."""
    body = b''.join(serialize_block(shares[party], scale) for item in items for scale, shares in _components(item))
    return _section_header(key, len(items)) + body


def unpack_party_items(buffer: bytes) -> list[tuple[RandomnessKey, list[np.ndarray]]]:
    """
    Parses every section of a randomness payload or triple file.

    Returns:
        list: ``(key, component_arrays)`` per item, in order.
    """
    items = []
    offset = 0
    while offset < len(buffer):
        kind, count, rank = struct.unpack_from('<BIB', buffer, offset)
        offset += 6
        spec = struct.unpack_from(f'<{rank}I', buffer, offset)
        offset += 4 * rank
        key = RandomnessKey(RandomnessKind(kind), tuple(spec))
        for _ in range(count):
            components = []
            for _ in range(_N_COMPONENTS[key.kind]):
                _, values, offset = deserialize_block(buffer, offset)
                components.append(values)
            items.append((key, components))
    return items


def assemble_item(key: RandomnessKey, per_party: list[list[np.ndarray]], codec: FixedPointCodec):
    """Rebuilds a randomness object from every party's components."""
    stacked = [np.stack([components[i] for components in per_party]) for i in range(_N_COMPONENTS[key.kind])]
    if key.kind in (RandomnessKind.MUL, RandomnessKind.MATMUL):
        return BeaverTriple(*(SharedTensor(s, 0, codec) for s in stacked), matmul=key.kind == RandomnessKind.MATMUL)
    if key.kind == RandomnessKind.TRUNC:
        return TruncationPair(*(SharedTensor(s, 0, codec) for s in stacked))
    r, r_bits, mask_bits, mask_lsb, and_a, and_b, and_c = stacked
    return ComparisonTuple(r=SharedTensor(r, 0, codec), r_bits=SharedBits(r_bits), mask_bits=SharedBits(mask_bits),
                           mask_lsb=SharedTensor(mask_lsb, 0, codec), and_a=SharedBits(and_a),
                           and_b=SharedBits(and_b), and_c=SharedBits(and_c))


def write_triple_file(path: str, sections: list[tuple[RandomnessKey, list]], party: int):
    """Writes party ``party``'s shares of several keys' items into one triple file."""
    with open(path, 'wb') as triple_file:
        for key, items in sections:
            triple_file.write(pack_party_items(key, items, party))


def read_triple_file(path: str) -> list[tuple[RandomnessKey, list[np.ndarray]]]:
    """Reads a triple file written by :func:`write_triple_file`."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"Triple file {path} not found.")
    with open(path, 'rb') as triple_file:
        return unpack_party_items(triple_file.read())


class Dealer:
    """
    Trusted dealer streaming correlated randomness to the parties of one :class:`Network`.

    The dealer's output is a function of its seed and of the sequence of keys it is asked for; it
    keeps no copy of what it sends.

    Args:
        network (Network): Session network (the dealer sends as :data:`ppcl.mpc.transport.DEALER`).
        codec (FixedPointCodec): Codec whose scale the truncation pairs divide by.
        seed (int): Dealer seed.
        verbose (bool): Print progress.
    """

    def __init__(self, network: Network, codec: FixedPointCodec = None, seed: int = 0, verbose: bool = False):
        self.network = network
        self.codec = codec or FixedPointCodec()
        self.rng = np.random.default_rng(seed)
        self.generated = RandomnessBudget()
        self.offline_complete = False
        self.verbose = verbose

    @property
    def party_count(self) -> int:
        return self.network.party_count

    def generate(self, key: RandomnessKey):
        """Generates one item for ``key``."""
        if key.kind == RandomnessKind.MUL:
            item = gen_beaver(key.spec, self.rng, self.party_count, self.codec)
        elif key.kind == RandomnessKind.MATMUL:
            item = gen_beaver(key.spec, self.rng, self.party_count, self.codec, matmul=True)
        elif key.kind == RandomnessKind.TRUNC:
            item = gen_trunc_pair(key.spec, self.rng, self.party_count, self.codec)
        else:
            item = gen_cmp_tuple(key.spec, self.rng, self.party_count, self.codec)
        self.generated.add(key.kind, key.spec)
        return item

    def _distribute(self, key: RandomnessKey, items: list):
        for party in range(self.party_count):
            self.network.send(DEALER, party, pack_party_items(key, items, party), PhaseTag.RANDOMNESS,
                              MessageType.RANDOMNESS)

    def run_offline(self, budget: RandomnessBudget):
        """Generates and streams the whole budget, key by key in sorted order."""
        if self.verbose:
            print(f"(Info): Dealer generating {budget.total()} randomness items offline.")
        for key in budget.keys():
            for _ in range(budget.counts[key]):
                self._distribute(key, [self.generate(key)])
        self.offline_complete = True

    def provide(self, key: RandomnessKey):
        """On-demand generation of one item for ``key``."""
        self._distribute(key, [self.generate(key)])

    def export_offline(self, budget: RandomnessBudget, directory: str) -> list[str]:
        """
        Generates the budget into triple files, one per party per kind, instead of streaming it.

        Returns:
            list[str]: Paths written.
        """
        os.makedirs(directory, exist_ok=True)
        by_kind = defaultdict(list)
        for key in budget.keys():
            by_kind[key.kind].append((key, [self.generate(key) for _ in range(budget.counts[key])]))
        paths = []
        for kind, sections in sorted(by_kind.items()):
            for party in range(self.party_count):
                path = os.path.join(directory, f"{kind.name.lower()}_party{party + 1}.triples")
                write_triple_file(path, sections, party)
                paths.append(path)
        self.offline_complete = True
        return paths


class RandomnessPool:
    """
    One party's FIFO queues of received randomness, per key.

    Args:
        party (int): Owning party.
        network (Network): Session network the dealer streams on.
    """

    def __init__(self, party: int, network: Network):
        self.party = party
        self.network = network
        self._queues = defaultdict(deque)

    def drain(self):
        """Moves every pending dealer message into the queues."""
        while self.network.pending(DEALER, self.party):
            msg = self.network.recv(DEALER, self.party, PhaseTag.RANDOMNESS)
            for key, components in unpack_party_items(msg.payload):
                self._queues[key].append(components)

    def load_file(self, path: str):
        """Queues every item of a triple file."""
        for key, components in read_triple_file(path):
            self._queues[key].append(components)

    def available(self, key: RandomnessKey) -> int:
        return len(self._queues[key])

    def take(self, key: RandomnessKey) -> list[np.ndarray]:
        """
        Pops the next item for ``key``.

        Raises:
            ProtocolError: If no item is left.
        """
        if not self._queues[key]:
            raise ProtocolError(f"Randomness budget exhausted for {key} at party {self.party + 1}.")
        return self._queues[key].popleft()
