"""
A secure-computation session: the network, the dealer, every party's randomness pool and the
convenience operations that fetch the right correlated randomness for each secure primitive.

The session drives all parties from a single thread. Inputs enter with :meth:`MPCSession.share_input`,
where the owner splits its plaintext and sends one share to every other party, and leave with
:meth:`MPCSession.reveal`, where every other party sends its share to the recipient. Everything in between
stays secret-shared.

Example:

    .. code-block:: python

        from ppcl.mpc.dealer import RandomnessBudget, RandomnessKind
        from ppcl.mpc.session import MPCSession

        session = MPCSession(seed=3)
        budget = RandomnessBudget()
        budget.add(RandomnessKind.MUL, (4,))
        budget.add(RandomnessKind.TRUNC, (4,))
        session.prepare(budget)
        with session.network.in_stage('party1/secure_train'):
            x = session.share_input(np.array([0.5, -1.0, 2.0, 0.0]), owner=0)
            y = session.share_input(np.array([2.0, 3.0, -0.25, 7.0]), owner=1)
            z = session.truncate(session.mul(x, y))
            session.reveal(z, to=0)   # array([ 1.  , -3.  , -0.5 ,  0.  ])

"""
import glob
import os
import numpy as np

from .dealer import Dealer, RandomnessBudget, RandomnessKey, RandomnessKind, RandomnessPool, assemble_item
from .ring_fixed import RING_DTYPE, FixedPointCodec
from .shares import (SharedTensor, deserialize_block, matmul_beaver, msb, mul_beaver, mul_public, relu_with_mask,
                     semi_sigmoid_with_mask, serialize_block, share, truncate)
from .transport import MessageType, Network, PhaseTag

RANDOMNESS_MODES = ('offline', 'on_demand')


class MPCSession:
    """
    Two-or-more-party session with a trusted dealer.

    Args:
        party_count (int): Number of computing parties.
        codec (FixedPointCodec, optional): Fixed-point codec. Defaults to base 10, five fractional digits.
        seed (int): Session seed; the session id, the dealer and every party's share generator derive from it.
        randomness_mode (str): ``'offline'`` (the dealer generates the planned budget before any data is
            shared) or ``'on_demand'`` (one item per request).
        transport (str): ``'inprocess'`` or ``'tcp'``.
        record_transcripts (bool): Keep every received frame per party.
        verbose (bool): Print progress.

    Attributes:
        planned (RandomnessBudget): Everything handed to :meth:`prepare`.
        consumed (RandomnessBudget): Everything taken by secure operations.
    """

    def __init__(self, party_count: int = 2, codec: FixedPointCodec = None, seed: int = 0,
                 randomness_mode: str = 'offline', transport: str = 'inprocess', record_transcripts: bool = False,
                 verbose: bool = False):
        if randomness_mode not in RANDOMNESS_MODES:
            raise ValueError(f"Unknown randomness mode '{randomness_mode}'. Use one of {RANDOMNESS_MODES}.")
        self.codec = codec or FixedPointCodec()
        self.seed = seed
        self.randomness_mode = randomness_mode
        self.verbose = verbose
        session_id = int(np.random.SeedSequence(seed).generate_state(1, dtype=np.uint64)[0])
        self.network = Network(party_count, session_id, transport, record_transcripts)
        self.dealer = Dealer(self.network, self.codec, seed=np.random.SeedSequence([seed, 0xD]), verbose=verbose)
        self.pools = [RandomnessPool(party, self.network) for party in self.network.parties]
        self.party_rngs = [np.random.default_rng([seed, 1, party]) for party in self.network.parties]
        self.planned = RandomnessBudget()
        self.consumed = RandomnessBudget()

    @property
    def party_count(self) -> int:
        return self.network.party_count

    @property
    def stats(self):
        return self.network.stats

    def prepare(self, budget: RandomnessBudget):
        """
        Registers a planned budget. In offline mode the dealer generates and streams it immediately,
        under the ``'offline'`` stage.
        """
        self.planned = self.planned + budget
        if self.randomness_mode != 'offline':
            return
        with self.network.in_stage('offline'):
            self.dealer.run_offline(budget)
            for pool in self.pools:
                pool.drain()

    def load_offline(self, directory: str):
        """Fills every party's pool from triple files written by :meth:`Dealer.export_offline`."""
        for party, pool in enumerate(self.pools):
            paths = sorted(glob.glob(os.path.join(directory, f"*_party{party + 1}.triples")))
            if not paths:
                raise FileNotFoundError(f"No triple files for party {party + 1} in {directory}.")
            for path in paths:
                pool.load_file(path)
        self.dealer.offline_complete = True

    def take(self, kind: RandomnessKind, spec):
        """
        Fetches one randomness item from every party's pool and assembles it.

        Raises:
            ProtocolError: If the offline budget for this key is exhausted.
        """
        key = RandomnessKey(RandomnessKind(kind), tuple(int(s) for s in spec))
        if self.randomness_mode == 'on_demand':
            self.dealer.provide(key)
        per_party = []
        for pool in self.pools:
            pool.drain()
            per_party.append(pool.take(key))
        self.consumed.add(key.kind, key.spec)
        return assemble_item(key, per_party, self.codec)

    def budget_matches(self) -> bool:
        """Whether every planned item was consumed and nothing beyond the plan was taken."""
        return self.planned == self.consumed

    def share_input(self, values, owner: int, scale_exponent: int = 1) -> SharedTensor:
        """
        ``owner`` secret-shares ``values`` and sends one share to every other party.

        Returns:
            SharedTensor: The shared input.
        """
        if self.randomness_mode == 'offline':
            assert self.dealer.offline_complete, "Offline randomness must be generated before any data is shared."
        shared = share(values, self.party_count, self.party_rngs[owner], self.codec, scale_exponent)
        rows = [None] * self.party_count
        rows[owner] = shared.shares[owner]
        for party in self.network.parties:
            if party != owner:
                self.network.send(owner, party, serialize_block(shared.shares[party], scale_exponent),
                                  PhaseTag.SECURE_TRAIN, MessageType.SHARES)
        for party in self.network.parties:
            if party != owner:
                _, rows[party], _ = deserialize_block(self.network.recv(owner, party, PhaseTag.SECURE_TRAIN).payload)
        return SharedTensor.from_party_shares(rows, scale_exponent, self.codec)

    def reveal(self, t: SharedTensor, to: int) -> np.ndarray:
        """Every party but ``to`` sends its share to ``to``, which decodes the value."""
        for party in self.network.parties:
            if party != to:
                self.network.send(party, to, serialize_block(t.shares[party], t.scale_exponent),
                                  PhaseTag.SECURE_TRAIN, MessageType.REVEAL)
        total = np.array(t.shares[to], dtype=RING_DTYPE)
        for party in self.network.parties:
            if party != to:
                _, values, _ = deserialize_block(self.network.recv(party, to, PhaseTag.SECURE_TRAIN).payload)
                total += values
        return self.codec.decode(total, t.scale_exponent)

    def mul(self, x: SharedTensor, y: SharedTensor) -> SharedTensor:
        return mul_beaver(x, y, self.take(RandomnessKind.MUL, x.shape), self.network)

    def matmul(self, x: SharedTensor, y: SharedTensor) -> SharedTensor:
        spec = (x.shape[0], x.shape[-1], y.shape[-1])
        return matmul_beaver(x, y, self.take(RandomnessKind.MATMUL, spec), self.network)

    def truncate(self, t: SharedTensor) -> SharedTensor:
        return truncate(t, self.take(RandomnessKind.TRUNC, t.shape), self.network)

    def matmul_fixed(self, x: SharedTensor, y: SharedTensor) -> SharedTensor:
        """Fixed-point matrix product (matrix triple plus truncation)."""
        return self.truncate(self.matmul(x, y))

    def mul_real(self, x: SharedTensor, c) -> SharedTensor:
        """Product with a public real constant, truncated back to the scale of ``x``."""
        return self.truncate(mul_public(x, c))

    def msb(self, t: SharedTensor) -> SharedTensor:
        return msb(t, self.take(RandomnessKind.CMP, t.shape), self.network)

    def relu_with_mask(self, t: SharedTensor) -> tuple[SharedTensor, SharedTensor]:
        return relu_with_mask(t, self.take(RandomnessKind.CMP, t.shape), self.take(RandomnessKind.MUL, t.shape),
                              self.network)

    def semi_sigmoid_with_mask(self, t: SharedTensor) -> tuple[SharedTensor, SharedTensor]:
        cmps = [self.take(RandomnessKind.CMP, t.shape) for _ in range(2)]
        triples = [self.take(RandomnessKind.MUL, t.shape) for _ in range(2)]
        return semi_sigmoid_with_mask(t, cmps, triples, self.network)

    def activate(self, t: SharedTensor, activation: str) -> tuple[SharedTensor, SharedTensor]:
        """Applies ``'relu'`` or ``'semi_sigmoid'``; returns the activation and its derivative mask."""
        if activation == 'relu':
            return self.relu_with_mask(t)
        if activation == 'semi_sigmoid':
            return self.semi_sigmoid_with_mask(t)
        raise ValueError(f"Unsupported secure activation '{activation}'.")

    def close(self):
        self.network.close()
