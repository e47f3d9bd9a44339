"""
Party identities, wire framing and the communication fabric used by the secure-computation engine.

Every message travelling between two parties (or from the dealer to a party) is a :class:`Message`
serialized into a fixed 29-byte header followed by its payload:

=========== ======= ===============================================
field       bytes   encoding
=========== ======= ===============================================
magic       4       ``b"SCOL"`` (0x53434F4C)
version     1       ``0x01``
msg_type    1       :class:`MessageType`
session_id  8       little-endian unsigned
sender      1       party index or :data:`DEALER`
receiver    1       party index or :data:`DEALER`
phase_tag   1       :class:`PhaseTag`
sequence    8       little-endian, strictly increasing per channel
payload_len 4       little-endian
=========== ======= ===============================================

:class:`Network` owns one directed channel per (sender, receiver) pair. The default backend keeps
frames in in-process FIFO queues and all parties advance in round-robin order at each opening, which
makes transcripts byte-identical between runs. The ``"tcp"`` backend carries the same frames over
local socket pairs.

All traffic is accounted in :class:`TrafficStats` under the current stage label and the message's
phase tag. Only payload bytes are counted; the fixed header is not.

"""
from collections import defaultdict, deque
from contextlib import contextmanager
from dataclasses import dataclass
from enum import IntEnum
import hashlib
import queue
import socket
import struct
import threading
import time
from typing import Iterator, Sequence
import numpy as np
from scipy import stats as sp_stats

from .ring_fixed import RING_DTYPE, ring_from_bytes, ring_to_bytes

DEALER = 0xFF
WIRE_MAGIC = b"SCOL"
WIRE_VERSION = 0x01
_HEADER = struct.Struct('<4sBBQBBBQI')
HEADER_SIZE = _HEADER.size


class ProtocolError(RuntimeError):
    """Raised when parties deviate from the expected protocol flow (reuse, exhaustion, mismatch)."""


class TransportError(ConnectionError):
    """Raised when a channel is closed or a frame cannot be delivered."""


class PhaseTag(IntEnum):
    LOCAL_TRAIN = 0
    SECURE_TRAIN = 1
    OPEN = 2
    RANDOMNESS = 3
    CONTROL = 4


class MessageType(IntEnum):
    SHARES = 1
    BITS = 2
    RANDOMNESS = 3
    REVEAL = 4
    CONTROL = 5


def party_label(party: int) -> str:
    """Human-readable party name used in reports: ``party1``, ``party2``, ..., ``dealer``."""
    return 'dealer' if party == DEALER else f'party{party + 1}'


@dataclass(frozen=True)
class Message:
    """
    One framed message.

    Attributes:
        session_id (int): 64-bit session identifier.
        sender (int): Sending party index or :data:`DEALER`.
        receiver (int): Receiving party index or :data:`DEALER`.
        phase_tag (PhaseTag): Accounting phase.
        sequence (int): Per-channel sequence number.
        payload (bytes): Serialized share block(s).
        msg_type (MessageType): Payload kind.
    """
    session_id: int
    sender: int
    receiver: int
    phase_tag: PhaseTag
    sequence: int
    payload: bytes
    msg_type: MessageType = MessageType.SHARES


def encode_frame(msg: Message) -> bytes:
    """Serializes a :class:`Message` into its bit-exact wire frame."""
    header = _HEADER.pack(WIRE_MAGIC, WIRE_VERSION, int(msg.msg_type), msg.session_id, msg.sender,
                          msg.receiver, int(msg.phase_tag), msg.sequence, len(msg.payload))
    return header + msg.payload


def decode_frame(frame: bytes) -> Message:
    """
    Parses a wire frame.

    Raises:
        ProtocolError: On bad magic, unknown version or a payload length that disagrees with the header.
    """
    if len(frame) < HEADER_SIZE:
        raise ProtocolError(f"Frame of {len(frame)} bytes is shorter than the {HEADER_SIZE}-byte header.")
    magic, version, msg_type, session_id, sender, receiver, phase, sequence, payload_len = \
        _HEADER.unpack_from(frame, 0)
    if magic != WIRE_MAGIC:
        raise ProtocolError(f"Bad frame magic {magic!r}.")
    if version != WIRE_VERSION:
        raise ProtocolError(f"Unsupported frame version {version}.")
    payload = frame[HEADER_SIZE:]
    if len(payload) != payload_len:
        raise ProtocolError(f"Payload length {len(payload)} does not match header ({payload_len}).")
    return Message(session_id=session_id, sender=sender, receiver=receiver, phase_tag=PhaseTag(phase),
                   sequence=sequence, payload=bytes(payload), msg_type=MessageType(msg_type))


class InProcessChannel:
    """FIFO queue of frames for one directed pair of parties."""

    def __init__(self):
        self._frames = deque()
        self.closed = False

    def put(self, frame: bytes):
        if self.closed:
            raise TransportError("Cannot send on a closed channel.")
        self._frames.append(frame)

    def get(self) -> bytes:
        if self.closed:
            raise TransportError("Cannot receive on a closed channel.")
        if not self._frames:
            raise ProtocolError("Receive on an empty channel: the peer has not sent the expected message.")
        return self._frames.popleft()

    def pending(self) -> int:
        return len(self._frames)

    def close(self):
        self.closed = True


class SocketChannel:
    """
    Directed channel over a local socket pair.

    A reader thread reassembles frames from the byte stream (header first, then ``payload_len``
    bytes) and hands complete frames to a queue, so large sends never block on the receiving side.
    """

    def __init__(self, timeout: float = 30.0):
        self._writer, self._reader = socket.socketpair()
        self._frames = queue.Queue()
        self.timeout = timeout
        self.closed = False
        self._sent = 0
        self._taken = 0
        self._thread = threading.Thread(target=self._pump, daemon=True)
        self._thread.start()

    def _recv_exact(self, size: int) -> bytes:
        chunks = []
        remaining = size
        while remaining:
            chunk = self._reader.recv(min(remaining, 1 << 20))
            if not chunk:
                return None
            chunks.append(chunk)
            remaining -= len(chunk)
        return b''.join(chunks)

    def _pump(self):
        try:
            while True:
                header = self._recv_exact(HEADER_SIZE)
                if header is None:
                    break
                payload_len = struct.unpack_from('<I', header, HEADER_SIZE - 4)[0]
                payload = self._recv_exact(payload_len) if payload_len else b''
                if payload is None:
                    break
                self._frames.put(header + payload)
        except OSError:
            pass
        finally:
            self._frames.put(None)

    def put(self, frame: bytes):
        if self.closed:
            raise TransportError("Cannot send on a closed channel.")
        try:
            self._writer.sendall(frame)
        except OSError as err:
            raise TransportError(f"Socket send failed: {err}") from err
        self._sent += 1

    def get(self) -> bytes:
        try:
            frame = self._frames.get(timeout=self.timeout)
        except queue.Empty as err:
            raise TransportError(f"No frame received within {self.timeout} s.") from err
        if frame is None:
            raise TransportError("Channel closed by peer.")
        self._taken += 1
        return frame

    def pending(self) -> int:
        """Frames written and not yet taken; :meth:`get` blocks until they arrive."""
        return self._sent - self._taken

    def close(self):
        if self.closed:
            return
        self.closed = True
        try:
            self._writer.shutdown(socket.SHUT_WR)
        except OSError:
            pass
        self._thread.join(timeout=self.timeout)
        self._writer.close()
        self._reader.close()


class TrafficStats:
    """
    Byte, message and round counters keyed by ``(stage, phase, party)``.

    ``bytes_out``/``bytes_in`` count payload bytes from the point of view of ``party``; ``rounds``
    counts synchronous openings (one per :meth:`Network.open`, regardless of tensor size) and is
    attributed to every party taking part in the opening. ``millis`` is wall-clock time per
    ``(stage, phase)`` and is excluded from :meth:`counters`.
    """

    def __init__(self):
        self._counts = defaultdict(lambda: [0, 0, 0, 0])
        self._millis = defaultdict(float)

    def register(self, stage: str, phase: PhaseTag, party: int):
        _ = self._counts[(stage, PhaseTag(phase), party)]

    def add_sent(self, stage: str, phase: PhaseTag, party: int, n_bytes: int):
        entry = self._counts[(stage, PhaseTag(phase), party)]
        entry[0] += n_bytes
        entry[2] += 1

    def add_received(self, stage: str, phase: PhaseTag, party: int, n_bytes: int):
        self._counts[(stage, PhaseTag(phase), party)][1] += n_bytes

    def add_round(self, stage: str, parties: Sequence[int]):
        for party in parties:
            self._counts[(stage, PhaseTag.OPEN, party)][3] += 1

    def add_millis(self, stage: str, phase: PhaseTag, millis: float):
        self._millis[(stage, PhaseTag(phase))] += millis

    def _select(self, party=None, phase=None, stage=None):
        for (k_stage, k_phase, k_party), entry in self._counts.items():
            if party is not None and k_party != party:
                continue
            if phase is not None and k_phase != phase:
                continue
            if stage is not None and not k_stage.startswith(stage):
                continue
            yield entry

    def bytes_sent(self, party: int = None, phase: PhaseTag = None, stage: str = None) -> int:
        """Payload bytes sent, optionally filtered by party, phase and stage prefix."""
        return sum(entry[0] for entry in self._select(party, phase, stage))

    def bytes_received(self, party: int = None, phase: PhaseTag = None, stage: str = None) -> int:
        """Payload bytes received, optionally filtered by party, phase and stage prefix."""
        return sum(entry[1] for entry in self._select(party, phase, stage))

    def rounds(self, party: int = 0, stage: str = None) -> int:
        """Number of openings ``party`` took part in."""
        return sum(entry[3] for entry in self._select(party, PhaseTag.OPEN, stage))

    def total_bytes(self, stage: str = None) -> int:
        """Total payload bytes put on the wire by parties and dealer."""
        return self.bytes_sent(stage=stage)

    def millis(self, stage: str = None, phase: PhaseTag = None) -> float:
        return sum(val for (k_stage, k_phase), val in self._millis.items()
                   if (stage is None or k_stage.startswith(stage)) and (phase is None or k_phase == phase))

    def counters(self) -> dict:
        """Deterministic part of the statistics (everything except wall-clock time)."""
        return {key: tuple(val) for key, val in sorted(self._counts.items(), key=lambda kv: (kv[0][0], int(kv[0][1]), kv[0][2]))}

    def to_records(self) -> list[dict]:
        """One record per ``(stage, phase, party)``: stage, phase, party, bytes_out, bytes_in, rounds, millis."""
        records = []
        for (stage, phase, party), (b_out, b_in, _, n_rounds) in self.counters().items():
            records.append({'stage': stage,
                            'phase': phase.name,
                            'party': party_label(party),
                            'bytes_out': b_out,
                            'bytes_in': b_in,
                            'rounds': n_rounds,
                            'millis': round(self._millis.get((stage, phase), 0.0), 3)})
        return records

    def __eq__(self, other):
        return isinstance(other, TrafficStats) and self.counters() == other.counters()


class Network:
    """
    Communication fabric for one session: ``party_count`` parties plus the dealer.

    The engine drives all parties from a single thread. :meth:`open` therefore performs the complete
    all-to-all exchange in round-robin order: every party sends its block to every other party,
    then every party receives and sums.

    Args:
        party_count (int): Number of computing parties (at least 2).
        session_id (int): 64-bit session identifier written into every frame.
        backend (str): ``'inprocess'`` (default) or ``'tcp'``.
        record_transcripts (bool): Keep every frame received by each party for auditing.

    Example:

        .. code-block:: python

            net = Network(party_count=2, session_id=7)
            with net.in_stage('party1/secure_train'):
                opened, = net.open([blocks])   # blocks has shape (2, ...)
            net.stats.rounds(party=0)          # 1

    """

    def __init__(self, party_count: int = 2, session_id: int = 0, backend: str = 'inprocess',
                 record_transcripts: bool = False):
        if party_count < 2:
            raise ValueError(f"A session needs at least two parties, got {party_count}.")
        if backend not in ('inprocess', 'tcp'):
            raise ValueError(f"Unknown transport backend '{backend}'. Use 'inprocess' or 'tcp'.")
        self.party_count = party_count
        self.session_id = int(session_id) % 2 ** 64
        self.backend = backend
        self.stats = TrafficStats()
        self.stage = 'session'
        self.record_transcripts = record_transcripts
        self._transcripts = defaultdict(list)
        self._digest = hashlib.sha256()
        self._send_seq = defaultdict(int)
        self._recv_seq = defaultdict(lambda: -1)
        endpoints = list(range(party_count)) + [DEALER]
        channel_cls = InProcessChannel if backend == 'inprocess' else SocketChannel
        self._channels = {(s, r): channel_cls() for s in endpoints for r in endpoints if s != r}

    @property
    def parties(self) -> range:
        return range(self.party_count)

    @contextmanager
    def in_stage(self, name: str, local: bool = False) -> Iterator[None]:
        """
        Attributes all traffic inside the block to stage ``name`` and records its wall-clock time.

        Args:
            name (str): Stage label, e.g. ``'party1/secure_train'``.
            local (bool): Whether the stage is plaintext local training (time is booked under
                ``LOCAL_TRAIN``) or a secure stage (booked under ``SECURE_TRAIN``).
        """
        previous = self.stage
        self.stage = name
        phases = (PhaseTag.LOCAL_TRAIN,) if local else (PhaseTag.SECURE_TRAIN, PhaseTag.OPEN, PhaseTag.RANDOMNESS)
        for party in self.parties:
            for phase in phases:
                self.stats.register(name, phase, party)
        start = time.perf_counter()
        try:
            yield
        finally:
            self.stats.add_millis(name, PhaseTag.LOCAL_TRAIN if local else PhaseTag.SECURE_TRAIN,
                                  1000.0 * (time.perf_counter() - start))
            self.stage = previous

    def send(self, sender: int, receiver: int, payload: bytes, phase: PhaseTag,
             msg_type: MessageType = MessageType.SHARES) -> Message:
        """Frames ``payload`` and puts it on the ``sender -> receiver`` channel."""
        key = (sender, receiver)
        if key not in self._channels:
            raise TransportError(f"No channel from {party_label(sender)} to {party_label(receiver)}.")
        msg = Message(session_id=self.session_id, sender=sender, receiver=receiver, phase_tag=PhaseTag(phase),
                      sequence=self._send_seq[key], payload=payload, msg_type=msg_type)
        self._send_seq[key] += 1
        frame = encode_frame(msg)
        self._channels[key].put(frame)
        self._digest.update(frame)
        self.stats.add_sent(self.stage, phase, sender, len(payload))
        return msg

    def recv(self, sender: int, receiver: int, phase: PhaseTag) -> Message:
        """
        Takes the next message on the ``sender -> receiver`` channel.

        Raises:
            ProtocolError: If the message has the wrong session, phase tag or a non-increasing sequence.
            TransportError: If the channel is closed.
        """
        key = (sender, receiver)
        if key not in self._channels:
            raise TransportError(f"No channel from {party_label(sender)} to {party_label(receiver)}.")
        frame = self._channels[key].get()
        msg = decode_frame(frame)
        if msg.session_id != self.session_id:
            raise ProtocolError(f"Message from session {msg.session_id} delivered to session {self.session_id}.")
        if msg.phase_tag != phase:
            raise ProtocolError(f"Expected a {PhaseTag(phase).name} message from {party_label(sender)}, "
                                f"got {msg.phase_tag.name}.")
        if msg.sequence <= self._recv_seq[key]:
            raise ProtocolError(f"Out-of-order sequence {msg.sequence} on channel {key}.")
        self._recv_seq[key] = msg.sequence
        if self.record_transcripts:
            self._transcripts[receiver].append(frame)
        self.stats.add_received(self.stage, phase, receiver, len(msg.payload))
        return msg

    def pending(self, sender: int, receiver: int) -> int:
        """Number of frames waiting on a channel."""
        return self._channels[(sender, receiver)].pending()

    def open(self, blocks: Sequence[np.ndarray], xor: bool = False) -> list[np.ndarray]:
        """
        Opens share blocks: all-to-all exchange followed by a modular sum (or XOR).

        All blocks are exchanged in one message per direction, so the call counts as exactly one round.

        Args:
            blocks (Sequence[np.ndarray]): Each of shape ``(party_count, ...)``, one row per party.
            xor (bool): Combine with bitwise XOR instead of addition modulo :math:`2^{64}`.

        Returns:
            list[np.ndarray]: Opened ``uint64`` blocks (one per input block).

        Raises:
            ProtocolError: If a block does not hold one share per party or a received payload does not
                match the expected shapes.
        """
        start = time.perf_counter()
        shapes = []
        for block in blocks:
            if block.shape[0] != self.party_count:
                raise ProtocolError(f"Open expects {self.party_count} share rows, got {block.shape[0]}.")
            shapes.append(block.shape[1:])
        sizes = [int(np.prod(shape, dtype=np.int64)) for shape in shapes]
        msg_type = MessageType.BITS if xor else MessageType.SHARES
        for sender in self.parties:
            payload = b''.join(ring_to_bytes(block[sender]) for block in blocks)
            for receiver in self.parties:
                if receiver != sender:
                    self.send(sender, receiver, payload, PhaseTag.OPEN, msg_type)
        opened_by_party = []
        for receiver in self.parties:
            acc = [np.array(block[receiver], dtype=RING_DTYPE) for block in blocks]
            for sender in self.parties:
                if sender == receiver:
                    continue
                payload = self.recv(sender, receiver, PhaseTag.OPEN).payload
                if len(payload) != 8 * sum(sizes):
                    raise ProtocolError(f"Opened payload of {len(payload)} bytes does not match shapes {shapes}.")
                words = ring_from_bytes(payload)
                offset = 0
                for i, (shape, size) in enumerate(zip(shapes, sizes)):
                    part = words[offset:offset + size].reshape(shape)
                    with np.errstate(over='ignore'):
                        acc[i] = acc[i] ^ part if xor else acc[i] + part
                    offset += size
            opened_by_party.append(acc)
        for acc in opened_by_party[1:]:
            assert all(np.array_equal(a, b) for a, b in zip(acc, opened_by_party[0]))
        self.stats.add_round(self.stage, self.parties)
        self.stats.add_millis(self.stage, PhaseTag.OPEN, 1000.0 * (time.perf_counter() - start))
        return opened_by_party[0]

    def barrier(self):
        """Synchronisation point: every party sends an empty ``CONTROL`` frame to every other party."""
        for sender in self.parties:
            for receiver in self.parties:
                if receiver != sender:
                    self.send(sender, receiver, b'', PhaseTag.CONTROL, MessageType.CONTROL)
        for receiver in self.parties:
            for sender in self.parties:
                if receiver != sender:
                    self.recv(sender, receiver, PhaseTag.CONTROL)

    def transcript(self, party: int) -> list[Message]:
        """Messages received by ``party`` (requires ``record_transcripts=True``)."""
        if not self.record_transcripts:
            raise RuntimeError("Transcripts were not recorded. Create the Network with record_transcripts=True.")
        return [decode_frame(frame) for frame in self._transcripts[party]]

    def transcript_digest(self) -> str:
        """SHA-256 over every frame sent in this session, in send order."""
        return self._digest.hexdigest()

    def close(self):
        for channel in self._channels.values():
            channel.close()


def top_byte_uniformity_pvalue(words: np.ndarray) -> float:
    """
    Chi-square goodness-of-fit p-value of the top 8 bits of 64-bit words against the uniform law.

    Args:
        words (np.ndarray): ``uint64`` values.

    Returns:
        float: p-value of :func:`scipy.stats.chisquare` over 256 bins.
    """
    top = (np.asarray(words, dtype=RING_DTYPE).ravel() >> np.uint64(56)).astype(np.int64)
    counts = np.bincount(top, minlength=256)
    return float(sp_stats.chisquare(counts).pvalue)
