"""Role-tagged message channel between party A and party B.

Frames on the wire::

    u32 total_length | u8 protocol_id | u8 step_id | u32 instance (0xFFFFFFFF = none)
    | u16 count | count x (u32 length | big-endian unsigned integer)

``total_length`` counts the bytes after itself.  A session runs a reader thread that
demultiplexes incoming frames into one FIFO per ``instance_index`` so independent
per-instance protocol streams can share one connection.
"""

from __future__ import annotations

import enum
import hashlib
import logging
import queue
import socket
import struct
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

from .crypto import Ciphertext, PaillierPrivateKey, PaillierPublicKey
from .errors import DesyncError, NegotiationError, TransportError

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
NO_INSTANCE = 0xFFFFFFFF
DEFAULT_TIMEOUT = 60.0


class ProtocolId(enum.IntEnum):
    HANDSHAKE = 0
    UNIFY = 1
    SPLIT = 2
    COMPARE = 3
    MULTIPLY = 4
    SPL = 5
    SPC = 6
    SBC = 7
    BOUND = 8
    TRUNCATE = 9


class PartyRole(enum.Enum):
    A = "A"
    B = "B"

    @property
    def other(self) -> "PartyRole":
        return PartyRole.B if self is PartyRole.A else PartyRole.A


@dataclass(frozen=True)
class Message:
    protocol_id: int
    step_id: int
    instance_index: Optional[int]
    payload: tuple
    width: Optional[int] = None  # fixed byte width for every integer, hides value sizes

    def to_bytes(self) -> bytes:
        return encode_frame(self)


def encode_frame(msg: Message) -> bytes:
    if len(msg.payload) > 0xFFFF:
        raise TransportError("payload too long for one frame")
    instance = NO_INSTANCE if msg.instance_index is None else msg.instance_index
    body = bytearray(struct.pack(">BBIH", msg.protocol_id, msg.step_id, instance, len(msg.payload)))
    for v in msg.payload:
        v = int(v)
        if v < 0:
            raise TransportError("payload integers must be non-negative")
        width = msg.width or max(1, (v.bit_length() + 7) // 8)
        body += struct.pack(">I", width) + v.to_bytes(width, "big")
    return struct.pack(">I", len(body)) + bytes(body)


def decode_frame(frame: bytes) -> Message:
    """Inverse of :func:`encode_frame`; ``frame`` includes the length prefix."""
    (total,) = struct.unpack_from(">I", frame, 0)
    if total != len(frame) - 4:
        raise TransportError("frame length mismatch")
    pid, step, instance, count = struct.unpack_from(">BBIH", frame, 4)
    offset = 12
    payload = []
    for _ in range(count):
        (length,) = struct.unpack_from(">I", frame, offset)
        offset += 4
        payload.append(int.from_bytes(frame[offset:offset + length], "big"))
        offset += length
    if offset != len(frame):
        raise TransportError("trailing bytes in frame")
    return Message(pid, step, None if instance == NO_INSTANCE else instance, tuple(payload))


# -- channels ----------------------------------------------------------------------

class MemoryChannel:
    """One end of an in-process duplex byte-frame pipe."""

    def __init__(self, inbox: "queue.Queue[Optional[bytes]]", outbox: "queue.Queue[Optional[bytes]]"):
        self._inbox, self._outbox = inbox, outbox

    @staticmethod
    def pair() -> tuple["MemoryChannel", "MemoryChannel"]:
        q1, q2 = queue.Queue(), queue.Queue()
        return MemoryChannel(q1, q2), MemoryChannel(q2, q1)

    def send_frame(self, frame: bytes) -> None:
        self._outbox.put(frame)

    def recv_frame(self) -> Optional[bytes]:
        return self._inbox.get()

    def close(self) -> None:
        self._outbox.put(None)


class SocketChannel:
    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def send_frame(self, frame: bytes) -> None:
        try:
            self._sock.sendall(frame)
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from exc

    def _read_exact(self, n: int) -> Optional[bytes]:
        buf = bytearray()
        while len(buf) < n:
            try:
                chunk = self._sock.recv(n - len(buf))
            except OSError:
                return None
            if not chunk:
                return None
            buf += chunk
        return bytes(buf)

    def recv_frame(self) -> Optional[bytes]:
        head = self._read_exact(4)
        if head is None:
            return None
        (length,) = struct.unpack(">I", head)
        body = self._read_exact(length)
        return None if body is None else head + body

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


# -- session -----------------------------------------------------------------------

@dataclass(frozen=True)
class SessionParams:
    """Parameters both parties must agree on before any protocol runs."""

    magnification: int = 10_000
    key_bits: int = 256
    cmp_bits: int = 60
    pieces: int = 10
    sqrt_pieces: int = 64
    version: int = PROTOCOL_VERSION

    def as_tuple(self) -> tuple[int, ...]:
        return (self.version, self.magnification, self.key_bits, self.cmp_bits, self.pieces, self.sqrt_pieces)


@dataclass
class TranscriptRecord:
    protocol_id: int
    step_id: int
    direction: str
    nbytes: int
    digest: str

    def line(self) -> str:
        return f"{self.protocol_id}\t{self.step_id}\t{self.direction}\t{self.nbytes}\t{self.digest}"


class ProtocolSession:
    """A party's end of an authenticated-by-assumption, semi-honest two-party session."""

    def __init__(
        self,
        role: PartyRole,
        channel,
        public_key: PaillierPublicKey,
        private_key: PaillierPrivateKey,
        params: SessionParams,
        timeout: float = DEFAULT_TIMEOUT,
    ):
        self.role = role
        self.channel = channel
        self.public_key = public_key
        self.private_key = private_key
        self.params = params
        self.timeout = timeout
        self.peer_key: Optional[PaillierPublicKey] = None
        self.transcript: list[TranscriptRecord] = []
        self.counters: dict[str, int] = defaultdict(int)
        # protocol results later steps may reuse (e.g. SPL indicators for SPC), keyed by stream
        self.state: dict[Any, Any] = {}
        self._send_lock = threading.Lock()
        self._state_lock = threading.Lock()
        self._streams: dict[Optional[int], queue.Queue] = {}
        self._closed = False
        self._error: Optional[str] = None
        self._reader = threading.Thread(target=self._read_loop, name=f"sag-reader-{role.value}", daemon=True)
        self._reader.start()

    # -- conveniences used by protocol code

    @property
    def M(self) -> int:
        return self.params.magnification

    @property
    def cmp_bits(self) -> int:
        return self.params.cmp_bits

    def own_encrypt(self, m: int) -> Ciphertext:
        return self.private_key.encrypt(int(m) % self.public_key.n)

    def peer_encrypt(self, m: int) -> Ciphertext:
        return self.peer_key.encrypt(int(m) % self.peer_key.n)

    def decrypt_signed(self, ct: Ciphertext) -> int:
        return self.private_key.decrypt_signed(ct)

    def own_ct(self, value: int) -> Ciphertext:
        return Ciphertext(value, self.public_key)

    def peer_ct(self, value: int) -> Ciphertext:
        return Ciphertext(value, self.peer_key)

    def count(self, name: str, k: int = 1) -> None:
        with self._state_lock:
            self.counters[name] += k

    # -- messaging

    def _stream(self, instance: Optional[int]) -> queue.Queue:
        with self._state_lock:
            q = self._streams.get(instance)
            if q is None:
                q = self._streams[instance] = queue.Queue()
            return q

    def _record(self, msg: Message, frame: bytes, direction: str) -> None:
        rec = TranscriptRecord(msg.protocol_id, msg.step_id, direction, len(frame),
                               hashlib.sha256(frame).hexdigest()[:16])
        with self._state_lock:
            self.transcript.append(rec)

    def _read_loop(self) -> None:
        while True:
            frame = self.channel.recv_frame()
            if frame is None:
                break
            try:
                msg = decode_frame(frame)
            except Exception as exc:  # corrupt frame: abort every stream
                self._error = f"undecodable frame: {exc}"
                break
            self._record(msg, frame, "recv")
            self._stream(msg.instance_index).put(msg)
        self._closed = True
        with self._state_lock:
            streams = list(self._streams.values())
        for q in streams:
            q.put(None)

    def send(self, protocol_id: int, step_id: int, payload: Sequence[Any],
             instance: Optional[int] = None, width: Optional[int] = None) -> None:
        values = tuple(int(p.value) if isinstance(p, Ciphertext) else int(p) for p in payload)
        msg = Message(int(protocol_id), step_id, instance, values, width)
        frame = encode_frame(msg)
        with self._send_lock:
            self.channel.send_frame(frame)
        self._record(msg, frame, "send")

    def send_cts(self, protocol_id: int, step_id: int, cts: Sequence[Ciphertext],
                 instance: Optional[int] = None) -> None:
        """Send ciphertexts at the fixed width of their modulus."""
        width = (int(cts[0].pk.nsquare).bit_length() + 7) // 8 if cts else None
        self.send(protocol_id, step_id, cts, instance, width)

    def recv(self, protocol_id: int, step_id: int, instance: Optional[int] = None,
             timeout: Optional[float] = None) -> Message:
        q = self._stream(instance)
        try:
            msg = q.get(timeout=self.timeout if timeout is None else timeout)
        except queue.Empty:
            raise TransportError(
                f"{self.role.value}: timed out waiting for protocol {protocol_id} step {step_id} "
                f"(transcript position {len(self.transcript)})"
            ) from None
        if msg is None:
            q.put(None)
            raise TransportError(self._error or f"{self.role.value}: peer closed the channel")
        if msg.protocol_id != protocol_id or msg.step_id != step_id:
            raise DesyncError(
                f"{self.role.value}: expected protocol {protocol_id} step {step_id}, got "
                f"{msg.protocol_id}/{msg.step_id} on stream {instance} "
                f"(transcript position {len(self.transcript)})"
            )
        return msg

    def recv_cts(self, protocol_id: int, step_id: int, instance: Optional[int] = None,
                 own: bool = True) -> list[Ciphertext]:
        """Receive ciphertexts under our own key (``own``) or under the peer's key."""
        msg = self.recv(protocol_id, step_id, instance)
        pk = self.public_key if own else self.peer_key
        return [Ciphertext(v, pk) for v in msg.payload]

    def close(self) -> None:
        if not self._closed:
            self.channel.close()

    def dump_transcript(self) -> str:
        with self._state_lock:
            return "\n".join(r.line() for r in self.transcript)

    def bytes_sent(self) -> int:
        return sum(r.nbytes for r in self.transcript if r.direction == "send")

    # -- handshake

    def handshake(self) -> None:
        pk = self.public_key
        self.send(ProtocolId.HANDSHAKE, 0, (*self.params.as_tuple(), pk.n, pk.g))
        msg = self.recv(ProtocolId.HANDSHAKE, 0)
        theirs = msg.payload[:6]
        ours = self.params.as_tuple()
        names = ("version", "magnification", "key_bits", "cmp_bits", "pieces", "sqrt_pieces")
        for name, a, b in zip(names, ours, theirs):
            if a != b:
                raise NegotiationError(f"{self.role.value}: parameter {name} mismatch ({a} vs peer {b})")
        peer = PaillierPublicKey(msg.payload[6], msg.payload[7])
        if peer.bits != self.params.key_bits or pk.bits != self.params.key_bits:
            raise NegotiationError(
                f"key size mismatch: configured {self.params.key_bits}, own {pk.bits}, peer {peer.bits}"
            )
        if peer == pk:
            raise NegotiationError("both parties presented the same public key")
        self.peer_key = peer


def open_session(role: PartyRole, channel, keypair, params: SessionParams,
                 timeout: float = DEFAULT_TIMEOUT) -> ProtocolSession:
    pk, sk = keypair
    sess = ProtocolSession(role, channel, pk, sk, params, timeout)
    try:
        sess.handshake()
    except Exception:
        sess.close()
        raise
    return sess


def memory_session_pair(keys_a, keys_b, params: SessionParams, params_b: Optional[SessionParams] = None,
                        timeout: float = DEFAULT_TIMEOUT) -> tuple[ProtocolSession, ProtocolSession]:
    """Two linked sessions over an in-memory channel (handshake run in both roles)."""
    ch_a, ch_b = MemoryChannel.pair()
    results = run_pair(
        lambda: open_session(PartyRole.A, ch_a, keys_a, params, timeout),
        lambda: open_session(PartyRole.B, ch_b, keys_b, params_b or params, timeout),
    )
    return results


def accept(host: str, port: int, role: PartyRole, keypair, params: SessionParams,
           timeout: float = DEFAULT_TIMEOUT) -> ProtocolSession:
    """Listen on ``host:port`` for exactly one peer and run the handshake."""
    with socket.create_server((host, port)) as server:
        server.settimeout(timeout)
        try:
            conn, _ = server.accept()
        except socket.timeout as exc:
            raise TransportError(f"no peer connected to {host}:{port}") from exc
    conn.settimeout(None)
    return open_session(role, SocketChannel(conn), keypair, params, timeout)


def connect(host: str, port: int, role: PartyRole, keypair, params: SessionParams,
            timeout: float = DEFAULT_TIMEOUT) -> ProtocolSession:
    deadline = time.monotonic() + timeout
    while True:
        try:
            sock = socket.create_connection((host, port), timeout=5)
            break
        except OSError as exc:
            if time.monotonic() > deadline:
                raise TransportError(f"cannot reach {host}:{port}: {exc}") from exc
            time.sleep(0.05)
    sock.settimeout(None)
    return open_session(role, SocketChannel(sock), keypair, params, timeout)


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    host, _, port = endpoint.rpartition(":")
    return host or "127.0.0.1", int(port)


def run_pair(fn_a: Callable[[], Any], fn_b: Callable[[], Any]) -> tuple[Any, Any]:
    """Run party A's and party B's halves concurrently and return both results.

    The first exception raised by either side is re-raised after both threads end.
    """
    results: list[Any] = [None, None]
    errors: list[Optional[BaseException]] = [None, None]

    def wrap(i, fn):
        try:
            results[i] = fn()
        except BaseException as exc:  # propagated below
            errors[i] = exc

    tb = threading.Thread(target=wrap, args=(1, fn_b), daemon=True)
    tb.start()
    wrap(0, fn_a)
    tb.join()
    for exc in errors:
        if exc is not None:
            raise exc
    return results[0], results[1]
