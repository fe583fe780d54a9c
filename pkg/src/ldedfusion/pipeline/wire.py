"""Length-prefixed binary framing for replaying sensor streams over TCP.

Frame layout (little-endian)::

    u16  magic 0x4C44 (bytes b"DL" on the wire)
    u8   topic id: 0 audio, 1 frame, 2 pose
    u64  t_us
    u32  payload length
    ...  payload
         audio: f32 samples
         frame: u16 width, u16 height, u8 pixels (row-major)
         pose:  3 x f64 (x, y, z in mm)
"""

from __future__ import annotations

import socket
import struct
import time
from typing import Callable, Iterable, Iterator, List, Optional, Tuple

import numpy as np

from ..dsp import AudioChunk
from .bus import TimestampedMsg

MAGIC = 0x4C44
HEADER = struct.Struct("<HBQI")
TOPIC_IDS = {"audio": 0, "frame": 1, "pose": 2}
TOPIC_NAMES = {v: k for k, v in TOPIC_IDS.items()}


class WireError(ConnectionError):
    def __init__(self, offset: int, message: str):
        super().__init__(f"byte {offset}: {message}")
        self.offset = offset


def encode_payload(msg: TimestampedMsg) -> bytes:
    if msg.topic == "audio":
        return np.asarray(msg.payload.samples, dtype="<f4").tobytes()
    if msg.topic == "frame":
        img = np.ascontiguousarray(msg.payload, dtype=np.uint8)
        h, w = img.shape
        return struct.pack("<HH", w, h) + img.tobytes()
    if msg.topic == "pose":
        return struct.pack("<3d", *msg.payload)
    raise ValueError(f"no wire encoding for topic {msg.topic!r}")


def encode(msg: TimestampedMsg) -> bytes:
    payload = encode_payload(msg)
    return HEADER.pack(MAGIC, TOPIC_IDS[msg.topic], msg.t_us, len(payload)) + payload


def decode_payload(topic: str, t_us: int, payload: bytes, offset: int, sample_rate_hz: int):
    if topic == "audio":
        if len(payload) % 4:
            raise WireError(offset, f"audio payload of {len(payload)} bytes is not a whole number of f32")
        return AudioChunk(np.frombuffer(payload, dtype="<f4").astype(np.float32), sample_rate_hz, t_us)
    if topic == "frame":
        if len(payload) < 4:
            raise WireError(offset, "frame payload shorter than its size header")
        w, h = struct.unpack_from("<HH", payload)
        if len(payload) != 4 + w * h:
            raise WireError(offset, f"frame payload {len(payload)} bytes does not match {w}x{h}")
        return np.frombuffer(payload, dtype=np.uint8, offset=4).reshape(h, w).copy()
    if len(payload) != 24:
        raise WireError(offset, f"pose payload must be 24 bytes, got {len(payload)}")
    return struct.unpack("<3d", payload)


class Decoder:
    """Incremental decoder; ``offset`` is the stream position of the next unread byte."""

    def __init__(self, sample_rate_hz: int = 44100):
        self.sample_rate_hz = sample_rate_hz
        self._buf = bytearray()
        self.offset = 0

    def feed(self, data: bytes) -> List[TimestampedMsg]:
        self._buf += data
        out = []
        while len(self._buf) >= HEADER.size:
            magic, tid, t_us, n = HEADER.unpack_from(self._buf)
            if magic != MAGIC:
                raise WireError(self.offset, f"bad magic 0x{magic:04X}")
            if tid not in TOPIC_NAMES:
                raise WireError(self.offset + 2, f"unknown topic id {tid}")
            if len(self._buf) < HEADER.size + n:
                break
            payload = bytes(self._buf[HEADER.size:HEADER.size + n])
            topic = TOPIC_NAMES[tid]
            out.append(TimestampedMsg(t_us, topic, decode_payload(topic, t_us, payload, self.offset + HEADER.size,
                                                                 self.sample_rate_hz)))
            del self._buf[:HEADER.size + n]
            self.offset += HEADER.size + n
        return out

    def close(self) -> None:
        if self._buf:
            raise WireError(self.offset, f"truncated frame: {len(self._buf)} trailing bytes")


def decode_all(data: bytes, sample_rate_hz: int = 44100) -> List[TimestampedMsg]:
    dec = Decoder(sample_rate_hz)
    out = dec.feed(data)
    dec.close()
    return out


def paced(messages: Iterable[TimestampedMsg], speed: float,
          clock: Callable[[], float] = time.monotonic, sleep: Callable[[float], None] = time.sleep
          ) -> Iterator[TimestampedMsg]:
    """Release messages at ``speed`` times their timestamp spacing; speed 0 means no pacing."""
    if speed < 0:
        raise ValueError("speed must be >= 0")
    start = t_first = None
    for msg in messages:
        if speed > 0:
            if start is None:
                start, t_first = clock(), msg.t_us
            due = start + (msg.t_us - t_first) / 1e6 / speed
            delay = due - clock()
            if delay > 0:
                sleep(delay)
        yield msg


def parse_address(addr: str) -> Tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address must be host:port, got {addr!r}")
    return host, int(port)


def replay_serve(messages: Iterable[TimestampedMsg], address: Tuple[str, int], speed: float = 0.0,
                 on_listen: Optional[Callable[[Tuple[str, int]], None]] = None, accept_timeout: float = 60.0) -> int:
    """Accept one client, stream ``messages`` to it and close. Returns bytes sent.

    ``on_listen`` receives the bound address (useful with port 0).
    """
    with socket.create_server(address) as srv:
        srv.settimeout(accept_timeout)
        if on_listen is not None:
            on_listen(srv.getsockname()[:2])
        try:
            conn, _ = srv.accept()
        except socket.timeout as exc:
            raise WireError(0, "no client connected") from exc
        sent = 0
        with conn:
            for msg in paced(messages, speed):
                data = encode(msg)
                conn.sendall(data)
                sent += len(data)
        return sent


def replay_connect(address: Tuple[str, int], sample_rate_hz: int = 44100, timeout: float = 30.0,
                   retries: int = 50) -> Iterator[TimestampedMsg]:
    """Connect (retrying while the server starts) and yield decoded messages until EOF."""
    for attempt in range(retries):
        try:
            sock = socket.create_connection(address, timeout=timeout)
            break
        except ConnectionRefusedError:
            if attempt == retries - 1:
                raise
            time.sleep(0.1)
    dec = Decoder(sample_rate_hz)
    with sock:
        while True:
            data = sock.recv(1 << 16)
            if not data:
                break
            yield from dec.feed(data)
    dec.close()
