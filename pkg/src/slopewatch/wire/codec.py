"""Binary framing and payload codecs for the telemetry link.

This module IS the wire contract (see docs/wire_format.md). Frame layout,
all integers big-endian:

    offset  size  field
    0       2     magic 0x4C 0x53 ("LS")
    2       1     version (0x01)
    3       1     message type
    4       2     payload length N (uint16)
    6       N     payload
    6+N     2     CRC-16/CCITT-FALSE over bytes [2, 6+N)

The CRC covers version, type, length and payload but not the magic.
Decode errors are distinct exception types, each carrying the byte offset
at which validation failed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import BinaryIO

from slopewatch.domain import SensorKind
from slopewatch.wire.crc import crc16

MAGIC = b"\x4c\x53"
VERSION = 0x01
MAX_PAYLOAD = 0xFFFF
HEADER_LEN = 6  # magic + version + type + length
TRAILER_LEN = 2  # crc16


class MessageType(IntEnum):
    """1-byte message type codes."""

    REQ_IP = 0x01       # node -> ISP: request an IP address
    IP_ASSIGN = 0x02    # ISP -> node: assigned address
    SEND_IP = 0x03      # node -> server (control): announce own IP, ask for server IP
    SERVER_IP = 0x04    # server -> node (control): server address
    REQ_CONN = 0x05     # node -> server: connection request
    CONN_ACK = 0x06     # server -> node: connection accepted, session id
    SEND_DATA = 0x07    # node -> server: batch of sensor readings
    DATA_ACK = 0x08     # server -> node: batch acknowledged
    HEARTBEAT = 0x09    # node -> server: idle keepalive


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------


class FrameError(ValueError):
    """Base class for framing/codec failures.

    ``offset`` is the byte position at which validation failed.
    """

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class FrameTooLarge(FrameError):
    pass


class BadMagic(FrameError):
    pass


class BadVersion(FrameError):
    pass


class LengthMismatch(FrameError):
    pass


class CrcMismatch(FrameError):
    pass


class UnknownType(FrameError):
    pass


class PayloadError(FrameError):
    """Malformed payload body (bad count, unknown sensor code, short/long)."""


# ---------------------------------------------------------------------------
# Frame codec
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Frame:
    """One protocol message: type plus opaque payload bytes."""

    msg_type: MessageType
    payload: bytes = b""
    version: int = VERSION


def encode_frame(frame: Frame) -> bytes:
    """Serialize a frame to its bit-exact wire form."""
    if len(frame.payload) > MAX_PAYLOAD:
        raise FrameTooLarge(f"payload of {len(frame.payload)} bytes exceeds {MAX_PAYLOAD}")
    body = struct.pack(">BBH", frame.version, frame.msg_type, len(frame.payload)) + frame.payload
    return MAGIC + body + struct.pack(">H", crc16(body))


def decode_frame(data: bytes) -> Frame:
    """Parse one complete frame; the buffer must contain exactly one frame.

    Raises BadMagic, BadVersion, LengthMismatch, CrcMismatch or UnknownType.
    """
    if len(data) < len(MAGIC):
        raise LengthMismatch(f"buffer of {len(data)} bytes is shorter than the frame magic", len(data))
    if data[:2] != MAGIC:
        raise BadMagic(f"expected magic {MAGIC.hex()}, got {data[:2].hex()}", 0)
    if len(data) < HEADER_LEN:
        raise LengthMismatch("truncated header", len(data))
    version = data[2]
    if version != VERSION:
        raise BadVersion(f"unsupported version 0x{version:02x}", 2)
    (plen,) = struct.unpack_from(">H", data, 4)
    total = HEADER_LEN + plen + TRAILER_LEN
    if len(data) != total:
        raise LengthMismatch(f"length field declares {total} bytes, buffer has {len(data)}", 4)
    body = data[2 : HEADER_LEN + plen]
    (stated_crc,) = struct.unpack_from(">H", data, HEADER_LEN + plen)
    actual = crc16(body)
    if stated_crc != actual:
        raise CrcMismatch(f"crc 0x{stated_crc:04x} != computed 0x{actual:04x}", HEADER_LEN + plen)
    type_code = data[3]
    try:
        msg_type = MessageType(type_code)
    except ValueError:
        raise UnknownType(f"unknown message type 0x{type_code:02x}", 3) from None
    return Frame(msg_type=msg_type, payload=bytes(data[HEADER_LEN : HEADER_LEN + plen]))


def read_frame(stream: BinaryIO) -> bytes | None:
    """Read one frame's raw bytes from a blocking stream.

    Returns None on clean EOF before any byte of a frame; raises
    LengthMismatch if the stream ends mid-frame. Used by the socket
    transport; the in-process simulator hands frames around whole.
    """
    header = _read_exact(stream, HEADER_LEN)
    if header is None:
        return None
    if len(header) < HEADER_LEN:
        raise LengthMismatch("stream ended inside frame header", len(header))
    (plen,) = struct.unpack_from(">H", header, 4)
    rest = _read_exact(stream, plen + TRAILER_LEN)
    if rest is None or len(rest) < plen + TRAILER_LEN:
        raise LengthMismatch("stream ended inside frame body", HEADER_LEN + len(rest or b""))
    return header + rest


def _read_exact(stream: BinaryIO, n: int) -> bytes | None:
    if n == 0:
        return b""
    chunks = []
    got = 0
    while got < n:
        chunk = stream.read(n - got)
        if not chunk:
            return b"".join(chunks) if chunks else None
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


# ---------------------------------------------------------------------------
# Payload codecs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SendDataPayload:
    """Body of a SEND_DATA frame: one batch of readings.

    ``seq`` is the batch sequence number (the first reading's per-node
    sequence number); readings are (sensor_code, raw_count) pairs sharing
    ``timestamp``. At most 255 readings per frame.
    """

    session_id: int
    seq: int
    timestamp: int
    readings: tuple[tuple[int, int], ...]


_READING = struct.Struct(">Bi")
_SENDDATA_HEAD = struct.Struct(">IIQB")


def encode_senddata(p: SendDataPayload) -> bytes:
    if len(p.readings) > 255:
        raise PayloadError(f"{len(p.readings)} readings exceed the 255-per-frame cap")
    parts = [_SENDDATA_HEAD.pack(p.session_id, p.seq, p.timestamp, len(p.readings))]
    for code, raw in p.readings:
        try:
            SensorKind.from_code(code)  # reject unknown codes at encode time
        except ValueError:
            raise PayloadError(f"unknown sensor code 0x{code:02x}") from None
        parts.append(_READING.pack(code, raw))
    return b"".join(parts)


def decode_senddata(data: bytes) -> SendDataPayload:
    if len(data) < _SENDDATA_HEAD.size:
        raise PayloadError("SEND_DATA payload shorter than its fixed header", len(data))
    session_id, seq, timestamp, count = _SENDDATA_HEAD.unpack_from(data, 0)
    expected = _SENDDATA_HEAD.size + count * _READING.size
    if len(data) != expected:
        raise PayloadError(
            f"SEND_DATA count {count} implies {expected} bytes, payload has {len(data)}",
            _SENDDATA_HEAD.size,
        )
    readings = []
    for i in range(count):
        off = _SENDDATA_HEAD.size + i * _READING.size
        code, raw = _READING.unpack_from(data, off)
        try:
            SensorKind.from_code(code)
        except ValueError:
            raise PayloadError(f"unknown sensor code 0x{code:02x}", off) from None
        readings.append((code, raw))
    return SendDataPayload(session_id=session_id, seq=seq, timestamp=timestamp, readings=tuple(readings))


# Small fixed-shape payloads. IPv4 addresses travel as 4 raw bytes.


def _pack_ip(ip: str) -> bytes:
    parts = ip.split(".")
    if len(parts) != 4:
        raise PayloadError(f"not a dotted-quad IPv4 address: {ip!r}")
    try:
        octets = bytes(int(p) for p in parts)
    except ValueError:
        raise PayloadError(f"not a dotted-quad IPv4 address: {ip!r}") from None
    return octets


def _unpack_ip(data: bytes, offset: int = 0) -> str:
    return ".".join(str(b) for b in data[offset : offset + 4])


def encode_reqip(node_id: int) -> bytes:
    return struct.pack(">H", node_id)


def decode_reqip(data: bytes) -> int:
    if len(data) != 2:
        raise PayloadError(f"REQ_IP payload must be 2 bytes, got {len(data)}")
    return struct.unpack(">H", data)[0]


def encode_ipassign(ip: str) -> bytes:
    return _pack_ip(ip)


def decode_ipassign(data: bytes) -> str:
    if len(data) != 4:
        raise PayloadError(f"IP_ASSIGN payload must be 4 bytes, got {len(data)}")
    return _unpack_ip(data)


def encode_sendip(node_id: int, ip: str) -> bytes:
    return struct.pack(">H", node_id) + _pack_ip(ip)


def decode_sendip(data: bytes) -> tuple[int, str]:
    if len(data) != 6:
        raise PayloadError(f"SEND_IP payload must be 6 bytes, got {len(data)}")
    (node_id,) = struct.unpack_from(">H", data, 0)
    return node_id, _unpack_ip(data, 2)


def encode_serverip(ip: str) -> bytes:
    return _pack_ip(ip)


def decode_serverip(data: bytes) -> str:
    if len(data) != 4:
        raise PayloadError(f"SERVER_IP payload must be 4 bytes, got {len(data)}")
    return _unpack_ip(data)


def encode_reqconn(node_id: int, nonce: int) -> bytes:
    return struct.pack(">HI", node_id, nonce)


def decode_reqconn(data: bytes) -> tuple[int, int]:
    if len(data) != 6:
        raise PayloadError(f"REQ_CONN payload must be 6 bytes, got {len(data)}")
    return struct.unpack(">HI", data)


def encode_connack(session_id: int, nonce: int) -> bytes:
    return struct.pack(">II", session_id, nonce)


def decode_connack(data: bytes) -> tuple[int, int]:
    if len(data) != 8:
        raise PayloadError(f"CONN_ACK payload must be 8 bytes, got {len(data)}")
    return struct.unpack(">II", data)


def encode_dataack(seq: int) -> bytes:
    return struct.pack(">I", seq)


def decode_dataack(data: bytes) -> int:
    if len(data) != 4:
        raise PayloadError(f"DATA_ACK payload must be 4 bytes, got {len(data)}")
    return struct.unpack(">I", data)[0]
