"""Wire protocol: CRC kernel, frame codec, payload codecs."""

from slopewatch.wire.codec import (
    HEADER_LEN,
    MAGIC,
    MAX_PAYLOAD,
    TRAILER_LEN,
    VERSION,
    BadMagic,
    BadVersion,
    CrcMismatch,
    Frame,
    FrameError,
    FrameTooLarge,
    LengthMismatch,
    MessageType,
    PayloadError,
    SendDataPayload,
    UnknownType,
    decode_connack,
    decode_dataack,
    decode_frame,
    decode_ipassign,
    decode_reqconn,
    decode_reqip,
    decode_senddata,
    decode_sendip,
    decode_serverip,
    encode_connack,
    encode_dataack,
    encode_frame,
    encode_ipassign,
    encode_reqconn,
    encode_reqip,
    encode_senddata,
    encode_sendip,
    encode_serverip,
    read_frame,
)
from slopewatch.wire.crc import CRC_BACKEND, crc16

__all__ = [
    "MAGIC",
    "VERSION",
    "HEADER_LEN",
    "TRAILER_LEN",
    "MAX_PAYLOAD",
    "CRC_BACKEND",
    "crc16",
    "Frame",
    "MessageType",
    "SendDataPayload",
    "FrameError",
    "FrameTooLarge",
    "BadMagic",
    "BadVersion",
    "LengthMismatch",
    "CrcMismatch",
    "UnknownType",
    "PayloadError",
    "encode_frame",
    "decode_frame",
    "read_frame",
    "encode_senddata",
    "decode_senddata",
    "encode_reqip",
    "decode_reqip",
    "encode_ipassign",
    "decode_ipassign",
    "encode_sendip",
    "decode_sendip",
    "encode_serverip",
    "decode_serverip",
    "encode_reqconn",
    "decode_reqconn",
    "encode_connack",
    "decode_connack",
    "encode_dataack",
    "decode_dataack",
]
