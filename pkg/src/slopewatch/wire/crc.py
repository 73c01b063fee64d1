"""CRC backend selection: compiled extension if built, pure Python otherwise."""

try:
    from slopewatch.wire._crc_cy import crc16

    CRC_BACKEND = "compiled"
except ImportError:  # extension not built on this install
    from slopewatch.wire._crc_py import crc16

    CRC_BACKEND = "pure"

__all__ = ["crc16", "CRC_BACKEND"]
