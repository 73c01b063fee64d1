"""Pure-Python CRC-16/CCITT-FALSE kernel (table-driven).

Fallback used when the compiled extension is unavailable. Parameters:
poly 0x1021, init 0xFFFF, no input/output reflection, no final xor.
Check value: crc16(b"123456789") == 0x29B1.
"""

from __future__ import annotations


def _build_table() -> list[int]:
    table = []
    for byte in range(256):
        crc = byte << 8
        for _ in range(8):
            if crc & 0x8000:
                crc = ((crc << 1) ^ 0x1021) & 0xFFFF
            else:
                crc = (crc << 1) & 0xFFFF
        table.append(crc)
    return table


_TABLE = _build_table()


def crc16(data: bytes, crc: int = 0xFFFF) -> int:
    """CRC-16/CCITT-FALSE of ``data``, continuing from ``crc``."""
    table = _TABLE
    for byte in data:
        crc = ((crc << 8) & 0xFFFF) ^ table[((crc >> 8) ^ byte) & 0xFF]
    return crc
