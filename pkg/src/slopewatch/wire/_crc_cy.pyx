# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled CRC-16/CCITT-FALSE kernel.

Same contract as slopewatch.wire._crc_py.crc16; the table lookup runs as a
plain C loop over the input buffer.
"""

cdef unsigned short _TABLE[256]


cdef void _build_table() noexcept:
    cdef int byte, bit
    cdef unsigned int crc
    for byte in range(256):
        crc = byte << 8
        for bit in range(8):
            if crc & 0x8000:
                crc = ((crc << 1) ^ 0x1021) & 0xFFFF
            else:
                crc = (crc << 1) & 0xFFFF
        _TABLE[byte] = <unsigned short>crc


_build_table()


def crc16(data, crc: int = 0xFFFF):
    """CRC-16/CCITT-FALSE of ``data`` (bytes-like), continuing from ``crc``."""
    cdef const unsigned char[::1] buf = data
    cdef Py_ssize_t i, n = buf.shape[0]
    cdef unsigned short c = <unsigned short>crc
    for i in range(n):
        c = <unsigned short>((c << 8) ^ _TABLE[((c >> 8) ^ buf[i]) & 0xFF])
    return c
