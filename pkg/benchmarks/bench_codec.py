#!/usr/bin/env python3
"""Benchmark the CRC kernels (compiled vs pure Python) and the frame codec.

Usage: python benchmarks/bench_codec.py [--seconds 0.5]
"""

import argparse
import random
import time

from slopewatch.wire import CRC_BACKEND, Frame, MessageType, decode_frame, encode_frame
from slopewatch.wire import _crc_py

try:
    from slopewatch.wire import _crc_cy
except ImportError:
    _crc_cy = None


def throughput(fn, payload: bytes, seconds: float) -> float:
    """Bytes per second of CRC input processed."""
    # warm up
    fn(payload)
    n = 0
    start = time.perf_counter()
    while time.perf_counter() - start < seconds:
        fn(payload)
        n += 1
    elapsed = time.perf_counter() - start
    return n * len(payload) / elapsed


def frames_per_second(frames: list[bytes], seconds: float) -> float:
    for raw in frames[:10]:
        decode_frame(raw)
    n = 0
    start = time.perf_counter()
    while time.perf_counter() - start < seconds:
        decode_frame(frames[n % len(frames)])
        n += 1
    return n / (time.perf_counter() - start)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seconds", type=float, default=0.5, help="time budget per measurement")
    args = parser.parse_args()

    rng = random.Random(1)
    sizes = (64, 1024, 65535)
    kernels = [("pure", _crc_py.crc16)]
    if _crc_cy is not None:
        kernels.append(("compiled", _crc_cy.crc16))

    print(f"active backend: {CRC_BACKEND}\n")
    print(f"{'payload':>8}  " + "  ".join(f"{name:>14}" for name, _ in kernels) + "  speedup")
    rates = {}
    for size in sizes:
        payload = rng.randbytes(size)
        row = []
        for name, fn in kernels:
            rate = throughput(fn, payload, args.seconds)
            rates[(name, size)] = rate
            row.append(f"{rate / 1e6:>9.1f} MB/s")
        speedup = ""
        if _crc_cy is not None:
            speedup = f"{rates[('compiled', size)] / rates[('pure', size)]:>6.1f}x"
        print(f"{size:>7}B  " + "  ".join(row) + f"  {speedup}")

    frames = [
        encode_frame(Frame(MessageType.SEND_DATA, rng.randbytes(rng.randrange(10, 60))))
        for _ in range(256)
    ]
    print(f"\nframe decode ({CRC_BACKEND} backend): "
          f"{frames_per_second(frames, args.seconds):,.0f} frames/s")


if __name__ == "__main__":
    main()
