"""Bit/byte plumbing shared by the packet codecs.

Everything on the air in this package is LSB-first within each byte (the
convention of both the BLE link layer and the 802.11 DSSS PHY), so the
helpers here commit to that order once and everyone else imports them.
"""
from __future__ import annotations

import numpy as np


def bytes_to_bits(data: bytes | bytearray | np.ndarray) -> np.ndarray:
    """Expand bytes to a uint8 bit array, LSB of each byte first."""
    arr = np.frombuffer(bytes(data), dtype=np.uint8)
    return np.unpackbits(arr, bitorder="little")


def bits_to_bytes(bits: np.ndarray) -> bytes:
    bits = np.asarray(bits, dtype=np.uint8).reshape(-1)
    if bits.size % 8:
        raise ValueError(f"bit count {bits.size} is not a whole number of bytes")
    return np.packbits(bits, bitorder="little").tobytes()


def int_to_bits(value: int, width: int) -> np.ndarray:
    """Little-endian bit expansion of an unsigned integer (LSB first)."""
    if value < 0 or value >= (1 << width):
        raise ValueError(f"value {value} does not fit in {width} bits")
    return np.array([(value >> i) & 1 for i in range(width)], dtype=np.uint8)


def bits_to_int(bits: np.ndarray) -> int:
    out = 0
    for i, b in enumerate(np.asarray(bits).reshape(-1)):
        out |= int(b) << i
    return out
