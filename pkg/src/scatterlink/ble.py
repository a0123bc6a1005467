"""BLE advertising-packet construction, GFSK, and the single-tone trick.

The advertising PDU payload can be chosen so that, after link-layer
whitening, every payload bit is 0 (or every bit is 1). The GFSK modulator
then holds -250 kHz (or +250 kHz) for the whole payload window, turning a
stock BLE radio into a single-tone source for the backscatter tag.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .bitops import bits_to_bytes, bits_to_int, bytes_to_bits, int_to_bits
from .sigcore import IqBuffer, gaussian_filter_taps

ADV_CHANNELS = {37: 2402e6, 38: 2426e6, 39: 2480e6}
ACCESS_ADDRESS = 0x8E89BED6
DEFAULT_ADV_ADDRESS = 0xC0FFEE123456
ADV_NONCONN_IND = 0x02

SYMBOL_RATE = 1e6
DEVIATION = 250e3          # peak frequency deviation, Hz
GAUSSIAN_BT = 0.5
GAUSSIAN_SPAN = 3          # symbols

MAX_PAYLOAD = 31           # AdvData bytes in one ADV_NONCONN_IND

# Air-interface timing. Preamble + access address + header = 8+32+16 bits
# at 1 us/bit; AdvA adds 48 more before the payload window opens. The guard
# absorbs tag-side detection latency and pulse-shaping skew.
SYNC_DURATION = 56e-6
PAYLOAD_OFFSET = 104e-6
GUARD = 4e-6


class TonePolarity(Enum):
    """Whitened-payload level: ZEROS idles at -250 kHz, ONES at +250 kHz."""

    ZEROS = 0
    ONES = 1


def tone_frequency(polarity: TonePolarity) -> float:
    return DEVIATION if polarity is TonePolarity.ONES else -DEVIATION


def whitening_sequence(channel: int, n: int) -> np.ndarray:
    """First n bits of the data-whitening LFSR (x^7 + x^4 + 1, period 127).

    Position 0 is preset to 1 and positions 1..6 to the channel index, most
    significant bit in position 1.
    """
    if not 0 <= channel <= 39:
        raise ValueError(f"channel index {channel} out of range 0..39")
    reg = np.empty(7, dtype=np.uint8)
    reg[0] = 1
    for i in range(6):
        reg[1 + i] = (channel >> (5 - i)) & 1
    out = np.empty(n, dtype=np.uint8)
    for k in range(n):
        w = reg[6]
        out[k] = w
        reg[1:] = reg[:-1]
        reg[0] = w
        reg[4] ^= w
    return out


def whiten(bits, channel: int, offset: int = 0) -> np.ndarray:
    """XOR bits with the channel's whitening sequence starting at offset."""
    bits = np.asarray(bits, dtype=np.uint8)
    seq = whitening_sequence(channel, offset + bits.size)[offset:]
    return bits ^ seq


def crc24(pdu: bytes) -> int:
    """Link-layer CRC over the PDU, LSB of each byte first, preset 0x555555."""
    reg = 0x555555
    for bit in bytes_to_bits(pdu):
        feedback = int(bit) ^ (reg >> 23)
        reg = (reg << 1) & 0xFFFFFF
        if feedback:
            reg ^= 0x00065B
    return reg


@dataclass(frozen=True)
class AdvertPacket:
    channel: int
    payload: bytes
    pdu: bytes
    crc: int
    bits: np.ndarray        # on-air bit sequence, whitening applied

    @property
    def duration(self) -> float:
        return self.bits.size / SYMBOL_RATE


def build_advert(payload: bytes = b"", channel: int = 37,
                 adv_address: int = DEFAULT_ADV_ADDRESS) -> AdvertPacket:
    """Assemble one ADV_NONCONN_IND packet as an on-air bit sequence.

    Bit order is LSB-first within every field except the CRC, which goes out
    most significant bit first. Whitening covers PDU + CRC only.
    """
    payload = bytes(payload)
    if len(payload) > MAX_PAYLOAD:
        raise ValueError(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    header = bytes([ADV_NONCONN_IND, 6 + len(payload)])
    adv_a = int(adv_address).to_bytes(6, "little")
    pdu = header + adv_a + payload
    crc = crc24(pdu)
    crc_bits = np.array([(crc >> (23 - i)) & 1 for i in range(24)], dtype=np.uint8)
    body = np.concatenate([bytes_to_bits(pdu), crc_bits])
    body = whiten(body, channel)
    bits = np.concatenate([
        bytes_to_bits(bytes([0xAA])),
        int_to_bits(ACCESS_ADDRESS, 32),
        body,
    ])
    return AdvertPacket(channel=channel, payload=payload, pdu=pdu, crc=crc, bits=bits)


@dataclass(frozen=True)
class ParsedAdvert:
    pdu_type: int
    adv_address: int
    payload: bytes
    crc_ok: bool


def parse_advert(bits, channel: int) -> ParsedAdvert:
    """Inverse of build_advert for a bit vector starting at the preamble."""
    bits = np.asarray(bits, dtype=np.uint8).reshape(-1)
    if bits.size < 8 + 32 + 16 + 24:
        raise ValueError("bit vector shorter than a minimal advertising packet")
    aa = bits_to_int(bits[8:40])
    if aa != ACCESS_ADDRESS:
        raise ValueError(f"access address 0x{aa:08X} does not match 0x{ACCESS_ADDRESS:08X}")
    body = whiten(bits[40:], channel)
    header = bits_to_bytes(body[:16])
    pdu_type = header[0] & 0x0F
    length = header[1]
    need = 16 + 8 * length + 24
    if body.size < need:
        raise ValueError(f"truncated PDU: have {body.size} bits, need {need}")
    pdu = bits_to_bytes(body[:16 + 8 * length])
    rx_crc = bits_to_int(body[16 + 8 * length:need][::-1])
    adv_address = int.from_bytes(pdu[2:8], "little")
    return ParsedAdvert(
        pdu_type=pdu_type,
        adv_address=adv_address,
        payload=bytes(pdu[8:]),
        crc_ok=rx_crc == crc24(pdu),
    )


def tone_payload(channel: int, n_bytes: int,
                 polarity: TonePolarity = TonePolarity.ONES) -> bytes:
    """AdvData bytes whose whitened image is constant 0 (or 1).

    The whitener has consumed 64 bits (header + AdvA) by the time the
    payload starts, so the payload must replay the whitening sequence from
    offset 64 (ZEROS) or its complement (ONES).
    """
    if not 1 <= n_bytes <= MAX_PAYLOAD:
        raise ValueError(f"tone payload must be 1..{MAX_PAYLOAD} bytes")
    seq = whitening_sequence(channel, 64 + 8 * n_bytes)[64:]
    if polarity is TonePolarity.ONES:
        seq = seq ^ 1
    return bytes(bits_to_bytes(seq))


def build_tone_advert(channel: int, n_bytes: int = MAX_PAYLOAD,
                      polarity: TonePolarity = TonePolarity.ONES) -> AdvertPacket:
    return build_advert(tone_payload(channel, n_bytes, polarity), channel)


def payload_window(n_bytes: int) -> tuple[float, float]:
    """(start, duration) of the payload tone relative to packet start."""
    return PAYLOAD_OFFSET, 8 * n_bytes / SYMBOL_RATE


def gfsk_modulate(bits, sample_rate: float = 11e6, deviation: float = DEVIATION,
                  bt: float = GAUSSIAN_BT, span: int = GAUSSIAN_SPAN,
                  center_freq: float = 0.0) -> IqBuffer:
    """Gaussian-shaped binary FSK at 1 Msym/s, unit envelope."""
    bits = np.asarray(bits, dtype=np.uint8).reshape(-1)
    osr = sample_rate / SYMBOL_RATE
    if abs(osr - round(osr)) > 1e-9:
        raise ValueError("sample_rate must be an integer multiple of 1 MHz")
    osr = int(round(osr))
    nrz = np.repeat(bits.astype(np.float64) * 2.0 - 1.0, osr)
    taps = gaussian_filter_taps(bt, SYMBOL_RATE, sample_rate, span)
    pad_l = (taps.size - 1) // 2
    pad_r = taps.size - 1 - pad_l
    padded = np.concatenate([np.full(pad_l, nrz[0]), nrz, np.full(pad_r, nrz[-1])])
    freq = deviation * np.convolve(padded, taps, mode="valid")
    phase = 2.0 * np.pi * np.cumsum(freq) / sample_rate
    return IqBuffer(np.exp(1j * phase), sample_rate, center_freq)


def gfsk_demodulate(buf: IqBuffer, n_bits: int) -> np.ndarray:
    """Discriminator demod assuming the buffer starts at the first bit."""
    osr = buf.sample_rate / SYMBOL_RATE
    if abs(osr - round(osr)) > 1e-9:
        raise ValueError("sample rate must be an integer multiple of 1 MHz")
    osr = int(round(osr))
    s = buf.samples
    dphi = np.angle(s[1:] * np.conj(s[:-1]))
    bits = np.empty(n_bits, dtype=np.uint8)
    half = max(1, osr // 4)
    for k in range(n_bits):
        mid = k * osr + osr // 2
        lo, hi = max(0, mid - half), min(dphi.size, mid + half + 1)
        if lo >= hi:
            raise ValueError("buffer too short for requested bit count")
        bits[k] = 1 if np.mean(dphi[lo:hi]) > 0 else 0
    return bits


def advert_waveform(packet: AdvertPacket, sample_rate: float = 11e6) -> IqBuffer:
    """GFSK waveform of a built packet, centered on its advertising channel."""
    return gfsk_modulate(packet.bits, sample_rate=sample_rate,
                         center_freq=ADV_CHANNELS[packet.channel])
