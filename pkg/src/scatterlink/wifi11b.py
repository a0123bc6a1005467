"""802.11b DSSS/CCK codec: framing, PLCP, chips out, reference receiver.

The transmit side emits chips on the 11 Mchip/s grid as unit-circle values
on the QPSK axes, which is exactly what the four-state backscatter switch
can reproduce. The receive side is a conventional 2x-oversampled receiver:
Barker comb timing, differential CFO estimation with ambiguity resolution
against the PLCP checksum, and a 64-codeword CCK bank.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bitops import bits_to_bytes, bits_to_int, bytes_to_bits, int_to_bits
from .sigcore import IqBuffer

CHIP_RATE = 11e6
SYMBOL_RATE = 1e6
BARKER = np.array([1, -1, 1, 1, -1, 1, 1, 1, -1, -1, -1], dtype=float)

RATES = (1.0, 2.0, 5.5, 11.0)
RATE_SIGNAL = {1.0: 0x0A, 2.0: 0x14, 5.5: 0x37, 11.0: 0x6E}
SIGNAL_RATE = {v: k for k, v in RATE_SIGNAL.items()}

LONG_SYNC_BITS = 128
SHORT_SYNC_BITS = 56
LONG_SFD = 0xF3A0
SHORT_SFD = 0x05CF           # time-reverse of the long SFD
SEED_LONG = 0b1101100
SEED_SHORT = 0b0011011
PREAMBLE_DURATION = {False: 192e-6, True: 96e-6}

SERVICE_LOCKED = 0x04
SERVICE_LENGTH_EXT = 0x80

MAC_HEADER_BYTES = 24
FCS_BYTES = 4
MIN_MPDU_BYTES = MAC_HEADER_BYTES + FCS_BYTES

# 2.4 GHz DSSS channel centers (channels 1..13 on the 5 MHz raster)
CHANNEL_FREQS = {n: 2407e6 + 5e6 * n for n in range(1, 14)}

_DQPSK_PHASE = {(0, 0): 0.0, (0, 1): 0.5, (1, 1): 1.0, (1, 0): 1.5}   # units of pi
_DQPSK_DIBIT = {0: (0, 0), 1: (0, 1), 2: (1, 1), 3: (1, 0)}           # phase idx -> dibit


# ---------------------------------------------------------------------------
# scrambler / CRCs
# ---------------------------------------------------------------------------

def scramble(bits, seed: int) -> np.ndarray:
    """Self-synchronizing scrambler, polynomial z^-7 + z^-4 + 1.

    seed bit i holds the scrambler's delay-(i+1) element, i.e. the LSB is
    the most recent virtual output bit.
    """
    bits = np.asarray(bits, dtype=np.uint8).reshape(-1)
    s = [(seed >> i) & 1 for i in range(7)]
    out = np.empty_like(bits)
    for k, b in enumerate(bits):
        o = int(b) ^ s[3] ^ s[6]
        out[k] = o
        s = [o] + s[:6]
    return out


def descramble(bits, seed: int = 0) -> np.ndarray:
    """Inverse of scramble; self-synchronizing, so seed only matters for the
    first 7 output bits."""
    bits = np.asarray(bits, dtype=np.uint8).reshape(-1)
    pre = np.array([(seed >> i) & 1 for i in range(6, -1, -1)], dtype=np.uint8)
    x = np.concatenate([pre, bits])
    return x[7:] ^ x[3:-4] ^ x[:-7]


def crc16_x25(data: bytes) -> int:
    """CRC-16 with the reflected CCITT polynomial, init/xorout 0xFFFF."""
    reg = 0xFFFF
    for byte in data:
        reg ^= byte
        for _ in range(8):
            reg = (reg >> 1) ^ 0x8408 if reg & 1 else reg >> 1
    return reg ^ 0xFFFF


def crc32(data: bytes) -> int:
    """IEEE CRC-32 (reflected 0x04C11DB7), as used for the frame check."""
    reg = 0xFFFFFFFF
    for byte in data:
        reg ^= byte
        for _ in range(8):
            reg = (reg >> 1) ^ 0xEDB88320 if reg & 1 else reg >> 1
    return reg ^ 0xFFFFFFFF


# ---------------------------------------------------------------------------
# frames
# ---------------------------------------------------------------------------

DEFAULT_DST = 0x0024D7000001
DEFAULT_SRC = 0x0024D7000002
DEFAULT_BSSID = 0x0024D7000003


def build_frame(payload: bytes, dst: int = DEFAULT_DST, src: int = DEFAULT_SRC,
                bssid: int = DEFAULT_BSSID, seq: int = 0) -> bytes:
    """Minimal data MPDU: 24-byte MAC header + payload + 4-byte FCS."""
    payload = bytes(payload)
    hdr = bytes([0x08, 0x00])                       # data frame, no flags
    hdr += (0).to_bytes(2, "little")                # duration
    hdr += int(dst).to_bytes(6, "big")
    hdr += int(src).to_bytes(6, "big")
    hdr += int(bssid).to_bytes(6, "big")
    hdr += ((seq & 0xFFF) << 4).to_bytes(2, "little")
    body = hdr + payload
    return body + crc32(body).to_bytes(4, "little")


def parse_frame(mpdu: bytes) -> tuple[bytes, bool]:
    """(payload, fcs_ok) from a data MPDU built by build_frame."""
    if len(mpdu) < MIN_MPDU_BYTES:
        raise ValueError(f"MPDU of {len(mpdu)} bytes is shorter than {MIN_MPDU_BYTES}")
    body, fcs = mpdu[:-4], int.from_bytes(mpdu[-4:], "little")
    return body[MAC_HEADER_BYTES:], crc32(body) == fcs


# ---------------------------------------------------------------------------
# airtime arithmetic
# ---------------------------------------------------------------------------

def mpdu_airtime(n_bytes: int, rate_mbps: float) -> float:
    """Seconds on air for the PSDU alone (whole symbols by construction)."""
    if rate_mbps not in RATE_SIGNAL:
        raise ValueError(f"unsupported rate {rate_mbps}")
    return 8 * n_bytes / (rate_mbps * 1e6)


def packet_duration(n_bytes: int, rate_mbps: float, short_preamble: bool = False) -> float:
    return PREAMBLE_DURATION[bool(short_preamble)] + mpdu_airtime(n_bytes, rate_mbps)


def max_mpdu_bytes(rate_mbps: float, window: float = 248e-6,
                   short_preamble: bool = True) -> int:
    """Largest MPDU whose whole packet fits in the window."""
    budget = window - PREAMBLE_DURATION[bool(short_preamble)]
    if budget <= 0:
        return 0
    return int(math.floor(budget * rate_mbps * 1e6 / 8))


def length_field(n_bytes: int, rate_mbps: float) -> tuple[int, int]:
    """(LENGTH in microseconds, length-extension bit) for the PLCP header."""
    if rate_mbps == 1.0:
        return 8 * n_bytes, 0
    if rate_mbps == 2.0:
        return 4 * n_bytes, 0
    if rate_mbps == 5.5:
        return math.ceil(16 * n_bytes / 11), 0
    if rate_mbps == 11.0:
        length = math.ceil(8 * n_bytes / 11)
        ext = 1 if (length * 11) // 8 - n_bytes == 1 else 0
        return length, ext
    raise ValueError(f"unsupported rate {rate_mbps}")


def bytes_from_length(length_us: int, rate_mbps: float, ext: int = 0) -> int:
    if rate_mbps == 1.0:
        return length_us // 8
    if rate_mbps == 2.0:
        return length_us // 4
    if rate_mbps == 5.5:
        return (11 * length_us) // 16
    if rate_mbps == 11.0:
        return (11 * length_us) // 8 - ext
    raise ValueError(f"unsupported rate {rate_mbps}")


# ---------------------------------------------------------------------------
# CCK
# ---------------------------------------------------------------------------

def cck_codeword(phi2: float, phi3: float, phi4: float) -> np.ndarray:
    """8-chip complementary-code word with phi1 = 0, first chip first."""
    phases = np.array([
        phi2 + phi3 + phi4,
        phi3 + phi4,
        phi2 + phi4,
        phi4 + np.pi,
        phi2 + phi3,
        phi3,
        phi2 + np.pi,
        0.0,
    ])
    return np.exp(1j * phases)


def _cck_bank(rate_mbps: float) -> tuple[np.ndarray, np.ndarray]:
    """(codewords, data-bit rows) for the non-phi1 bits of one CCK symbol."""
    words, bits = [], []
    if rate_mbps == 11.0:
        for i2 in range(4):
            for i3 in range(4):
                for i4 in range(4):
                    words.append(cck_codeword(i2 * np.pi / 2, i3 * np.pi / 2,
                                              i4 * np.pi / 2))
                    bits.append([i2 >> 1, i2 & 1, i3 >> 1, i3 & 1, i4 >> 1, i4 & 1])
    elif rate_mbps == 5.5:
        for d2 in range(2):
            for d3 in range(2):
                words.append(cck_codeword(d2 * np.pi + np.pi / 2, 0.0, d3 * np.pi))
                bits.append([d2, d3])
    else:
        raise ValueError(f"no CCK bank for rate {rate_mbps}")
    return np.array(words), np.array(bits, dtype=np.uint8)


_CCK_BANKS = {r: _cck_bank(r) for r in (5.5, 11.0)}


# ---------------------------------------------------------------------------
# transmitter
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TxPacket:
    chips: np.ndarray
    rate: float
    short_preamble: bool
    mpdu: bytes

    @property
    def duration(self) -> float:
        return self.chips.size / CHIP_RATE


def _plcp_header_bits(rate_mbps: float, n_bytes: int) -> np.ndarray:
    signal = RATE_SIGNAL[rate_mbps]
    length, ext = length_field(n_bytes, rate_mbps)
    if length >= 1 << 16:
        raise ValueError("MPDU too long for the 16-bit LENGTH field")
    service = SERVICE_LOCKED | (SERVICE_LENGTH_EXT if ext else 0)
    fields = bytes([signal, service]) + length.to_bytes(2, "little")
    hec = crc16_x25(fields)
    hec_bits = np.array([(hec >> (15 - i)) & 1 for i in range(16)], dtype=np.uint8)
    return np.concatenate([bytes_to_bits(fields), hec_bits])


def _parse_plcp_header(bits) -> tuple[float, int, bool]:
    """(rate, mpdu_bytes, hec_ok) from 48 descrambled header bits."""
    bits = np.asarray(bits, dtype=np.uint8)
    fields = bits_to_bytes(bits[:32])
    hec = bits_to_int(bits[32:48][::-1])
    if crc16_x25(bytes(fields)) != hec:
        return 0.0, 0, False
    signal = fields[0]
    if signal not in SIGNAL_RATE:
        return 0.0, 0, False
    rate = SIGNAL_RATE[signal]
    ext = 1 if fields[1] & SERVICE_LENGTH_EXT else 0
    length = int.from_bytes(bytes(fields[2:4]), "little")
    return rate, bytes_from_length(length, rate, ext), True


def transmit(mpdu: bytes, rate_mbps: float = 11.0,
             short_preamble: bool = False) -> TxPacket:
    """Whole PPDU as axis-aligned chips at 11 Mchip/s."""
    mpdu = bytes(mpdu)
    if rate_mbps not in RATE_SIGNAL:
        raise ValueError(f"unsupported rate {rate_mbps}")
    if short_preamble and rate_mbps == 1.0:
        raise ValueError("the short preamble does not carry 1 Mbps payloads")

    if short_preamble:
        sync = np.zeros(SHORT_SYNC_BITS, dtype=np.uint8)
        sfd = int_to_bits(SHORT_SFD, 16)
        seed = SEED_SHORT
        header_rate = 2.0
    else:
        sync = np.ones(LONG_SYNC_BITS, dtype=np.uint8)
        sfd = int_to_bits(LONG_SFD, 16)
        seed = SEED_LONG
        header_rate = 1.0

    header = _plcp_header_bits(rate_mbps, len(mpdu))
    plain = np.concatenate([sync, sfd, header, bytes_to_bits(mpdu)])
    scrambled = scramble(plain, seed)

    n_preamble = sync.size + 16
    pre_bits = scrambled[:n_preamble]
    hdr_bits = scrambled[n_preamble:n_preamble + 48]
    psdu_bits = scrambled[n_preamble + 48:]

    chips = []
    phase = 0.0                                    # running carrier phase, rad

    def emit_barker(sym_bits, bits_per_sym):
        nonlocal phase
        for i in range(0, len(sym_bits), bits_per_sym):
            if bits_per_sym == 1:
                phase += np.pi * sym_bits[i]
            else:
                phase += np.pi * _DQPSK_PHASE[(int(sym_bits[i]), int(sym_bits[i + 1]))]
            chips.append(BARKER * np.exp(1j * phase))

    emit_barker(pre_bits, 1)
    emit_barker(hdr_bits, 1 if header_rate == 1.0 else 2)

    if rate_mbps in (1.0, 2.0):
        emit_barker(psdu_bits, 1 if rate_mbps == 1.0 else 2)
    else:
        bits_per_sym = 4 if rate_mbps == 5.5 else 8
        for n, i in enumerate(range(0, len(psdu_bits), bits_per_sym)):
            d = psdu_bits[i:i + bits_per_sym]
            dphi = np.pi * _DQPSK_PHASE[(int(d[0]), int(d[1]))]
            if n % 2 == 1:
                dphi += np.pi
            phase += dphi
            if rate_mbps == 5.5:
                word = cck_codeword(d[2] * np.pi + np.pi / 2, 0.0, d[3] * np.pi)
            else:
                word = cck_codeword(
                    (2 * d[2] + d[3]) * np.pi / 2,
                    (2 * d[4] + d[5]) * np.pi / 2,
                    (2 * d[6] + d[7]) * np.pi / 2,
                )
            chips.append(word * np.exp(1j * phase))

    chips = np.concatenate(chips)
    # snap to exact axis values so downstream quadrant mapping is lossless
    chips = np.exp(0.5j * np.pi * np.round(np.angle(chips) / (np.pi / 2)))
    return TxPacket(chips=chips, rate=rate_mbps, short_preamble=short_preamble,
                    mpdu=mpdu)


def chip_waveform(chips, sample_rate: float = 22e6, center_freq: float = 0.0) -> IqBuffer:
    """Rectangular-pulse chip train at an integer oversampling of 11 MHz."""
    osr = sample_rate / CHIP_RATE
    if abs(osr - round(osr)) > 1e-9 or osr < 1:
        raise ValueError("sample_rate must be an integer multiple of 11 MHz")
    return IqBuffer(np.repeat(np.asarray(chips, dtype=complex), int(round(osr))),
                    sample_rate, center_freq)


# ---------------------------------------------------------------------------
# receiver (22 Msps, 2 samples per chip)
# ---------------------------------------------------------------------------

RX_RATE = 22e6
_SPS = 2
_SYM = 11 * _SPS                     # samples per Barker symbol


@dataclass(frozen=True)
class RxResult:
    mpdu: bytes
    payload: bytes
    rate: float
    short_preamble: bool
    fcs_ok: bool
    cfo_hz: float


def _comb_offset(mag: np.ndarray, n_sync_syms: int = 40) -> int:
    """Symbol-comb phase with the largest summed correlation magnitude."""
    span = mag[: n_sync_syms * _SYM]
    if span.size < _SYM:
        raise ValueError("buffer too short for timing acquisition")
    usable = span.size - span.size % _SYM
    folded = span[:usable].reshape(-1, _SYM).sum(axis=0)
    return int(np.argmax(folded))


def _despread(x: np.ndarray, offset: int) -> np.ndarray:
    """Barker-correlator outputs at every symbol position from offset."""
    kernel = np.repeat(BARKER, _SPS)
    n_syms = (x.size - offset) // _SYM
    if n_syms < 1:
        return np.empty(0, dtype=complex)
    segs = x[offset: offset + n_syms * _SYM].reshape(n_syms, _SYM)
    return segs @ kernel / kernel.size


def _estimate_cfo(sym: np.ndarray) -> float:
    """Differential CFO estimate from BPSK sync symbols, +-250 kHz ambiguous."""
    d = sym[1:] * np.conj(sym[:-1])
    acc = np.sum(d ** 2)
    return float(np.angle(acc) / 2 / (2 * np.pi / SYMBOL_RATE))


def _dbpsk_bits(sym: np.ndarray) -> np.ndarray:
    d = sym[1:] * np.conj(sym[:-1])
    return (d.real < 0).astype(np.uint8)


def _find_sfd(descrambled: np.ndarray) -> list[tuple[int, bool]]:
    """All (bit index right after the SFD, short?) candidates, in order."""
    found = []
    if descrambled.size < 32:
        return found
    windows = np.lib.stride_tricks.sliding_window_view(descrambled, 16)
    for sfd, short in ((int_to_bits(LONG_SFD, 16), False),
                       (int_to_bits(SHORT_SFD, 16), True)):
        hits = np.nonzero((windows == sfd).all(axis=1))[0]
        # require a descrambler-sync runway of sync bits ahead of the match
        found.extend((int(h) + 16, short) for h in hits if h >= 16)
    found.sort()
    return found


def receive(buf: IqBuffer, max_cfo: float = 330e3) -> RxResult | None:
    """Decode one packet from a 22 Msps buffer; None when nothing decodes."""
    if abs(buf.sample_rate - RX_RATE) > 1e-3:
        raise ValueError(f"receiver expects {RX_RATE:g} Sps, got {buf.sample_rate:g}")
    x = buf.samples
    if x.size < 30 * _SYM:
        return None

    kernel = np.repeat(BARKER, _SPS)
    corr = np.abs(np.convolve(x[: 80 * _SYM], kernel[::-1], mode="valid"))
    offset = _comb_offset(corr)

    sym0 = _despread(x, offset)
    if sym0.size < 24:
        return None
    n_est = min(sym0.size, 100)
    base_cfo = _estimate_cfo(sym0[:n_est])
    candidates = [base_cfo + m * SYMBOL_RATE / 4 for m in range(-3, 4)]
    candidates = [c for c in candidates if abs(c) <= max_cfo]
    candidates.sort(key=abs)

    t = np.arange(x.size) / buf.sample_rate
    for cfo in candidates:
        y = x * np.exp(-2j * np.pi * cfo * t)
        sym = _despread(y, offset)
        bits = _dbpsk_bits(sym)
        desc = descramble(bits)
        for sfd_end, short in _find_sfd(desc):
            # bit k in `bits` is the transition into symbol k+1
            hdr_sym0 = sfd_end + 1
            if short:
                hdr_syms = sym[hdr_sym0: hdr_sym0 + 24]
                if hdr_syms.size < 24:
                    continue
                d = hdr_syms * np.conj(np.concatenate([sym[hdr_sym0 - 1:hdr_sym0],
                                                       hdr_syms[:-1]]))
                idx = np.round(np.angle(d) / (np.pi / 2)).astype(int) % 4
                hdr_scr = np.concatenate([_DQPSK_DIBIT[i] for i in idx]).astype(np.uint8)
                state = bits_to_int(bits[sfd_end - 7: sfd_end][::-1])
                hdr_bits = descramble(hdr_scr, seed=state)
                n_hdr_syms = 24
            else:
                hdr_bits = desc[sfd_end: sfd_end + 48]
                hdr_scr = bits[sfd_end: sfd_end + 48]
                n_hdr_syms = 48
            if hdr_bits.size < 48:
                continue
            rate, n_bytes, ok = _parse_plcp_header(hdr_bits[:48])
            if not ok or n_bytes < 1:
                continue

            data_sym0 = hdr_sym0 + n_hdr_syms
            scr_state = bits_to_int(
                np.concatenate([bits[sfd_end - 7:sfd_end], hdr_scr])[-7:][::-1])
            mpdu = _decode_psdu(y, sym, offset, data_sym0, rate, n_bytes, scr_state)
            if mpdu is None:
                continue
            payload, fcs_ok = (parse_frame(mpdu) if len(mpdu) >= MIN_MPDU_BYTES
                               else (b"", False))
            return RxResult(mpdu=mpdu, payload=payload, rate=rate,
                            short_preamble=short, fcs_ok=fcs_ok, cfo_hz=cfo)
    return None


def _decode_psdu(y, sym, offset, data_sym0, rate, n_bytes, scr_state):
    n_bits = 8 * n_bytes
    if rate in (1.0, 2.0):
        bps = 1 if rate == 1.0 else 2
        n_syms = n_bits // bps
        need = data_sym0 + n_syms
        if sym.size < need:
            return None
        span = sym[data_sym0 - 1: need]
        d = span[1:] * np.conj(span[:-1])
        if rate == 1.0:
            scr = (d.real < 0).astype(np.uint8)
        else:
            idx = np.round(np.angle(d) / (np.pi / 2)).astype(int) % 4
            scr = np.concatenate([_DQPSK_DIBIT[i] for i in idx]).astype(np.uint8)
    else:
        bps = 4 if rate == 5.5 else 8
        n_syms = n_bits // bps
        chip0 = offset + data_sym0 * _SYM
        need = chip0 + n_syms * 8 * _SPS
        if y.size < need:
            return None
        pairs = y[chip0:need].reshape(n_syms * 8, _SPS).mean(axis=1)
        words, bank_bits = _CCK_BANKS[rate]
        symbols = pairs.reshape(n_syms, 8)
        corr = symbols @ np.conj(words.T) / 8.0
        best = np.argmax(np.abs(corr), axis=1)
        peak = corr[np.arange(n_syms), best]
        ref = sym[data_sym0 - 1]
        if abs(ref) < 1e-12:
            return None
        scr = np.empty(n_bits, dtype=np.uint8)
        prev_phase = np.angle(ref)
        for n in range(n_syms):
            dphi = np.angle(peak[n]) - prev_phase
            if n % 2 == 1:
                dphi -= np.pi
            idx = int(np.round(dphi / (np.pi / 2))) % 4
            d01 = _DQPSK_DIBIT[idx]
            scr[n * bps: n * bps + 2] = d01
            scr[n * bps + 2: (n + 1) * bps] = bank_bits[best[n]]
            prev_phase = np.angle(peak[n])
    bits = descramble(scr, seed=scr_state)
    if bits.size % 8:
        return None
    return bytes(bits_to_bytes(bits))
