"""Core complex-baseband types and spectral tools.

An IqBuffer is a complex sample vector plus its sample rate and an RF
center-frequency annotation; every modulator and channel model in the
package produces and consumes these. Spectra are reported in dB relative
to the total power of the analyzed buffer.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal as _sps

# Composite sample rate used for RF-band scenes: equal to the backscatter
# master clock (4 * 35.75 MHz), so quadrature states land exactly one per
# sample and 802.11b chips are exactly 13 samples wide.
COMPOSITE_RATE = 143e6

DB_FLOOR = -300.0


def db(x) -> np.ndarray | float:
    """Power ratio to dB with the numerical floor clamped at -300 dB."""
    x = np.asarray(x, dtype=float)
    out = np.full_like(x, DB_FLOOR)
    np.log10(x, out=out, where=x > 0)
    out = np.where(x > 0, 10.0 * out, DB_FLOOR)
    out = np.maximum(out, DB_FLOOR)
    return float(out) if out.ndim == 0 else out


def undb(x) -> np.ndarray | float:
    return 10.0 ** (np.asarray(x, dtype=float) / 10.0)


@dataclass(frozen=True)
class IqBuffer:
    """Complex baseband samples with rate and RF-center annotation."""

    samples: np.ndarray
    sample_rate: float
    center_freq: float = 0.0

    def __post_init__(self):
        s = np.ascontiguousarray(np.asarray(self.samples, dtype=np.complex128).reshape(-1))
        s.flags.writeable = False
        object.__setattr__(self, "samples", s)
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def power(self) -> float:
        """Mean |s|^2 over the buffer."""
        if self.samples.size == 0:
            return 0.0
        return float(np.mean(np.abs(self.samples) ** 2))


@dataclass(frozen=True)
class Spectrum:
    """Averaged periodogram; power_db is relative to total signal power."""

    bin_freqs: np.ndarray
    power_db: np.ndarray
    resolution_bw: float

    def band_fraction(self, f_lo: float, f_hi: float) -> float:
        """Linear fraction of total power inside [f_lo, f_hi)."""
        sel = (self.bin_freqs >= f_lo) & (self.bin_freqs < f_hi)
        return float(np.sum(undb(self.power_db[sel])))

    def band_power_db(self, f_lo: float, f_hi: float) -> float:
        return db(self.band_fraction(f_lo, f_hi))

    def power_at(self, freq: float) -> float:
        """Power (dB rel. total) of the bin nearest to freq."""
        i = int(np.argmin(np.abs(self.bin_freqs - freq)))
        return float(self.power_db[i])


def periodogram(buf: IqBuffer, nfft: int = 4096) -> Spectrum:
    """Averaged periodogram over non-overlapping rectangular segments.

    The normalization is chosen so that the integrated (linear) spectrum
    equals the mean power of the analyzed samples exactly, which keeps the
    Parseval identity testable to float precision.
    """
    x = buf.samples
    if nfft < 2:
        raise ValueError("nfft must be at least 2")
    nseg = x.size // nfft
    if nseg < 1:
        raise ValueError(
            f"buffer of {x.size} samples is too short for one {nfft}-point segment"
        )
    segs = x[: nseg * nfft].reshape(nseg, nfft)
    spec = np.fft.fft(segs, axis=1)
    p = np.mean(np.abs(spec) ** 2, axis=0) / nfft**2
    p = np.fft.fftshift(p)
    total = np.mean(np.abs(segs) ** 2)
    rel = p / total if total > 0 else p
    freqs = np.fft.fftshift(np.fft.fftfreq(nfft, d=1.0 / buf.sample_rate))
    return Spectrum(bin_freqs=freqs, power_db=db(rel), resolution_bw=buf.sample_rate / nfft)


def gaussian_filter_taps(bt: float, symbol_rate: float, sample_rate: float,
                         span_symbols: int = 3) -> np.ndarray:
    """Unit-DC-gain Gaussian pulse-shaping taps.

    The 3 dB bandwidth of the filter is bt * symbol_rate; the tap vector has
    span_symbols * (sample_rate / symbol_rate) + 1 entries and is symmetric.
    """
    if bt <= 0:
        raise ValueError("bt must be positive")
    if symbol_rate <= 0 or sample_rate <= 0:
        raise ValueError("rates must be positive")
    osr = sample_rate / symbol_rate
    if abs(osr - round(osr)) > 1e-9:
        raise ValueError("sample_rate must be an integer multiple of symbol_rate")
    osr = int(round(osr))
    if span_symbols < 1:
        raise ValueError("span_symbols must be at least 1")
    n = span_symbols * osr + 1
    # half-power point at B: sigma_t = sqrt(ln 2) / (2 pi B)
    sigma_t = math.sqrt(math.log(2.0)) / (2.0 * math.pi * bt * symbol_rate)
    t = (np.arange(n) - (n - 1) / 2.0) / sample_rate
    h = np.exp(-(t**2) / (2.0 * sigma_t**2))
    return h / np.sum(h)


def mix(buf: IqBuffer, freq_offset: float) -> IqBuffer:
    """Multiply by exp(+j 2 pi f t); the center annotation moves down by f.

    A tone that sat at absolute frequency F before the mix still sits at F
    afterwards: its baseband position changes, the annotation compensates.
    """
    n = np.arange(buf.samples.size)
    rot = np.exp(2j * np.pi * freq_offset * n / buf.sample_rate)
    return IqBuffer(buf.samples * rot, buf.sample_rate, buf.center_freq - freq_offset)


def resample(buf: IqBuffer, new_rate: float) -> IqBuffer:
    """Polyphase rational resampling; the time origin is preserved."""
    if new_rate <= 0:
        raise ValueError("new_rate must be positive")
    if new_rate == buf.sample_rate:
        return buf
    frac = Fraction(new_rate / buf.sample_rate).limit_denominator(10000)
    if frac.numerator == 0:
        raise ValueError("resampling ratio too extreme")
    y = _sps.resample_poly(buf.samples, frac.numerator, frac.denominator)
    return IqBuffer(y, buf.sample_rate * frac.numerator / frac.denominator, buf.center_freq)


def concat(bufs) -> IqBuffer:
    bufs = list(bufs)
    rates = {b.sample_rate for b in bufs}
    if len(rates) != 1:
        raise ValueError("cannot concatenate buffers with different sample rates")
    return IqBuffer(np.concatenate([b.samples for b in bufs]),
                    bufs[0].sample_rate, bufs[0].center_freq)


# ---------------------------------------------------------------------------
# IQ file format: interleaved little-endian float32 I/Q pairs plus a UTF-8
# key=value sidecar ("<path>.meta") carrying rate and center annotations.
# ---------------------------------------------------------------------------

_CREATED_BY = "scatterlink 0.1.0"


def write_iq(path, buf: IqBuffer) -> None:
    path = Path(path)
    flat = np.empty(2 * buf.samples.size, dtype="<f4")
    flat[0::2] = buf.samples.real.astype(np.float32)
    flat[1::2] = buf.samples.imag.astype(np.float32)
    path.write_bytes(flat.tobytes())
    meta = (
        f"sample_rate_hz={buf.sample_rate:.10g}\n"
        f"center_freq_hz={buf.center_freq:.10g}\n"
        f"created_by={_CREATED_BY}\n"
    )
    Path(str(path) + ".meta").write_text(meta, encoding="utf-8")


def read_iq(path) -> IqBuffer:
    path = Path(path)
    flat = np.frombuffer(path.read_bytes(), dtype="<f4")
    if flat.size % 2:
        raise ValueError(f"{path} does not contain whole I/Q pairs")
    meta = {}
    meta_path = Path(str(path) + ".meta")
    if not meta_path.exists():
        raise FileNotFoundError(f"missing sidecar {meta_path}")
    for line in meta_path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and "=" in line:
            k, v = line.split("=", 1)
            meta[k.strip()] = v.strip()
    samples = flat[0::2].astype(np.float64) + 1j * flat[1::2].astype(np.float64)
    return IqBuffer(samples, float(meta["sample_rate_hz"]),
                    float(meta.get("center_freq_hz", 0.0)))
