"""Single-sideband backscatter: impedance states, staircase, composition.

A four-state RF switch terminates the tag antenna in impedances whose
reflection coefficients form a QPSK constellation. Cycling the states in
order at 4 * delta_f rotates the reflected carrier by 90 degrees per step,
which is a staircase approximation of exp(j 2 pi delta_f t): the mixing
product appears on one side of the carrier only. Data modulation rides on
top as an index offset into the same four states, so one switch does the
frequency shift and the phase modulation at once.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sigcore import IqBuffer

ANTENNA_IMPEDANCE = 50.0

# Termination impedances (ohms, normalized to the antenna) and the QPSK
# reflection constellation they induce, in cycling order A, B, C, D.
IMPEDANCE_STATES = ANTENNA_IMPEDANCE * np.array([
    -1j / (2 + 1j),
    (2 - 1j) / 1j,
    (2 + 1j) / -1j,
    1j / (2 - 1j),
])
REFLECTION_COEFFS = np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j])
STATE_LABELS = "ABCD"

DEFAULT_EFFICIENCY = 0.5


def reflection_coefficient(z_load, z_antenna: float = ANTENNA_IMPEDANCE):
    """Gamma = (Za - Zc) / (Za + Zc) for the tag's antenna-side convention."""
    z_load = np.asarray(z_load, dtype=complex)
    return (z_antenna - z_load) / (z_antenna + z_load)


@dataclass(frozen=True)
class FrequencyPlan:
    """Clocking of one backscatter link.

    delta_f is the signed carrier shift: the state staircase runs forward
    for a positive shift and backward for a negative one. The master clock
    is always four steps per shift cycle, and the data modulator's
    baseband clock must divide it so chips sit on whole state ticks.
    """

    delta_f: float = 35.75e6
    master_clock: float = 143e6
    baseband_clock: float = 11e6

    def __post_init__(self):
        if self.delta_f == 0:
            raise ValueError("delta_f must be nonzero")
        if abs(self.master_clock - 4 * abs(self.delta_f)) > 1e-6:
            raise ValueError(
                f"master_clock {self.master_clock:g} != 4*|delta_f| = "
                f"{4 * abs(self.delta_f):g}"
            )
        ratio = self.master_clock / self.baseband_clock
        if abs(ratio - round(ratio)) > 1e-9 or ratio < 1:
            raise ValueError(
                f"baseband_clock {self.baseband_clock:g} must divide "
                f"master_clock {self.master_clock:g}"
            )

    @property
    def sideband_sign(self) -> int:
        return 1 if self.delta_f > 0 else -1

    @property
    def ticks_per_chip(self) -> int:
        return int(round(self.master_clock / self.baseband_clock))


def state_staircase(n_states: int, sign: int = 1, phase: int = 0) -> np.ndarray:
    """Indices of the bare frequency-shifting sequence (A,B,C,D or reversed)."""
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    return ((phase + sign * np.arange(n_states)) % 4).astype(np.int8)


def states_to_gamma(states, efficiency: float = DEFAULT_EFFICIENCY) -> np.ndarray:
    """Reflection waveform for a state-index sequence, |gamma| = efficiency."""
    states = np.asarray(states)
    return efficiency * REFLECTION_COEFFS[states] / np.sqrt(2.0)


def quadrant_of(chips, tol: float = 1e-6) -> np.ndarray:
    """Map axis-aligned unit chips {1, j, -1, -j} to indices {0,1,2,3}."""
    chips = np.asarray(chips, dtype=complex)
    idx = np.round(np.angle(chips) / (np.pi / 2)).astype(int) % 4
    axes = np.exp(0.5j * np.pi * idx)
    if chips.size and np.max(np.abs(chips - axes)) > tol:
        worst = np.argmax(np.abs(chips - axes))
        raise ValueError(f"chip {chips.flat[worst]} is not on a unit axis")
    return idx.astype(np.int8)


def chips_to_backscatter(chip_quadrants, plan: FrequencyPlan) -> np.ndarray:
    """Compose data chips with the staircase: one state index per master tick.

    Adding the chip's quadrant index to the running staircase index rotates
    the shifted carrier by the chip phase, because the constellation is the
    same four points: gamma[(k + m) % 4] = gamma[k] * exp(j pi m / 2).
    """
    chip_quadrants = np.asarray(chip_quadrants)
    ticks = np.repeat(chip_quadrants.astype(np.int64), plan.ticks_per_chip)
    stair = state_staircase(ticks.size, plan.sideband_sign).astype(np.int64)
    return ((stair + ticks) % 4).astype(np.int8)


def apply_backscatter(carrier: IqBuffer, states, plan: FrequencyPlan,
                      efficiency: float = DEFAULT_EFFICIENCY,
                      start_sample: int = 0) -> IqBuffer:
    """Reflect a carrier buffer off the tag switching through `states`.

    The carrier must be sampled on a multiple of the master clock and fast
    enough to carry the shifted product (2 * (|delta_f| + baseband clock)).
    Outside the tag's transmission window the tag absorbs (gamma = 0).
    """
    nyq = 2 * (abs(plan.delta_f) + plan.baseband_clock)
    if carrier.sample_rate < nyq - 1e-6:
        raise ValueError(
            f"sample rate {carrier.sample_rate:g} below {nyq:g} needed for the "
            "shifted sideband"
        )
    sps = carrier.sample_rate / plan.master_clock
    if abs(sps - round(sps)) > 1e-9 or sps < 1:
        raise ValueError(
            f"sample rate {carrier.sample_rate:g} is not an integer multiple of "
            f"the master clock {plan.master_clock:g}"
        )
    sps = int(round(sps))
    states = np.asarray(states)
    gamma_ticks = np.repeat(states_to_gamma(states, efficiency), sps)
    gamma = np.zeros(carrier.samples.size, dtype=complex)
    stop = min(start_sample + gamma_ticks.size, gamma.size)
    if start_sample < 0 or start_sample >= gamma.size:
        raise ValueError("start_sample outside the carrier buffer")
    gamma[start_sample:stop] = gamma_ticks[: stop - start_sample]
    return IqBuffer(carrier.samples * gamma, carrier.sample_rate, carrier.center_freq)


def staircase_waveform(plan: FrequencyPlan, n_states: int,
                       samples_per_state: int = 1,
                       efficiency: float = DEFAULT_EFFICIENCY) -> IqBuffer:
    """The bare reflection staircase as a baseband buffer (for spectra)."""
    if samples_per_state < 1:
        raise ValueError("samples_per_state must be at least 1")
    states = state_staircase(n_states, plan.sideband_sign)
    gamma = np.repeat(states_to_gamma(states, efficiency), samples_per_state)
    return IqBuffer(gamma, plan.master_clock * samples_per_state, 0.0)


def dsb_waveform(plan: FrequencyPlan, n_cycles: int,
                 samples_per_state: int = 1,
                 efficiency: float = DEFAULT_EFFICIENCY) -> IqBuffer:
    """Two-state comparison tag: gamma toggles sign as a square at delta_f.

    Produced sidebands sit at +-delta_f with equal power, which is the
    3 dB (and mirror-interference) penalty the four-state tag avoids.
    """
    half = 2 * samples_per_state        # half a shift period, in samples
    one = np.concatenate([np.zeros(half, dtype=np.int8),
                          np.full(half, 2, dtype=np.int8)])
    states = np.tile(one, n_cycles)
    gamma = states_to_gamma(states, efficiency)
    return IqBuffer(gamma, plan.master_clock * samples_per_state, 0.0)
