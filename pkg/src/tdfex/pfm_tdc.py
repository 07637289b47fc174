"""Rectified-PWM to digital conversion.

An SRO re-encodes the rectified channel duty as a 15-phase pulse train;
its multi-phase state is sampled at 62.5 kHz and differentiated with 1-bit
XORs, so each sample yields the number of phase quanta (2*pi/15) crossed
since the previous sample. Because the residual phase is bounded, the
per-sample quantization error is first-order noise-shaped. A first-order
CIC (boxcar sum by 1024) decimates the increments to 61.035 Hz frames.

Both rectified duties drive the encoder frequency upward with the same
gain, which is what turns the PFD's UP/DN pair into a summed full-wave
magnitude.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .td_fex import N_PHASES, SroState

OVERSAMPLE_HZ = 62500.0
DECIMATION = 1024
FRAME_RATE_HZ = OVERSAMPLE_HZ / DECIMATION  # 61.035...
FRAME_SHIFT_S = DECIMATION / OVERSAMPLE_HZ  # 16.384 ms

#: Defaults put the zero-input frame count at mid scale:
#: 15 * f_free * FRAME_SHIFT_S = 2048, and one unit of rectified duty adds
#: another 2048 counts per frame.
DEFAULT_FREE_RUN_HZ = 25000.0 / 3.0


@dataclass
class PfmConfig:
    f_free: float = DEFAULT_FREE_RUN_HZ
    k_pfm: float = 1.0
    f_fll: float = DEFAULT_FREE_RUN_HZ
    #: Sampling jitter in lane quanta, uniform [0, j). The default free run
    #: advances exactly 2.0 quanta per sample, so noise measurements need
    #: j > 1 for the readout to ever straddle a quantizer boundary; jitter
    #: enters inside the quantizer and is first-order shaped like the
    #: truncation error itself.
    jitter_lanes: float = 0.0
    freq_dither_hz: float = 0.0    # white Gaussian dither on f_free

    @property
    def gain_hz(self) -> float:
        return self.k_pfm * self.f_fll

    @property
    def counts_per_duty(self) -> float:
        """Frame-count slope per unit of rectified duty."""
        return N_PHASES * self.gain_hz * DECIMATION / OVERSAMPLE_HZ


@dataclass
class PfmEncoderState:
    sro: SroState
    cfg: PfmConfig

    @classmethod
    def create(cls, cfg: PfmConfig | None = None) -> "PfmEncoderState":
        cfg = cfg or PfmConfig()
        sro = SroState(free_run_freq=cfg.f_free,
                       switch_gains={"bpf_p": cfg.gain_hz, "bpf_n": cfg.gain_hz})
        return cls(sro=sro, cfg=cfg)


@dataclass
class PfmOutput:
    cycles: np.ndarray        # oscillator cycles at each 62.5 kHz sample
    increments: np.ndarray    # per-sample XOR counts (lane quanta)
    clamp_events: int = 0
    negative_events: int = 0


def instantaneous_freq(duty_p: np.ndarray, duty_n: np.ndarray,
                       cfg: PfmConfig) -> tuple[np.ndarray, int]:
    """Encoder frequency; rectified duties add (never subtract)."""
    f = cfg.f_free + cfg.gain_hz * (np.asarray(duty_p, float) + np.asarray(duty_n, float))
    clamps = int(np.count_nonzero(f < 0.0))
    if clamps:
        f = np.maximum(f, 0.0)
    return f, clamps


def phase_cycles(duty_p: np.ndarray, duty_n: np.ndarray, in_rate: float,
                 cfg: PfmConfig, rng: np.random.Generator | None = None
                 ) -> tuple[np.ndarray, int]:
    """Oscillator cycle count sampled on the 62.5 kHz grid.

    The frequency is integrated trapezoidally on the input grid and the
    cumulative phase interpolated at the sample instants, so arbitrary
    input rates (e.g. 8x audio) feed the fixed oversampling clock.
    """
    f, clamps = instantaneous_freq(duty_p, duty_n, cfg)
    if cfg.freq_dither_hz > 0.0:
        if rng is None:
            raise ContractError("freq_dither_hz needs an rng")
        f = np.maximum(f + rng.normal(0.0, cfg.freq_dither_hz, f.size), 0.0)
    if f.size == 0:
        return np.zeros(0), clamps
    dt = 1.0 / in_rate
    cycles_in = np.empty(f.size)
    cycles_in[0] = 0.0
    np.cumsum((f[1:] + f[:-1]) * (0.5 * dt), out=cycles_in[1:])
    duration = (f.size - 1) * dt
    n_samples = int(np.floor(duration * OVERSAMPLE_HZ)) + 1
    t = np.arange(n_samples) / OVERSAMPLE_HZ
    cycles = np.interp(t * in_rate, np.arange(f.size, dtype=float), cycles_in)
    return cycles, clamps


def lane_states(cycles: np.ndarray, jitter_lanes: float = 0.0,
                rng: np.random.Generator | None = None) -> np.ndarray:
    """Sampled 15-phase oscillator state, one toggle per lane per period.

    Lane k flips each time the phase passes 2*pi*(m + k/15); the sampled
    bit is the parity of the completed crossings, all lanes low at phase 0.
    """
    lane_cycles = sampled_lane_cycles(cycles, jitter_lanes, rng)[:, None] / N_PHASES
    offsets = np.arange(N_PHASES) / N_PHASES
    crossings = (np.floor(lane_cycles - offsets[None, :])
                 - np.floor(-offsets)[None, :]).astype(np.int64)
    return (crossings & 1).astype(np.uint8)


def sampled_lane_cycles(cycles: np.ndarray, jitter_lanes: float = 0.0,
                        rng: np.random.Generator | None = None) -> np.ndarray:
    """Phase in lane units (15 per cycle) as seen by the samplers."""
    lanes = np.asarray(cycles, float) * N_PHASES
    if jitter_lanes > 0.0:
        if rng is None:
            raise ContractError("jitter needs an rng")
        lanes = lanes + rng.uniform(0.0, jitter_lanes, lanes.size)
    return lanes


def xor_differentiate(lanes: np.ndarray, initial: np.ndarray | None = None) -> np.ndarray:
    """Per-sample toggle count across the 15 sampled lanes (0..15 each)."""
    lanes = np.asarray(lanes, dtype=np.uint8)
    if lanes.ndim != 2 or lanes.shape[1] != N_PHASES:
        raise ContractError(f"expected (n, {N_PHASES}) lane states")
    prev = np.zeros(N_PHASES, np.uint8) if initial is None else np.asarray(initial, np.uint8)
    shifted = np.vstack([prev[None, :], lanes[:-1]])
    return np.bitwise_xor(lanes, shifted).sum(axis=1).astype(np.int64)


def pfm_encode(bpf_p: np.ndarray, bpf_n: np.ndarray, in_rate: float,
               cfg: PfmConfig | None = None, seed: int | None = None) -> PfmOutput:
    """Duty pair to per-sample count increments at the oversampling clock.

    Increments are the floored lane-phase differences, identical to what
    the XOR array produces as long as each lane toggles at most once per
    sample (encoder frequency below the sampling clock).
    """
    cfg = cfg or PfmConfig()
    rng = np.random.default_rng(seed) if (cfg.jitter_lanes > 0.0 or cfg.freq_dither_hz > 0.0) else None
    cycles, clamps = phase_cycles(bpf_p, bpf_n, in_rate, cfg, rng)
    lanes = sampled_lane_cycles(cycles, cfg.jitter_lanes, rng)
    counts = np.diff(np.floor(lanes), prepend=0.0).astype(np.int64)
    neg = int(np.count_nonzero(counts < 0))
    if neg:
        counts = np.maximum(counts, 0)
    return PfmOutput(cycles=cycles, increments=counts, clamp_events=clamps,
                     negative_events=neg)


def cic_decimate(increments: np.ndarray, r: int = DECIMATION) -> np.ndarray:
    """First-order CIC: sum r consecutive increments, drop the tail."""
    if r < 1:
        raise ContractError("decimation ratio must be >= 1")
    increments = np.asarray(increments)
    n_frames = increments.size // r
    return increments[: n_frames * r].reshape(n_frames, r).sum(axis=1)


def encode_bank(rect_p: np.ndarray, rect_n: np.ndarray, in_rate: float,
                cfg: PfmConfig | None = None, seed: int | None = None,
                r: int = DECIMATION) -> np.ndarray:
    """Full TDC chain for a (n_samples, n_channels) duty pair; returns frames."""
    cfg = cfg or PfmConfig()
    n_ch = rect_p.shape[1]
    frames = None
    for ch in range(n_ch):
        ch_seed = None if seed is None else seed + ch
        out = pfm_encode(rect_p[:, ch], rect_n[:, ch], in_rate, cfg, ch_seed)
        f = cic_decimate(out.increments, r)
        if frames is None:
            frames = np.empty((f.size, n_ch), dtype=np.int64)
        frames[:, ch] = f
    return frames if frames is not None else np.zeros((0, n_ch), np.int64)
