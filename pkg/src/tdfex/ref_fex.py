"""Voltage-domain reference feature extractor.

This is the plain sample-domain model the time-domain chain is checked
against: a bank of second-order band-pass biquads on mel-spaced centers,
full-wave rectification, a boxcar mean per frame, and a 12-bit quantizer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .errors import ContractError
from .signal_io import PcmClip

#: Quantizer full scale: rectified mean of a unit-amplitude tone through a
#: unity-gain channel maps to code 4095.
FULL_SCALE_MEAN = 2.0 / np.pi


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def mel_centers(n: int, f_lo: float, f_hi: float) -> np.ndarray:
    """n frequencies equally spaced on the mel axis, endpoints exact."""
    if n < 2:
        raise ContractError("need at least 2 channels")
    if not 0 < f_lo < f_hi:
        raise ContractError("need 0 < f_lo < f_hi")
    centers = mel_to_hz(np.linspace(hz_to_mel(f_lo), hz_to_mel(f_hi), n))
    centers[0], centers[-1] = f_lo, f_hi
    return centers


def design_bandpass(center: float, q: float, rate: float) -> tuple[np.ndarray, np.ndarray]:
    """Discrete band-pass biquad, unity peak gain at `center`.

    Bilinear transform of B s / (s^2 + B s + W0^2) with both the peak and
    the -3 dB edges pre-warped: W0 = tan(pi fc/fs) puts the digital peak on
    the center, and B = (1 + W0^2) tan(pi fc/(Q fs)) makes the digital -3 dB
    width exactly center/Q. Warping only the center squeezes the skirts once
    the center is an appreciable fraction of Nyquist.
    """
    if center >= rate / 2:
        raise ContractError(f"center {center} Hz at or above Nyquist ({rate / 2} Hz)")
    if center <= 0 or q <= 0:
        raise ContractError("center and q must be positive")
    w0 = np.tan(np.pi * center / rate)
    bw = (1.0 + w0 * w0) * np.tan(np.pi * center / (q * rate))
    d0 = 1.0 + bw + w0 * w0
    b = np.array([bw / d0, 0.0, -bw / d0])
    a = np.array([1.0, (2.0 * w0 * w0 - 2.0) / d0, (1.0 - bw + w0 * w0) / d0])
    return b, a


@dataclass
class MelBank:
    centers: np.ndarray
    q_factor: float
    rate: float
    biquad_coeffs: list = field(default_factory=list)

    @classmethod
    def design(cls, rate: float = 32000.0, n: int = 16, f_lo: float = 100.0,
               f_hi: float = 8000.0, q: float = 2.0) -> "MelBank":
        centers = mel_centers(n, f_lo, f_hi)
        coeffs = [design_bandpass(c, q, rate) for c in centers]
        return cls(centers=centers, q_factor=q, rate=rate, biquad_coeffs=coeffs)

    def gain_at(self, freq: float) -> np.ndarray:
        """Magnitude response of every channel at one frequency."""
        z = np.exp(-2j * np.pi * freq / self.rate)
        out = np.empty(len(self.centers))
        for i, (b, a) in enumerate(self.biquad_coeffs):
            num = b[0] + b[1] * z + b[2] * z * z
            den = a[0] + a[1] * z + a[2] * z * z
            out[i] = abs(num / den)
        return out


@dataclass
class RefFexConfig:
    sample_rate: int = 32000
    frame_shift: float = 0.016
    quant_bits: int = 12
    full_scale: float = FULL_SCALE_MEAN

    def __post_init__(self):
        hop = self.frame_shift * self.sample_rate
        if abs(hop - round(hop)) > 1e-9:
            raise ContractError("frame_shift * sample_rate must be an integer")

    @property
    def hop(self) -> int:
        return round(self.frame_shift * self.sample_rate)

    @property
    def code_max(self) -> int:
        return (1 << self.quant_bits) - 1


def ref_rectified_means(clip: PcmClip, bank: MelBank, cfg: RefFexConfig) -> np.ndarray:
    """Per-frame, per-channel mean of |band-pass output|, before quantization."""
    if clip.sample_rate != cfg.sample_rate:
        raise ContractError(f"clip rate {clip.sample_rate} != config {cfg.sample_rate}")
    hop = cfg.hop
    n_frames = clip.samples.size // hop
    if n_frames == 0:
        return np.zeros((0, len(bank.centers)))
    x = clip.samples[: n_frames * hop]
    out = np.empty((n_frames, len(bank.centers)))
    for ch, (b, a) in enumerate(bank.biquad_coeffs):
        y = np.abs(lfilter(b, a, x))
        out[:, ch] = y.reshape(n_frames, hop).mean(axis=1)
    return out


def quantize_12bit(means: np.ndarray, cfg: RefFexConfig) -> np.ndarray:
    """Round-to-nearest, saturate at the code ceiling."""
    codes = np.floor(means / cfg.full_scale * cfg.code_max + 0.5)
    return np.clip(codes, 0, cfg.code_max).astype(np.int64)


def ref_extract(clip: PcmClip, bank: MelBank, cfg: RefFexConfig | None = None) -> np.ndarray:
    """Full reference chain: band-pass, rectify, frame mean, 12-bit codes.

    Returns an (n_frames, n_channels) integer array.
    """
    cfg = cfg or RefFexConfig()
    return quantize_12bit(ref_rectified_means(clip, bank, cfg), cfg)
