"""End-to-end front-end wiring: clip in, feature frames out.

Composes the converter, the band-pass bank, the pulse-frequency TDC and
the post-processing stages; also provides the steady-tone responses the
sweep and calibration paths feed on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from . import pfm_tdc, postproc, ref_fex, td_fex
from .errors import ContractError
from .signal_io import PcmClip, synth_tone


@dataclass
class FrontendConfig:
    channels: list[td_fex.ChannelConfig] = field(default_factory=td_fex.default_channel_configs)
    vtc: td_fex.VtcConfig = field(default_factory=td_fex.VtcConfig)
    pfm: pfm_tdc.PfmConfig = field(default_factory=pfm_tdc.PfmConfig)
    oversample: int = 8
    seed: int = 0

    @property
    def n_channels(self) -> int:
        return len(self.channels)


def td_rectified_duty(clip: PcmClip, fe: FrontendConfig) -> tuple[np.ndarray, np.ndarray, float]:
    """Per-channel rectified UP/DN duty streams, averaged fidelity.

    Returns (up, dn) as (n_samples, n_channels) plus the internal rate.
    """
    pwm = td_fex.vtc_convert(clip, fe.vtc, oversample=fe.oversample)
    u = pwm.diff_duty()
    up = np.empty((u.size, fe.n_channels))
    dn = np.empty_like(up)
    for i, ccfg in enumerate(fe.channels):
        r = td_fex.channel_averaged(u, ccfg, pwm.rate)
        up[:, i] = r.up
        dn[:, i] = r.dn
    return up, dn, pwm.rate


def td_raw_frames(clip: PcmClip, fe: FrontendConfig) -> np.ndarray:
    """Full time-domain chain to raw decimated counts, (n_frames, n_channels)."""
    if clip.sample_rate != 32000:
        raise ContractError("the front end runs at 32 kHz; resample first")
    up, dn, rate = td_rectified_duty(clip, fe)
    return pfm_tdc.encode_bank(up, dn, rate, fe.pfm, seed=fe.seed)


def ref_raw_frames(clip: PcmClip, bank: ref_fex.MelBank | None = None,
                   cfg: ref_fex.RefFexConfig | None = None) -> np.ndarray:
    bank = bank or ref_fex.MelBank.design()
    return ref_fex.ref_extract(clip, bank, cfg or ref_fex.RefFexConfig())


def _tone_windows(freq: float, settle_cycles: int, measure_cycles: int,
                  min_settle_s: float = 0.04) -> tuple[float, float]:
    settle = max(settle_cycles / freq, min_settle_s)
    measure = measure_cycles / freq
    return settle, measure


def td_tone_response(fe: FrontendConfig, freq: float, amplitude: float,
                     settle_cycles: int = 12, measure_cycles: int = 24) -> np.ndarray:
    """Steady-state mean rectified duty of every channel under one tone."""
    settle, measure = _tone_windows(freq, settle_cycles, measure_cycles)
    clip = synth_tone(freq, settle + measure, 32000, amplitude)
    up, dn, rate = td_rectified_duty(clip, fe)
    i0 = int(round(settle * rate))
    n_cycles = max(1, int(np.floor((up.shape[0] - i0) * freq / rate)))
    i1 = i0 + int(round(n_cycles * rate / freq))
    rect = up[i0:i1] + dn[i0:i1]
    return rect.mean(axis=0)


def ref_tone_response(bank: ref_fex.MelBank, freq: float, amplitude: float,
                      settle_cycles: int = 12, measure_cycles: int = 24) -> np.ndarray:
    """Steady-state mean rectified output of the reference bank (pre-quantizer).

    Probes that land on a low-order submultiple of the rate (e.g. fs/4) are
    detuned by 0.5% so the rectified-mean estimate is not phase-locked.
    """
    ratio = bank.rate / freq
    if abs(ratio - round(ratio)) < 1e-9 and ratio <= 8:
        freq *= 1.005
    settle, measure = _tone_windows(freq, settle_cycles, measure_cycles)
    rate = bank.rate
    clip = synth_tone(freq, settle + measure, int(rate), amplitude)
    i0 = int(round(settle * rate))
    n_cycles = max(1, int(np.floor((clip.samples.size - i0) * freq / rate)))
    i1 = i0 + int(round(n_cycles * rate / freq))
    out = np.empty(len(bank.centers))
    for ch, (b, a) in enumerate(bank.biquad_coeffs):
        y = np.abs(lfilter(b, a, clip.samples))
        out[ch] = y[i0:i1].mean()
    return out


def default_calibration(fe: FrontendConfig, corpus_frames: np.ndarray,
                        corpus_sha256: str = "", tone_amplitude: float = 0.25,
                        silence_seconds: float = 2.0) -> postproc.Calibration:
    """Bench-style self-calibration.

    Beta comes from a zero-input run, alpha from one tone per channel
    center, mu/sigma from the supplied raw corpus frames.
    """
    silence = PcmClip(np.zeros(int(32000 * silence_seconds)), 32000)
    silence_frames = td_raw_frames(silence, fe)
    tone_frames = []
    for ccfg in fe.channels:
        settle, measure = _tone_windows(ccfg.center, 12, 24)
        duration = settle + measure + 2.5 * pfm_tdc.FRAME_SHIFT_S
        clip = synth_tone(ccfg.center, duration, 32000, tone_amplitude)
        frames = td_raw_frames(clip, fe)
        skip = int(np.ceil(settle / pfm_tdc.FRAME_SHIFT_S))
        tone_frames.append(frames[skip:])
    return postproc.calibrate(silence_frames, tone_frames, corpus_frames,
                              corpus_sha256=corpus_sha256)


def td_norm_frames(clip: PcmClip, fe: FrontendConfig,
                   calib: postproc.Calibration) -> np.ndarray:
    return postproc.raw_to_norm(td_raw_frames(clip, fe), calib)
