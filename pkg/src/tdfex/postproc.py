"""Post-processing of raw decimated counts into classifier features.

Chain per channel: subtract the programmable offset beta (the free-running
count), apply the gain calibration alpha, clamp to the 12-bit raw range,
compress through a 10-bit logarithmic LUT, then normalize with per-channel
mean/sigma into signed Q6.8 (14-bit) values.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CalibrationError, ContractError, FormatError

RAW_MAX = 4095
LOG_MAX = 1023
NORM_SAT = 8191  # +/- (2^13 - 1) LSBs at 2^-8 resolution
Q8 = 256

#: 10-bit logarithmic compression table over the 12-bit input range:
#: round(1023 * log2(1 + x) / log2(4096)).
LOG_LUT = np.floor(LOG_MAX * np.log2(1.0 + np.arange(RAW_MAX + 1)) / 12.0 + 0.5).astype(np.int64)


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass
class Calibration:
    beta: np.ndarray    # per-channel offset, frame-count units
    alpha: np.ndarray   # per-channel gain (quantized to Q16 on save)
    mu: np.ndarray      # per-channel LOG-domain mean
    sigma: np.ndarray   # per-channel LOG-domain standard deviation
    corpus_sha256: str = ""

    def __post_init__(self):
        for name in ("beta", "alpha", "mu", "sigma"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if np.any(self.sigma <= 0):
            raise CalibrationError("sigma must be positive in every channel")
        if np.any(self.alpha <= 0):
            raise CalibrationError("alpha must be positive in every channel")

    @property
    def n_channels(self) -> int:
        return self.beta.size

    @classmethod
    def identity(cls, n_channels: int = 16) -> "Calibration":
        return cls(beta=np.zeros(n_channels), alpha=np.ones(n_channels),
                   mu=np.zeros(n_channels), sigma=np.ones(n_channels))


def apply_offset_gain(frames: np.ndarray, calib: Calibration) -> np.ndarray:
    """clamp(round(alpha * (count - beta)), 0, 4095) per channel."""
    frames = np.asarray(frames, dtype=np.float64)
    out = _round_half_away(calib.alpha * (frames - calib.beta))
    return np.clip(out, 0, RAW_MAX).astype(np.int64)


def log_compress(frames: np.ndarray) -> np.ndarray:
    frames = np.asarray(frames)
    if frames.size and (frames.min() < 0 or frames.max() > RAW_MAX):
        raise ContractError("log_compress input outside [0, 4095]")
    return LOG_LUT[frames]


def normalize(frames: np.ndarray, mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """(x - mu)/sigma quantized to Q6.8, saturating at +/-8191 LSBs."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ContractError("sigma must be positive")
    scaled = (np.asarray(frames, dtype=np.float64) - mu) / sigma * Q8
    return np.clip(_round_half_away(scaled), -NORM_SAT, NORM_SAT).astype(np.int64)


def raw_to_norm(frames: np.ndarray, calib: Calibration) -> np.ndarray:
    return normalize(log_compress(apply_offset_gain(frames, calib)), calib.mu, calib.sigma)


def calibrate(silence_frames: np.ndarray, tone_frames: list[np.ndarray],
              corpus_frames: np.ndarray, corpus_sha256: str = "") -> Calibration:
    """Derive beta, alpha, mu, sigma from recorded raw frames.

    silence_frames: (n, ch) counts with zero input, averaged into beta.
    tone_frames[k]: (n, ch) counts while a tone sits on channel k's center;
    the calibrated mid-band response is equalized to channel 0's.
    corpus_frames: (m, ch) counts over the training corpus for mu/sigma
    (computed in the LOG domain after beta/alpha correction).
    """
    silence_frames = np.asarray(silence_frames, dtype=np.float64)
    if silence_frames.ndim != 2 or silence_frames.shape[0] < 1:
        raise CalibrationError("need at least one silence frame")
    n_ch = silence_frames.shape[1]
    if len(tone_frames) != n_ch:
        raise CalibrationError(f"need one tone recording per channel ({n_ch})")
    beta = silence_frames.mean(axis=0)

    gains = np.empty(n_ch)
    for ch, rec in enumerate(tone_frames):
        rec = np.asarray(rec, dtype=np.float64)
        gains[ch] = rec[:, ch].mean() - beta[ch]
    if np.any(gains <= 0):
        bad = np.nonzero(gains <= 0)[0].tolist()
        raise CalibrationError(f"no mid-band response measured on channels {bad}")
    alpha = gains[0] / gains

    partial = Calibration(beta=beta, alpha=alpha, mu=np.zeros(n_ch), sigma=np.ones(n_ch))
    logs = log_compress(apply_offset_gain(corpus_frames, partial)).astype(np.float64)
    if logs.shape[0] < 2:
        raise CalibrationError("corpus too small for statistics")
    mu = logs.mean(axis=0)
    sigma = logs.std(axis=0)
    if np.any(sigma == 0):
        bad = np.nonzero(sigma == 0)[0].tolist()
        raise CalibrationError(f"zero variance in corpus channels {bad}")
    return Calibration(beta=beta, alpha=alpha, mu=mu, sigma=sigma,
                       corpus_sha256=corpus_sha256)


# --- calibration files ------------------------------------------------------


def _fmt_array(values: np.ndarray) -> str:
    return ",".join(repr(float(v)) for v in values)


def save_calibration(calib: Calibration, path: str | Path) -> None:
    """Plain-text key=value; alpha is stored quantized to Q16."""
    alpha_q16 = np.round(calib.alpha * 65536.0).astype(np.int64)
    lines = ["# feature calibration v1"]
    if calib.corpus_sha256:
        lines.append(f"corpus_sha256 = {calib.corpus_sha256}")
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch:
        lines.append(f"date_epoch = {epoch}")
    lines.append(f"beta = {_fmt_array(calib.beta)}")
    lines.append(f"alpha_q16 = {','.join(str(int(v)) for v in alpha_q16)}")
    lines.append(f"mu = {_fmt_array(calib.mu)}")
    lines.append(f"sigma = {_fmt_array(calib.sigma)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_calibration(path: str | Path) -> Calibration:
    fields: dict[str, str] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"{path}: expected key = value, got {line!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        fields[key] = val
    try:
        beta = np.array([float(v) for v in fields["beta"].split(",")])
        alpha = np.array([int(v) for v in fields["alpha_q16"].split(",")]) / 65536.0
        mu = np.array([float(v) for v in fields["mu"].split(",")])
        sigma = np.array([float(v) for v in fields["sigma"].split(",")])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: missing or malformed field ({exc})") from exc
    return Calibration(beta=beta, alpha=alpha, mu=mu, sigma=sigma,
                       corpus_sha256=fields.get("corpus_sha256", ""))
