"""Measurement and figure-of-merit suite.

Covers the bench-style characterization of the front end: frequency
sweeps with center/Q extraction, pre-decimation noise spectra with slope
fits, dynamic range arithmetic, Schreier-style figure of merit with the
bandwidth-normalized power term, corpus-level SNR injection, and the
12-class accuracy/confusion evaluation.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import welch

from .errors import ContractError
from .pfm_tdc import FRAME_RATE_HZ

MIN_SPECTRUM_SAMPLES = 1 << 18
WELCH_NPERSEG = 1 << 14


@dataclass
class FomInput:
    dr_db: float
    power_mw: float
    n_channels: int
    f_lo: float
    f_hi: float
    frame_shift_s: float

    def __post_init__(self):
        if min(self.power_mw, self.f_lo, self.f_hi, self.frame_shift_s) <= 0:
            raise ContractError("FoM inputs must be positive")
        if self.f_lo >= self.f_hi:
            raise ContractError("need f_lo < f_hi")
        if self.n_channels < 2:
            raise ContractError("need at least 2 channels")


def normalized_power_mw(inp: FomInput) -> float:
    """Power rescaled to a 16-channel, 20 kHz-top-frequency equivalent bank."""
    r = (inp.f_lo / inp.f_hi) ** (1.0 / (inp.n_channels - 1))
    return inp.power_mw * (1.0 - r) / (1.0 - r ** inp.n_channels) * (20000.0 / inp.f_hi)


def fom_schreier(inp: FomInput) -> float:
    """DR + 10 log10(1 / (P_norm * 2 * frame shift)), power in mW, shift in s."""
    p_norm = normalized_power_mw(inp)
    return inp.dr_db + 10.0 * np.log10(1.0 / (p_norm * 2.0 * inp.frame_shift_s))


#: Published analog feature-extractor comparison rows (name, inputs, claimed FoM).
PUBLISHED_FEX_ROWS: list[tuple[str, FomInput, float]] = [
    ("this-design", FomInput(54.89, 9.3e-3, 16, 111.0, 10400.0, 0.016), 93.11),
    ("yang-jssc19", FomInput(40.0, 0.38e-3, 16, 100.0, 5000.0, 0.010), 91.5),
    ("oh-jssc19", FomInput(47.0, 0.06e-3, 32, 75.0, 4000.0, 0.512), 91.33),
    # The badami row is not reproducible under this unit convention; the
    # computed value sits ~3 dB below the published one and is reported as is.
    ("badami-jssc16", FomInput(45.0, 6.0e-3, 16, 75.0, 5000.0, 0.03125), 82.3),
]


def fom_comparison_report() -> list[dict]:
    rows = []
    for name, inp, published in PUBLISHED_FEX_ROWS:
        computed = fom_schreier(inp)
        rows.append({
            "name": name,
            "computed_db": round(computed, 3),
            "published_db": published,
            "deviation_db": round(computed - published, 3),
        })
    return rows


def vpp_to_rms(vpp: float) -> float:
    """Peak-to-peak of a sine to RMS."""
    return vpp / (2.0 * np.sqrt(2.0))


def dynamic_range(max_rms: float, noise_rms: float) -> float:
    if max_rms <= 0 or noise_rms <= 0:
        raise ContractError("RMS values must be positive")
    return 20.0 * np.log10(max_rms / noise_rms)


# --- corpus noise injection --------------------------------------------------


def corpus_average_power(frames: np.ndarray, beta: np.ndarray | None = None) -> float:
    """Mean squared value over a recorded raw corpus (optionally beta-referred)."""
    frames = np.asarray(frames, dtype=np.float64)
    if beta is not None:
        frames = frames - beta
    return float(np.mean(frames ** 2))


def inject_noise(frames: np.ndarray, snr_db: float | None, seed: int,
                 p_avg: float) -> np.ndarray:
    """Add white Gaussian noise with power p_avg / 10^(SNR/10), clamp to raw range.

    snr_db None means no noise (identity). p_avg is the precomputed corpus
    average power the SNR is referred to.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if snr_db is None:
        return frames.astype(np.int64)
    if p_avg <= 0:
        raise ContractError("p_avg must be positive")
    sigma = np.sqrt(p_avg / 10.0 ** (snr_db / 10.0))
    rng = np.random.default_rng(seed)
    noisy = frames + rng.normal(0.0, sigma, frames.shape)
    return np.clip(np.sign(noisy) * np.floor(np.abs(noisy) + 0.5), 0, 4095).astype(np.int64)


# --- frequency sweep -----------------------------------------------------------


@dataclass
class SweepResult:
    freqs: np.ndarray           # (F,)
    gains: np.ndarray           # (F, n_channels)
    centers: np.ndarray         # measured per channel
    center_gains: np.ndarray
    q: np.ndarray               # from -3 dB crossings; nan if out of grid

    @property
    def n_channels(self) -> int:
        return self.gains.shape[1]


def freq_sweep(response_fn, freqs, amplitude: float = 0.25,
               nyquist: float | None = None) -> SweepResult:
    """Per-channel gain curves from a tone-response callable.

    response_fn(freq, amplitude) must return the steady-state response of
    every channel to one tone (any consistent linear unit); gains are
    normalized by the amplitude. Tones at or above `nyquist` are skipped
    with a warning.
    """
    freqs = np.asarray(sorted(freqs), dtype=float)
    if nyquist is not None:
        skipped = freqs[freqs >= nyquist]
        if skipped.size:
            warnings.warn(f"skipping {skipped.size} tones at or above "
                          f"{nyquist:.0f} Hz", stacklevel=2)
        freqs = freqs[freqs < nyquist]
    if freqs.size < 5:
        raise ContractError("sweep needs at least 5 usable tones")
    rows = []
    for f in freqs:
        rows.append(np.asarray(response_fn(f, amplitude), dtype=float) / amplitude)
    gains = np.vstack(rows)
    centers = np.empty(gains.shape[1])
    center_gains = np.empty(gains.shape[1])
    qs = np.empty(gains.shape[1])
    logf = np.log10(freqs)
    for ch in range(gains.shape[1]):
        db = 20.0 * np.log10(np.maximum(gains[:, ch], 1e-30))
        centers[ch], peak_db = _peak_interp(logf, db)
        center_gains[ch] = 10.0 ** (peak_db / 20.0)
        qs[ch] = _q_from_crossings(logf, db, peak_db)
    return SweepResult(freqs=freqs, gains=gains, centers=centers,
                       center_gains=center_gains, q=qs)


def _peak_interp(logf: np.ndarray, db: np.ndarray) -> tuple[float, float]:
    i = int(np.argmax(db))
    if i == 0 or i == db.size - 1:
        return 10.0 ** logf[i], db[i]
    y0, y1, y2 = db[i - 1], db[i], db[i + 1]
    denom = y0 - 2.0 * y1 + y2
    delta = 0.0 if denom == 0 else 0.5 * (y0 - y2) / denom
    delta = float(np.clip(delta, -0.5, 0.5))
    step = 0.5 * (logf[i + 1] - logf[i - 1])
    peak_db = y1 - 0.25 * (y0 - y2) * delta
    return 10.0 ** (logf[i] + delta * step), peak_db


def _q_from_crossings(logf: np.ndarray, db: np.ndarray, peak_db: float) -> float:
    target = peak_db - 20.0 * np.log10(np.sqrt(2.0))
    i = int(np.argmax(db))

    def cross(idx_range):
        prev = None
        for j in idx_range:
            if prev is not None:
                a, b = db[prev], db[j]
                if (a - target) * (b - target) <= 0 and a != b:
                    t = (target - a) / (b - a)
                    return 10.0 ** (logf[prev] + t * (logf[j] - logf[prev]))
            prev = j
        return None

    f_lo = cross(range(i, -1, -1))
    f_hi = cross(range(i, db.size))
    if f_lo is None or f_hi is None or f_hi <= f_lo:
        return float("nan")
    return float(np.sqrt(f_lo * f_hi) / (f_hi - f_lo))


# --- noise-shaping spectrum ----------------------------------------------------


def spectrum_welch(samples: np.ndarray, rate: float) -> tuple[np.ndarray, np.ndarray]:
    f, psd = welch(np.asarray(samples, dtype=float), fs=rate, window="hann",
                   nperseg=WELCH_NPERSEG, noverlap=WELCH_NPERSEG // 2,
                   detrend="constant")
    return f, psd


def noise_spectrum_slope(increments: np.ndarray, f_s_over: float,
                         f_lo: float | None = None, f_hi: float | None = None,
                         bins_per_decade: int = 24) -> float:
    """Least-squares spectral slope in dB per decade over [f_lo, f_hi].

    The Welch PSD is averaged into log-spaced bins first so every part of
    the fit band carries equal weight.
    """
    increments = np.asarray(increments, dtype=float)
    if increments.size < MIN_SPECTRUM_SAMPLES:
        raise ContractError(
            f"need at least {MIN_SPECTRUM_SAMPLES} samples, got {increments.size}")
    f_lo = f_lo if f_lo is not None else FRAME_RATE_HZ
    f_hi = f_hi if f_hi is not None else f_s_over / 8.0
    f, psd = spectrum_welch(increments, f_s_over)
    slope, _ = _fit_logbin_slope(f, psd, f_lo, f_hi, bins_per_decade)
    return slope


def _fit_logbin_slope(f, psd, f_lo, f_hi, bins_per_decade):
    n_bins = max(4, int(np.ceil(np.log10(f_hi / f_lo) * bins_per_decade)))
    edges = np.logspace(np.log10(f_lo), np.log10(f_hi), n_bins + 1)
    xs, ys = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (f >= lo) & (f < hi)
        if not np.any(sel):
            continue
        p = psd[sel].mean()
        if p <= 0:
            continue
        xs.append(np.log10(np.sqrt(lo * hi)))
        ys.append(10.0 * np.log10(p))
    if len(xs) < 3:
        raise ContractError("not enough spectral bins in the fit band")
    coef = np.polyfit(np.array(xs), np.array(ys), 1)
    return float(coef[0]), coef


# --- accuracy evaluation ---------------------------------------------------------


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray        # row-normalized (true x predicted)
    counts: np.ndarray           # raw counts
    per_class_tpr: np.ndarray
    class_names: list[str]


def evaluate(entries: list[dict], predict_fn, class_names: list[str]) -> EvalResult:
    """Run predict_fn(entry) -> class index over labeled entries.

    Confusion rows are normalized to sum to one for classes with support.
    """
    if not entries:
        raise ContractError("empty evaluation split")
    n = len(class_names)
    index = {name: i for i, name in enumerate(class_names)}
    counts = np.zeros((n, n), dtype=np.int64)
    for entry in entries:
        true_i = index[entry["label"]]
        pred_i = int(predict_fn(entry))
        counts[true_i, pred_i] += 1
    support = counts.sum(axis=1)
    confusion = np.zeros((n, n))
    nonzero = support > 0
    confusion[nonzero] = counts[nonzero] / support[nonzero, None]
    accuracy = float(np.trace(counts) / counts.sum())
    tpr = np.where(nonzero, np.diag(confusion), 0.0)
    return EvalResult(accuracy=accuracy, confusion=confusion, counts=counts,
                      per_class_tpr=tpr, class_names=list(class_names))


# --- report writers ---------------------------------------------------------------


def write_sweep_csv(path: str | Path, result: SweepResult) -> None:
    lines = ["channel,freq_hz,gain_db"]
    for ch in range(result.n_channels):
        for f, g in zip(result.freqs, result.gains[:, ch]):
            db = 20.0 * np.log10(max(g, 1e-30))
            lines.append(f"{ch},{f:.6f},{db:.6f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_spectrum_csv(path: str | Path, f: np.ndarray, psd: np.ndarray) -> None:
    lines = ["freq_hz,psd_db"]
    for fi, pi in zip(f, psd):
        if fi <= 0 or pi <= 0:
            continue
        lines.append(f"{fi:.6f},{10.0 * np.log10(pi):.6f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_confusion_csv(path: str | Path, result: EvalResult) -> None:
    lines = ["true,predicted,rate"]
    for i, ti in enumerate(result.class_names):
        for j, pj in enumerate(result.class_names):
            lines.append(f"{ti},{pj},{result.confusion[i, j]:.6f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_summary_json(path: str | Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")
