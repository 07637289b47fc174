import wave
from pathlib import Path

import numpy as np
import pytest

from tdfex.signal_io import PcmClip


def write_wav(path, samples_i16, rate=16000, channels=1, sampwidth=2):
    samples_i16 = np.asarray(samples_i16, dtype="<i2")
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(channels)
        wav.setsampwidth(sampwidth)
        wav.setframerate(rate)
        wav.writeframes(samples_i16.tobytes())


@pytest.fixture
def wav_builder(tmp_path):
    def build(name, samples_i16, rate=16000, **kw):
        path = tmp_path / name
        write_wav(path, samples_i16, rate=rate, **kw)
        return path
    return build


def speechlike_clip(rng, duration=1.0, rate=32000, peak=0.25):
    """Synthetic speech surrogate: AM tone chords over noise bursts.

    Random 120-280 ms segments, each a chord of 2-3 tones drawn log-uniform
    across the analysis band plus band-limited noise, shaped by a raised
    cosine envelope; short pauses in between.
    """
    n = int(duration * rate)
    x = np.zeros(n)
    pos = 0
    while pos < n:
        seg_len = int(rng.uniform(0.12, 0.28) * rate)
        seg_len = min(seg_len, n - pos)
        if seg_len < rate // 50:
            break
        t = np.arange(seg_len) / rate
        seg = np.zeros(seg_len)
        for _ in range(rng.integers(2, 4)):
            f = np.exp(rng.uniform(np.log(90.0), np.log(7500.0)))
            seg += rng.uniform(0.3, 1.0) * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
        seg += 0.4 * rng.standard_normal(seg_len)
        env = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(seg_len) / seg_len)
        x[pos : pos + seg_len] = seg * env
        pos += seg_len + int(rng.uniform(0.0, 0.08) * rate)
    x *= peak / np.max(np.abs(x))
    return PcmClip(x, rate)


def make_speech_dataset_tree(root: Path, words, n_train=3, n_test=1, rate=16000,
                             seed=0, bg_seconds=4.0):
    """Tiny speech-commands style directory tree with a test list."""
    rng = np.random.default_rng(seed)
    root.mkdir(parents=True, exist_ok=True)
    test_lines = []
    for word in words:
        d = root / word
        d.mkdir(exist_ok=True)
        for i in range(n_train + n_test):
            samples = (8000 * rng.standard_normal(rate)).clip(-32768, 32767)
            name = f"{word}_{i:02d}.wav"
            write_wav(d / name, samples.astype("<i2"), rate=rate)
            if i >= n_train:
                test_lines.append(f"{word}/{name}")
    bg = root / "_background_noise_"
    bg.mkdir(exist_ok=True)
    samples = (3000 * rng.standard_normal(int(bg_seconds * rate))).clip(-32768, 32767)
    write_wav(bg / "noise0.wav", samples.astype("<i2"), rate=rate)
    (root / "testing_list.txt").write_text("\n".join(test_lines) + "\n")
    return root
