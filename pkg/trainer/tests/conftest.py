import json
import wave
from pathlib import Path

import numpy as np
import pytest

CLASS_NAMES = ["Silence", "Unknown", "down", "go", "left", "no", "off", "on",
               "right", "stop", "up", "yes"]


def write_wav_32k(path, samples):
    pcm = np.clip(np.round(samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(32000)
        wav.writeframes(pcm.tobytes())


def toy_word_clip(rng, word, duration=0.45, rate=32000):
    """Two synthetic keywords with distinct spectral signatures.

    "yes" lives in the low bands (sweeping chord under 900 Hz), "no" in the
    high bands (2-5 kHz); both carry amplitude/timing jitter so the task is
    nontrivial but cleanly separable.
    """
    n = int(duration * rate)
    t = np.arange(n) / rate
    freqs = {"yes": (220.0, 430.0, 840.0), "no": (2100.0, 3300.0, 4900.0)}[word]
    x = np.zeros(n)
    for f in freqs:
        f_jit = f * rng.uniform(0.92, 1.08)
        am = 0.55 + 0.45 * np.sin(2 * np.pi * rng.uniform(2.0, 6.0) * t
                                  + rng.uniform(0, 2 * np.pi))
        x += rng.uniform(0.5, 1.0) * am * np.sin(2 * np.pi * f_jit * t
                                                 + rng.uniform(0, 2 * np.pi))
    x += 0.05 * rng.standard_normal(n)
    x *= rng.uniform(0.15, 0.28) / np.max(np.abs(x))
    pad = int(rng.uniform(0.0, 0.05) * rate)
    return np.concatenate([np.zeros(pad), x])


def build_toy_recordings(root: Path, n_train=60, n_test=20, seed=0):
    """WAVs + manifest for the 2-keyword desk-scale task."""
    rng = np.random.default_rng(seed)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for word in ("yes", "no"):
        d = root / word
        d.mkdir(exist_ok=True)
        for i in range(n_train + n_test):
            path = d / f"{word}_{i:03d}.wav"
            write_wav_32k(path, toy_word_clip(rng, word))
            entries.append({"path": str(path), "label": word,
                            "split": "train" if i < n_train else "test"})
    manifest = root / "manifest.jsonl"
    with open(manifest, "w") as fh:
        fh.write(json.dumps({"class_names": CLASS_NAMES}) + "\n")
        for e in entries:
            fh.write(json.dumps(e, sort_keys=True) + "\n")
    return manifest


@pytest.fixture(scope="session")
def toy_feature_dir(tmp_path_factory):
    """Record the toy dataset once through the front-end CLI."""
    from kws_trainer import record

    root = tmp_path_factory.mktemp("toyset")
    manifest = build_toy_recordings(root, n_train=60, n_test=20, seed=1)
    calib = record.calibrate(root / "front.calib", corpus_manifest=manifest,
                             corpus_limit=24, seed=0)
    outdir = root / "features"
    record.record_features(manifest, outdir, calib, seed=0)
    return outdir
