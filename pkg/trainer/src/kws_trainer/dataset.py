"""Recorded-feature dataset handling: index parsing, padding, batching."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .formats import read_norm_features


@dataclass
class FeatureDataset:
    frames: np.ndarray        # (n_clips, t_max, channels) Q6.8 raw, zero padded
    lengths: np.ndarray       # (n_clips,)
    labels: np.ndarray        # (n_clips,) class indices
    split: np.ndarray         # (n_clips,) "train"/"test"
    class_names: list[str]

    def subset(self, which: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        sel = self.split == which
        return self.frames[sel], self.lengths[sel], self.labels[sel]

    @property
    def n_channels(self) -> int:
        return self.frames.shape[2]


def load_feature_dir(feature_dir: str | Path, class_names: list[str]) -> FeatureDataset:
    """Load every entry of a recorded-feature directory (index.jsonl + .tdfx)."""
    feature_dir = Path(feature_dir)
    index_path = feature_dir / "index.jsonl"
    entries = [json.loads(l) for l in index_path.read_text().splitlines() if l.strip()]
    if not entries:
        raise ValueError(f"{index_path}: empty index")
    name_to_idx = {n: i for i, n in enumerate(class_names)}
    streams, lengths, labels, split = [], [], [], []
    for e in entries:
        frames = read_norm_features(feature_dir / e["feature"])
        streams.append(frames)
        lengths.append(frames.shape[0])
        labels.append(name_to_idx[e["label"]])
        split.append(e["split"])
    t_max = max(lengths)
    n_ch = streams[0].shape[1]
    padded = np.zeros((len(streams), t_max, n_ch), dtype=np.int64)
    for i, s in enumerate(streams):
        padded[i, : s.shape[0]] = s
    return FeatureDataset(frames=padded, lengths=np.array(lengths),
                          labels=np.array(labels), split=np.array(split),
                          class_names=list(class_names))


def iter_batches(frames: np.ndarray, lengths: np.ndarray, labels: np.ndarray,
                 batch_size: int, rng: np.random.Generator):
    order = rng.permutation(len(labels))
    for i in range(0, len(order), batch_size):
        sel = order[i : i + batch_size]
        yield frames[sel], lengths[sel], labels[sel]
