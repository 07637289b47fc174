"""Binary feature-vector files.

Layout (little-endian): magic "TDFX", u16 version, u16 n_channels,
u8 stage, u32 frame_shift_us, then frames channel-major per frame.
RAW and LOG store u16, NORM stores i16, RAW_TDC (debug dumps of raw
decimated counts) stores u32.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError

MAGIC = b"TDFX"
VERSION = 1
_HEADER = struct.Struct("<4sHHBI")


class Stage(enum.IntEnum):
    RAW = 0
    LOG = 1
    NORM = 2
    RAW_TDC = 3


_RANGES = {
    Stage.RAW: (0, 4095),
    Stage.LOG: (0, 1023),
    Stage.NORM: (-8192, 8191),
    Stage.RAW_TDC: (0, 2**32 - 1),
}

_DTYPES = {
    Stage.RAW: "<u2",
    Stage.LOG: "<u2",
    Stage.NORM: "<i2",
    Stage.RAW_TDC: "<u4",
}


@dataclass
class FeatureVector:
    """One 16-channel frame at a given pipeline stage."""

    stage: Stage
    values: np.ndarray
    frame_index: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values)
        lo, hi = _RANGES[self.stage]
        if self.values.min(initial=0) < lo or self.values.max(initial=0) > hi:
            raise ContractError(f"{self.stage.name} values outside [{lo}, {hi}]")


def check_stage_range(frames: np.ndarray, stage: Stage) -> None:
    lo, hi = _RANGES[stage]
    if frames.size and (frames.min() < lo or frames.max() > hi):
        raise ContractError(f"{stage.name} frames outside [{lo}, {hi}]")


def write_features(path: str | Path, frames: np.ndarray, stage: Stage,
                   frame_shift_us: int, n_channels: int = 16) -> None:
    frames = np.asarray(frames)
    if frames.ndim != 2 or frames.shape[1] != n_channels:
        raise ContractError(f"frames must be (n, {n_channels})")
    check_stage_range(frames, stage)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n_channels, int(stage), frame_shift_us))
        fh.write(np.ascontiguousarray(frames, dtype=_DTYPES[stage]).tobytes())


def read_features(path: str | Path) -> tuple[np.ndarray, Stage, int]:
    """Return (frames, stage, frame_shift_us)."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise FormatError(f"{path}: truncated header")
        magic, version, n_channels, stage_i, shift_us = _HEADER.unpack(head)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        try:
            stage = Stage(stage_i)
        except ValueError as exc:
            raise FormatError(f"{path}: unknown stage {stage_i}") from exc
        body = fh.read()
    dtype = np.dtype(_DTYPES[stage])
    row = n_channels * dtype.itemsize
    if len(body) % row:
        raise FormatError(f"{path}: body size {len(body)} not a frame multiple")
    frames = np.frombuffer(body, dtype=dtype).reshape(-1, n_channels)
    return frames.astype(np.int64), stage, shift_us
