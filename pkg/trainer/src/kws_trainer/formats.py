"""Interchange-file mirrors of the inference engine's formats.

The trainer talks to the front-end toolkit only through files, so both
formats are implemented here against their documented layouts rather than
imported: feature files (magic "TDFX") are read, weight files (magic
"TDKW") are written. Field order and widths must track the engine.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FEATURE_MAGIC = b"TDFX"
WEIGHT_MAGIC = b"TDKW"
_FEAT_HEADER = struct.Struct("<4sHHBI")
_WEIGHT_HEADER = struct.Struct("<4sHHHHH")

STAGE_NORM = 2


def read_norm_features(path: str | Path) -> np.ndarray:
    """Read a NORM-stage feature file into (n_frames, n_channels) Q6.8 raw."""
    raw = Path(path).read_bytes()
    if len(raw) < _FEAT_HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, n_ch, stage, _shift = _FEAT_HEADER.unpack(raw[: _FEAT_HEADER.size])
    if magic != FEATURE_MAGIC or version != 1:
        raise ValueError(f"{path}: not a version-1 feature file")
    if stage != STAGE_NORM:
        raise ValueError(f"{path}: expected NORM stage, got {stage}")
    body = np.frombuffer(raw[_FEAT_HEADER.size :], dtype="<i2")
    return body.reshape(-1, n_ch).astype(np.int64)


def write_norm_features(path: str | Path, frames: np.ndarray,
                        frame_shift_us: int = 16384) -> None:
    frames = np.asarray(frames)
    with open(path, "wb") as fh:
        fh.write(_FEAT_HEADER.pack(FEATURE_MAGIC, 1, frames.shape[1],
                                   STAGE_NORM, frame_shift_us))
        fh.write(np.ascontiguousarray(frames, dtype="<i2").tobytes())


@dataclass
class QuantLayer:
    """Integer tensors of one recurrent layer, engine conventions.

    r and z carry one merged bias; the candidate gate keeps the input-side
    and hidden-side biases separate because the hidden one sits inside the
    reset product.
    """

    w_ir: np.ndarray
    w_iz: np.ndarray
    w_in: np.ndarray
    w_hr: np.ndarray
    w_hz: np.ndarray
    w_hn: np.ndarray
    b_r: np.ndarray
    b_z: np.ndarray
    b_in: np.ndarray
    b_hn: np.ndarray
    exp_ir: int
    exp_iz: int
    exp_in: int
    exp_hr: int
    exp_hz: int
    exp_hn: int


@dataclass
class QuantNet:
    layers: list[QuantLayer] = field(default_factory=list)
    fc_w: np.ndarray = None
    fc_b: np.ndarray = None
    fc_exp: int = 0

    @property
    def input_size(self) -> int:
        return self.layers[0].w_ir.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.layers[0].w_ir.shape[0]

    @property
    def n_classes(self) -> int:
        return self.fc_w.shape[0]


def serialize_weights(net: QuantNet) -> bytes:
    parts = [_WEIGHT_HEADER.pack(WEIGHT_MAGIC, 1, len(net.layers),
                                 net.input_size, net.hidden_size, net.n_classes)]
    for layer in net.layers:
        for gate in ("r", "z", "n"):
            parts.append(np.ascontiguousarray(getattr(layer, f"w_i{gate}"),
                                              dtype=np.int8).tobytes())
            parts.append(np.ascontiguousarray(getattr(layer, f"w_h{gate}"),
                                              dtype=np.int8).tobytes())
            if gate == "n":
                parts.append(np.ascontiguousarray(layer.b_in, dtype="<i2").tobytes())
                parts.append(np.ascontiguousarray(layer.b_hn, dtype="<i2").tobytes())
            else:
                parts.append(np.ascontiguousarray(getattr(layer, f"b_{gate}"),
                                                  dtype="<i2").tobytes())
            parts.append(struct.pack("<bb", getattr(layer, f"exp_i{gate}"),
                                     getattr(layer, f"exp_h{gate}")))
    parts.append(np.ascontiguousarray(net.fc_w, dtype=np.int8).tobytes())
    parts.append(np.ascontiguousarray(net.fc_b, dtype="<i2").tobytes())
    parts.append(struct.pack("<b", net.fc_exp))
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save_weights(net: QuantNet, path: str | Path) -> None:
    Path(path).write_bytes(serialize_weights(net))


def load_weights(path: str | Path) -> QuantNet:
    raw = Path(path).read_bytes()
    if len(raw) < _WEIGHT_HEADER.size + 4:
        raise ValueError(f"{path}: file too small")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise ValueError(f"{path}: checksum mismatch")
    magic, version, n_layers, n_in, n_hidden, n_classes = _WEIGHT_HEADER.unpack(
        body[: _WEIGHT_HEADER.size])
    if magic != WEIGHT_MAGIC or version != 1:
        raise ValueError(f"{path}: not a version-1 weight file")
    pos = _WEIGHT_HEADER.size

    def take(n):
        nonlocal pos
        if pos + n > len(body):
            raise ValueError(f"{path}: truncated at byte {pos}")
        out = body[pos : pos + n]
        pos += n
        return out

    def arr(dtype, shape):
        dt = np.dtype(dtype)
        n = int(np.prod(shape))
        return np.frombuffer(take(n * dt.itemsize), dtype=dt).reshape(shape).copy()

    layers = []
    in_size = n_in
    for _ in range(n_layers):
        fields = {}
        for gate in ("r", "z", "n"):
            fields[f"w_i{gate}"] = arr(np.int8, (n_hidden, in_size))
            fields[f"w_h{gate}"] = arr(np.int8, (n_hidden, n_hidden))
            if gate == "n":
                fields["b_in"] = arr("<i2", (n_hidden,))
                fields["b_hn"] = arr("<i2", (n_hidden,))
            else:
                fields[f"b_{gate}"] = arr("<i2", (n_hidden,))
            ei, eh = struct.unpack("<bb", take(2))
            fields[f"exp_i{gate}"] = ei
            fields[f"exp_h{gate}"] = eh
        layers.append(QuantLayer(**fields))
        in_size = n_hidden
    fc_w = arr(np.int8, (n_classes, n_hidden))
    fc_b = arr("<i2", (n_classes,))
    (fc_exp,) = struct.unpack("<b", take(1))
    if pos != len(body):
        raise ValueError(f"{path}: {len(body) - pos} trailing bytes")
    return QuantNet(layers=layers, fc_w=fc_w, fc_b=fc_b, fc_exp=fc_exp)
