"""Fixed-point GRU + FC inference engine.

Arithmetic contract (bit-reproducible, mirrored by the trainer):

* Activations are signed Q6.8 (raw int in [-8192, 8191]); weights are int8
  with one power-of-two scale exponent per tensor; biases are int16 Q6.8.
* Matrix products: each int8 x int14 product is right-shifted by 4 with
  round-half-away before accumulation (keeps the running sum inside a
  24-bit accumulator for up to 64 terms), the sum is then shifted by
  exp + 4 back into Q6.8 and saturated.
* Gate equations, per layer:
      r = sigm(mv(W_ir,x) + mv(W_hr,h) + b_r)
      z = sigm(mv(W_iz,x) + mv(W_hz,h) + b_z)
      n = tanh(mv(W_in,x) + b_in + r * sat(mv(W_hn,h) + b_hn))
      h' = (1-z) * n + z * h
  where every mv() is saturated Q6.8, elementwise Q6.8 products are
  right-shifted by 8 with round-half-away and saturated, and each
  multi-term sum saturates once.
* Activations come from 256-entry lookup tables (Q2.13 entries, linear
  interpolation): sigmoid over [-8, 8), tanh over [0, 4) with exact odd
  sign folding; inputs beyond the table range clamp to the end entries.

All steps broadcast over leading batch dimensions.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError

Q_FRAC = 8
Q_ONE = 1 << Q_FRAC
SAT_MIN, SAT_MAX = -8192, 8191
PRODUCT_PRESHIFT = 4
WMEM_BYTES = 24 * 1024

GATES = ("r", "z", "n")


def _rshift_round(v: np.ndarray, n: int) -> np.ndarray:
    """Arithmetic right shift with round-half-away-from-zero."""
    if n <= 0:
        return v << (-n)
    off = 1 << (n - 1)
    v = np.asarray(v)
    return np.sign(v) * ((np.abs(v) + off) >> n)


def _sat(v: np.ndarray) -> np.ndarray:
    return np.clip(v, SAT_MIN, SAT_MAX)


def quantize_q68(x: np.ndarray | float) -> np.ndarray:
    """Float to saturated Q6.8 raw, round-half-away."""
    raw = np.sign(x) * np.floor(np.abs(np.asarray(x, dtype=np.float64)) * Q_ONE + 0.5)
    return _sat(raw).astype(np.int64)


def dequantize_q68(raw: np.ndarray) -> np.ndarray:
    return np.asarray(raw, dtype=np.float64) / Q_ONE


# --- activation lookup tables -----------------------------------------------

_LUT_BITS = 13  # Q2.13 entries
_LUT_SIZE = 256


class ActLut:
    """Sigmoid/tanh tables with fixed-point linear interpolation."""

    def __init__(self):
        scale = 1 << _LUT_BITS
        sig_knots = -8.0 + 16.0 * np.arange(_LUT_SIZE) / _LUT_SIZE
        self.sigmoid_table = np.round(scale / (1.0 + np.exp(-sig_knots))).astype(np.int64)
        tanh_knots = 4.0 * np.arange(_LUT_SIZE) / _LUT_SIZE
        self.tanh_table = np.round(scale * np.tanh(tanh_knots)).astype(np.int64)

    def sigmoid(self, raw: np.ndarray) -> np.ndarray:
        """Q6.8 in, Q6.8 out in [0, 256]."""
        t = np.clip(np.asarray(raw, dtype=np.int64), -2048, 2047) + 2048
        idx = t >> 4
        frac = t & 15
        e0 = self.sigmoid_table[idx]
        e1 = self.sigmoid_table[np.minimum(idx + 1, _LUT_SIZE - 1)]
        # Q2.13 * 16 -> Q6.8 is a shift by 4 (interp denom) + 5 (13 - 8)
        return _rshift_round(e0 * (16 - frac) + e1 * frac, 9)

    def tanh(self, raw: np.ndarray) -> np.ndarray:
        """Q6.8 in, Q6.8 out in [-256, 256]; exactly odd."""
        raw = np.asarray(raw, dtype=np.int64)
        mag = np.minimum(np.abs(raw), 1023)
        idx = mag >> 2
        frac = mag & 3
        e0 = self.tanh_table[idx]
        e1 = self.tanh_table[np.minimum(idx + 1, _LUT_SIZE - 1)]
        val = _rshift_round(e0 * (4 - frac) + e1 * frac, 7)
        return np.sign(raw) * val


ACT_LUT = ActLut()


# --- weights -----------------------------------------------------------------


@dataclass
class GruLayerWeights:
    w_ir: np.ndarray
    w_iz: np.ndarray
    w_in: np.ndarray
    w_hr: np.ndarray
    w_hz: np.ndarray
    w_hn: np.ndarray
    b_r: np.ndarray   # merged input+hidden bias, int16 Q6.8
    b_z: np.ndarray
    b_in: np.ndarray  # candidate gate keeps both sides: b_hn sits inside r*(...)
    b_hn: np.ndarray
    exp_ir: int
    exp_iz: int
    exp_in: int
    exp_hr: int
    exp_hz: int
    exp_hn: int

    @property
    def input_size(self) -> int:
        return self.w_ir.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.w_ir.shape[0]

    def param_bytes(self) -> int:
        mats = sum(m.size for m in (self.w_ir, self.w_iz, self.w_in,
                                    self.w_hr, self.w_hz, self.w_hn))
        biases = 2 * sum(b.size for b in (self.b_r, self.b_z, self.b_in, self.b_hn))
        return mats + biases + 6


@dataclass
class GruFcWeights:
    layers: list[GruLayerWeights]
    fc_w: np.ndarray   # int8 (classes, hidden)
    fc_b: np.ndarray   # int16 Q6.8
    fc_exp: int

    def __post_init__(self):
        if not self.layers:
            raise ContractError("at least one recurrent layer required")
        if self.fc_w.shape[1] != self.layers[-1].hidden_size:
            raise ContractError("FC width does not match the last hidden size")
        if self.param_bytes() > WMEM_BYTES:
            raise ContractError(
                f"parameters need {self.param_bytes()} bytes, budget {WMEM_BYTES}")

    @property
    def input_size(self) -> int:
        return self.layers[0].input_size

    @property
    def hidden_size(self) -> int:
        return self.layers[0].hidden_size

    @property
    def n_classes(self) -> int:
        return self.fc_w.shape[0]

    def param_bytes(self) -> int:
        return (sum(l.param_bytes() for l in self.layers)
                + self.fc_w.size + 2 * self.fc_b.size + 1)


# --- arithmetic ---------------------------------------------------------------


def _matvec(w: np.ndarray, exp: int, x: np.ndarray) -> np.ndarray:
    """Saturated Q6.8 matrix-vector product with the documented shifts."""
    prod = w.astype(np.int64) * np.asarray(x, dtype=np.int64)[..., None, :]
    acc = _rshift_round(prod, PRODUCT_PRESHIFT).sum(axis=-1)
    return _sat(_rshift_round(acc, -(exp + PRODUCT_PRESHIFT)))


def gru_cell_step(x: np.ndarray, h: np.ndarray, layer: GruLayerWeights,
                  lut: ActLut = ACT_LUT) -> np.ndarray:
    """One recurrent update; broadcasts over leading batch axes."""
    x = np.asarray(x, dtype=np.int64)
    h = np.asarray(h, dtype=np.int64)
    if x.shape[-1] != layer.input_size or h.shape[-1] != layer.hidden_size:
        raise ContractError(
            f"expected x[...,{layer.input_size}], h[...,{layer.hidden_size}], "
            f"got {x.shape} and {h.shape}")
    b_r = layer.b_r.astype(np.int64)
    b_z = layer.b_z.astype(np.int64)
    r = lut.sigmoid(_sat(_matvec(layer.w_ir, layer.exp_ir, x)
                         + _matvec(layer.w_hr, layer.exp_hr, h) + b_r))
    z = lut.sigmoid(_sat(_matvec(layer.w_iz, layer.exp_iz, x)
                         + _matvec(layer.w_hz, layer.exp_hz, h) + b_z))
    hn = _sat(_matvec(layer.w_hn, layer.exp_hn, h) + layer.b_hn.astype(np.int64))
    rn = _sat(_rshift_round(r * hn, Q_FRAC))
    n = lut.tanh(_sat(_matvec(layer.w_in, layer.exp_in, x)
                      + layer.b_in.astype(np.int64) + rn))
    return _sat(_rshift_round((Q_ONE - z) * n + z * h, Q_FRAC))


def fc_scores(h: np.ndarray, weights: GruFcWeights) -> np.ndarray:
    return _sat(_matvec(weights.fc_w, weights.fc_exp, h)
                + weights.fc_b.astype(np.int64))


def classify_stream(frames: np.ndarray, weights: GruFcWeights,
                    lut: ActLut = ACT_LUT) -> tuple[np.ndarray, np.ndarray]:
    """Run the stream through both layers; argmax of the final FC scores.

    frames: (..., n_frames, input_size) Q6.8 raw. Returns (class index,
    score vector); ties resolve to the lowest class index. Leading batch
    axes are carried through.
    """
    frames = np.asarray(frames, dtype=np.int64)
    if frames.ndim < 2:
        raise ContractError("frames must be (..., n_frames, input_size)")
    if frames.shape[-2] == 0:
        raise ContractError("empty feature stream")
    if frames.shape[-1] != weights.input_size:
        raise ContractError(
            f"stream width {frames.shape[-1]} != input size {weights.input_size}")
    batch = frames.shape[:-2]
    hs = [np.zeros(batch + (l.hidden_size,), dtype=np.int64) for l in weights.layers]
    for t in range(frames.shape[-2]):
        x = frames[..., t, :]
        for i, layer in enumerate(weights.layers):
            hs[i] = gru_cell_step(x, hs[i], layer, lut)
            x = hs[i]
    scores = fc_scores(hs[-1], weights)
    return np.argmax(scores, axis=-1), scores


# --- weight files -------------------------------------------------------------
#
# Little-endian. Header: magic "TDKW", u16 version=1, u16 layers, u16 input,
# u16 hidden, u16 classes. Per layer, per gate in (r, z, n) order: i2h int8
# row-major, h2h int8, bias int16 (the n gate stores two bias vectors:
# input side then hidden side), then i8 scale exponents (i2h, h2h). After
# the layers: FC int8 (classes x hidden), bias int16, i8 scale exponent.
# Trailing CRC32 over everything before it.

MAGIC = b"TDKW"
VERSION = 1
_HEADER = struct.Struct("<4sHHHHH")


def save_weights(weights: GruFcWeights, path: str | Path) -> None:
    parts = [_HEADER.pack(MAGIC, VERSION, len(weights.layers),
                          weights.input_size, weights.hidden_size,
                          weights.n_classes)]
    for layer in weights.layers:
        for gate in GATES:
            parts.append(np.ascontiguousarray(
                getattr(layer, f"w_i{gate}"), dtype=np.int8).tobytes())
            parts.append(np.ascontiguousarray(
                getattr(layer, f"w_h{gate}"), dtype=np.int8).tobytes())
            if gate == "n":
                parts.append(np.ascontiguousarray(layer.b_in, dtype="<i2").tobytes())
                parts.append(np.ascontiguousarray(layer.b_hn, dtype="<i2").tobytes())
            else:
                parts.append(np.ascontiguousarray(
                    getattr(layer, f"b_{gate}"), dtype="<i2").tobytes())
            parts.append(struct.pack("<bb", getattr(layer, f"exp_i{gate}"),
                                     getattr(layer, f"exp_h{gate}")))
    parts.append(np.ascontiguousarray(weights.fc_w, dtype=np.int8).tobytes())
    parts.append(np.ascontiguousarray(weights.fc_b, dtype="<i2").tobytes())
    parts.append(struct.pack("<b", weights.fc_exp))
    body = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body)))


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.path}: truncated at byte {self.pos} (need {n})")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def array(self, dtype, shape) -> np.ndarray:
        dt = np.dtype(dtype)
        n = int(np.prod(shape))
        return np.frombuffer(self.take(n * dt.itemsize), dtype=dt).reshape(shape).copy()


def load_weights(path: str | Path) -> GruFcWeights:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size + 4:
        raise FormatError(f"{path}: file too small for header")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise FormatError(f"{path}: checksum mismatch")
    rd = _Reader(body, path)
    magic, version, n_layers, n_in, n_hidden, n_classes = _HEADER.unpack(rd.take(_HEADER.size))
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if min(n_layers, n_in, n_hidden, n_classes) < 1:
        raise FormatError(f"{path}: degenerate dims in header")
    layers = []
    in_size = n_in
    for _ in range(n_layers):
        fields: dict = {}
        for gate in GATES:
            fields[f"w_i{gate}"] = rd.array(np.int8, (n_hidden, in_size))
            fields[f"w_h{gate}"] = rd.array(np.int8, (n_hidden, n_hidden))
            if gate == "n":
                fields["b_in"] = rd.array("<i2", (n_hidden,))
                fields["b_hn"] = rd.array("<i2", (n_hidden,))
            else:
                fields[f"b_{gate}"] = rd.array("<i2", (n_hidden,))
            ei, eh = struct.unpack("<bb", rd.take(2))
            fields[f"exp_i{gate}"] = ei
            fields[f"exp_h{gate}"] = eh
        layers.append(GruLayerWeights(**fields))
        in_size = n_hidden
    fc_w = rd.array(np.int8, (n_classes, n_hidden))
    fc_b = rd.array("<i2", (n_classes,))
    (fc_exp,) = struct.unpack("<b", rd.take(1))
    if rd.pos != len(body):
        raise FormatError(f"{path}: {len(body) - rd.pos} trailing bytes")
    return GruFcWeights(layers=layers, fc_w=fc_w, fc_b=fc_b, fc_exp=fc_exp)
