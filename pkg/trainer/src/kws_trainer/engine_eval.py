"""Bit-exact numpy mirror of the engine's fixed-point forward pass.

Used to evaluate quantized accuracy during training and to verify export
parity without importing the engine: every shift, rounding and saturation
follows the documented schedule (product pre-shift by 4 round-half-away,
Q6.8 requantization, saturating sums, 256-entry Q2.13 activation tables
with linear interpolation).
"""

from __future__ import annotations

import numpy as np

from .formats import QuantNet

SAT_MIN, SAT_MAX = -8192, 8191
Q_ONE = 256


def _rshift_round(v, n):
    if n <= 0:
        return v << (-n)
    off = 1 << (n - 1)
    v = np.asarray(v)
    return np.sign(v) * ((np.abs(v) + off) >> n)


def _sat(v):
    return np.clip(v, SAT_MIN, SAT_MAX)


_SIG_TABLE = np.round((1 << 13) / (1.0 + np.exp(-(-8.0 + 16.0 * np.arange(256) / 256)))
                      ).astype(np.int64)
_TANH_TABLE = np.round((1 << 13) * np.tanh(4.0 * np.arange(256) / 256)).astype(np.int64)


def _sigmoid(raw):
    t = np.clip(np.asarray(raw, dtype=np.int64), -2048, 2047) + 2048
    idx = t >> 4
    frac = t & 15
    e0 = _SIG_TABLE[idx]
    e1 = _SIG_TABLE[np.minimum(idx + 1, 255)]
    return _rshift_round(e0 * (16 - frac) + e1 * frac, 9)


def _tanh(raw):
    raw = np.asarray(raw, dtype=np.int64)
    mag = np.minimum(np.abs(raw), 1023)
    idx = mag >> 2
    frac = mag & 3
    e0 = _TANH_TABLE[idx]
    e1 = _TANH_TABLE[np.minimum(idx + 1, 255)]
    return np.sign(raw) * _rshift_round(e0 * (4 - frac) + e1 * frac, 7)


def _matvec(w, exp, x):
    prod = w.astype(np.int64) * np.asarray(x, dtype=np.int64)[..., None, :]
    acc = _rshift_round(prod, 4).sum(axis=-1)
    return _sat(_rshift_round(acc, -(exp + 4)))


def cell_step(x, h, layer):
    b_r = layer.b_r.astype(np.int64)
    b_z = layer.b_z.astype(np.int64)
    r = _sigmoid(_sat(_matvec(layer.w_ir, layer.exp_ir, x)
                      + _matvec(layer.w_hr, layer.exp_hr, h) + b_r))
    z = _sigmoid(_sat(_matvec(layer.w_iz, layer.exp_iz, x)
                      + _matvec(layer.w_hz, layer.exp_hz, h) + b_z))
    hn = _sat(_matvec(layer.w_hn, layer.exp_hn, h) + layer.b_hn.astype(np.int64))
    rn = _sat(_rshift_round(r * hn, 8))
    n = _tanh(_sat(_matvec(layer.w_in, layer.exp_in, x)
                   + layer.b_in.astype(np.int64) + rn))
    return _sat(_rshift_round((Q_ONE - z) * n + z * h, 8))


def forward(net: QuantNet, frames: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Scores and argmax for (..., n_frames, input) Q6.8 raw streams."""
    frames = np.asarray(frames, dtype=np.int64)
    batch = frames.shape[:-2]
    hs = [np.zeros(batch + (net.hidden_size,), dtype=np.int64) for _ in net.layers]
    for t in range(frames.shape[-2]):
        x = frames[..., t, :]
        for i, layer in enumerate(net.layers):
            hs[i] = cell_step(x, hs[i], layer)
            x = hs[i]
    scores = _sat(_matvec(net.fc_w, net.fc_exp, hs[-1]) + net.fc_b.astype(np.int64))
    return np.argmax(scores, axis=-1), scores


def forward_last_hidden(net: QuantNet, frames: np.ndarray,
                        lengths: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched forward over padded streams; scores taken at each true end."""
    frames = np.asarray(frames, dtype=np.int64)
    b, t_max = frames.shape[0], frames.shape[1]
    hs = [np.zeros((b, net.hidden_size), dtype=np.int64) for _ in net.layers]
    final = np.zeros((b, net.hidden_size), dtype=np.int64)
    for t in range(t_max):
        x = frames[:, t, :]
        for i, layer in enumerate(net.layers):
            hs[i] = cell_step(x, hs[i], layer)
            x = hs[i]
        ending = lengths == (t + 1)
        if np.any(ending):
            final[ending] = hs[-1][ending]
    scores = _sat(_matvec(net.fc_w, net.fc_exp, final) + net.fc_b.astype(np.int64))
    return np.argmax(scores, axis=-1), scores
