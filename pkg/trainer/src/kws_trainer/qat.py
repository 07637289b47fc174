"""Quantization-aware GRU-FC model.

Forward passes run in float but squeeze every tensor through the engine's
grids: activations onto signed Q6.8 with saturation, weights onto int8
with a per-tensor power-of-two scale. Rounding uses straight-through
gradients, so the optimizer sees the quantization error it must absorb.
The quantization points copy the engine's schedule (each matrix-vector
output, each gate pre-activation, each activation output, each elementwise
product) so that the exported integers behave like the training model.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn

from .formats import QuantLayer, QuantNet

Q_SCALE = 256.0
ACT_MAX = 8191.0 / 256.0
ACT_MIN = -8192.0 / 256.0


class _RoundSTE(torch.autograd.Function):
    """Round-half-away-from-zero (the engine's convention), unit gradient."""

    @staticmethod
    def forward(ctx, x):
        return torch.sign(x) * torch.floor(torch.abs(x) + 0.5)

    @staticmethod
    def backward(ctx, g):
        return g


def fq_act(x: torch.Tensor) -> torch.Tensor:
    """Fake-quantize onto the Q6.8 grid with saturation."""
    return torch.clamp(_RoundSTE.apply(x * Q_SCALE) / Q_SCALE, ACT_MIN, ACT_MAX)


def weight_exponent(w: torch.Tensor) -> int:
    """Smallest power-of-two scale that fits max|w| into int8."""
    m = float(w.detach().abs().max())
    if m == 0.0:
        return -8
    return max(-32, int(math.ceil(math.log2(m / 127.0))))


def fq_weight(w: torch.Tensor) -> torch.Tensor:
    scale = 2.0 ** weight_exponent(w)
    return torch.clamp(_RoundSTE.apply(w / scale), -127, 127) * scale


def quantize_weight_int(w: torch.Tensor) -> tuple[np.ndarray, int]:
    exp = weight_exponent(w)
    q = torch.clamp(torch.round(w.detach() / 2.0 ** exp), -127, 127)
    return q.numpy().astype(np.int8), exp


def quantize_bias_int(b: torch.Tensor) -> np.ndarray:
    q = torch.clamp(torch.round(b.detach() * Q_SCALE), -32768, 32767)
    return q.numpy().astype(np.int16)


class QuantGruCell(nn.Module):
    """GRU cell with the engine's gate structure and quantization points.

    r and z use one merged bias; the candidate keeps the hidden-side bias
    inside the reset product: n = tanh(Wx + b_in + r * (Wh h + b_hn)).
    """

    def __init__(self, input_size: int, hidden_size: int):
        super().__init__()
        self.input_size = input_size
        self.hidden_size = hidden_size
        k = 1.0 / math.sqrt(hidden_size)

        def mat(rows, cols):
            return nn.Parameter(torch.empty(rows, cols).uniform_(-k, k))

        def vec():
            return nn.Parameter(torch.zeros(hidden_size))

        self.w_ir, self.w_iz, self.w_in = (mat(hidden_size, input_size) for _ in range(3))
        self.w_hr, self.w_hz, self.w_hn = (mat(hidden_size, hidden_size) for _ in range(3))
        self.b_r, self.b_z, self.b_in, self.b_hn = (vec() for _ in range(4))

    def forward(self, x: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        mv = lambda w, v: fq_act(v @ fq_weight(w).t())
        b = lambda p: fq_act(p)
        r = fq_act(torch.sigmoid(fq_act(mv(self.w_ir, x) + mv(self.w_hr, h) + b(self.b_r))))
        z = fq_act(torch.sigmoid(fq_act(mv(self.w_iz, x) + mv(self.w_hz, h) + b(self.b_z))))
        hn = fq_act(mv(self.w_hn, h) + b(self.b_hn))
        n = fq_act(torch.tanh(fq_act(mv(self.w_in, x) + b(self.b_in) + fq_act(r * hn))))
        return fq_act((1.0 - z) * n + z * h)


class KwsQuantNet(nn.Module):
    def __init__(self, input_size: int = 16, hidden_size: int = 48,
                 n_classes: int = 12, n_layers: int = 2):
        super().__init__()
        sizes = [input_size] + [hidden_size] * n_layers
        self.cells = nn.ModuleList(
            QuantGruCell(sizes[i], sizes[i + 1]) for i in range(n_layers))
        self.fc_w = nn.Parameter(torch.empty(n_classes, hidden_size)
                                 .uniform_(-1 / math.sqrt(hidden_size),
                                           1 / math.sqrt(hidden_size)))
        self.fc_b = nn.Parameter(torch.zeros(n_classes))

    def forward(self, frames: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        """frames: (B, T, input) in Q6.8 value units; logits at each true end."""
        bsz, t_max = frames.shape[0], frames.shape[1]
        hs = [frames.new_zeros(bsz, c.hidden_size) for c in self.cells]
        final = frames.new_zeros(bsz, self.cells[-1].hidden_size)
        for t in range(t_max):
            x = fq_act(frames[:, t, :])
            for i, cell in enumerate(self.cells):
                hs[i] = cell(x, hs[i])
                x = hs[i]
            ending = lengths == (t + 1)
            if torch.any(ending):
                final = torch.where(ending[:, None], hs[-1], final)
        return fq_act(final @ fq_weight(self.fc_w).t() + fq_act(self.fc_b))

    def to_quant_net(self) -> QuantNet:
        layers = []
        for cell in self.cells:
            ints = {}
            exps = {}
            for name in ("ir", "iz", "in", "hr", "hz", "hn"):
                ints[name], exps[name] = quantize_weight_int(getattr(cell, f"w_{name}"))
            layers.append(QuantLayer(
                w_ir=ints["ir"], w_iz=ints["iz"], w_in=ints["in"],
                w_hr=ints["hr"], w_hz=ints["hz"], w_hn=ints["hn"],
                b_r=quantize_bias_int(cell.b_r), b_z=quantize_bias_int(cell.b_z),
                b_in=quantize_bias_int(cell.b_in), b_hn=quantize_bias_int(cell.b_hn),
                exp_ir=exps["ir"], exp_iz=exps["iz"], exp_in=exps["in"],
                exp_hr=exps["hr"], exp_hz=exps["hz"], exp_hn=exps["hn"]))
        fc_w, fc_exp = quantize_weight_int(self.fc_w)
        return QuantNet(layers=layers, fc_w=fc_w,
                        fc_b=quantize_bias_int(self.fc_b), fc_exp=fc_exp)
