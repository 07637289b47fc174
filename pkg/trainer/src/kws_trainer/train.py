"""Quantization-aware training loop and export.

AdamW with decoupled weight decay, plateau-driven learning-rate decay
(factor 0.8, patience 3, floor 5e-4), cross-entropy on the end-of-clip
logits, batch 64. Activations train against the 14-bit Q6.8 grid and
weights against int8 power-of-two scales, so the exported integers are the
deployed network, not an afterthought.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import engine_eval
from .dataset import FeatureDataset, iter_batches
from .formats import QuantNet, save_weights
from .qat import KwsQuantNet


@dataclass
class TrainConfig:
    epochs: int = 200
    lr0: float = 1e-3
    weight_decay: float = 0.01
    plateau_factor: float = 0.8
    patience: int = 3
    min_lr: float = 5e-4
    batch_size: int = 64
    activation_bits: int = 14
    weight_bits: int = 8
    seed: int = 0
    hidden_size: int = 48
    n_layers: int = 2
    deterministic: bool = True

    def __post_init__(self):
        if self.activation_bits != 14 or self.weight_bits != 8:
            raise ValueError("engine format is fixed at 14-bit activations / 8-bit weights")


@dataclass
class TrainResult:
    net: KwsQuantNet
    quant: QuantNet
    log: list[dict] = field(default_factory=list)

    def save(self, weights_path: str | Path, log_path: str | Path | None = None):
        save_weights(self.quant, weights_path)
        if log_path is not None:
            Path(log_path).write_text(
                "\n".join(json.dumps(e, sort_keys=True) for e in self.log) + "\n")


def quantized_accuracy(quant: QuantNet, frames: np.ndarray, lengths: np.ndarray,
                       labels: np.ndarray) -> float:
    pred, _ = engine_eval.forward_last_hidden(quant, frames, lengths)
    return float((pred == labels).mean())


def train_qat(dataset: FeatureDataset, cfg: TrainConfig) -> TrainResult:
    torch.manual_seed(cfg.seed)
    if cfg.deterministic:
        torch.set_num_threads(1)
    rng = np.random.default_rng(cfg.seed)

    tr_frames, tr_lengths, tr_labels = dataset.subset("train")
    te_frames, te_lengths, te_labels = dataset.subset("test")
    if tr_frames.shape[0] == 0:
        raise ValueError("empty training split")

    net = KwsQuantNet(input_size=dataset.n_channels, hidden_size=cfg.hidden_size,
                      n_classes=len(dataset.class_names), n_layers=cfg.n_layers)
    opt = torch.optim.AdamW(net.parameters(), lr=cfg.lr0,
                            weight_decay=cfg.weight_decay)
    sched = torch.optim.lr_scheduler.ReduceLROnPlateau(
        opt, mode="min", factor=cfg.plateau_factor, patience=cfg.patience,
        min_lr=cfg.min_lr)
    loss_fn = torch.nn.CrossEntropyLoss()

    log = []
    for epoch in range(cfg.epochs):
        net.train()
        epoch_loss = 0.0
        n_seen = 0
        for bf, bl, by in iter_batches(tr_frames, tr_lengths, tr_labels,
                                       cfg.batch_size, rng):
            x = torch.from_numpy(bf).to(torch.float32) / 256.0
            logits = net(x, torch.from_numpy(bl))
            loss = loss_fn(logits, torch.from_numpy(by))
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"loss diverged at epoch {epoch}; config: {cfg}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += loss.detach().item() * len(by)
            n_seen += len(by)
        epoch_loss /= n_seen
        sched.step(epoch_loss)
        entry = {"epoch": epoch, "train_loss": round(epoch_loss, 6),
                 "lr": opt.param_groups[0]["lr"]}
        if te_frames.shape[0]:
            quant = net.to_quant_net()
            entry["test_acc_quant"] = round(
                quantized_accuracy(quant, te_frames, te_lengths, te_labels), 4)
        log.append(entry)
    return TrainResult(net=net, quant=net.to_quant_net(), log=log)
