"""Training loop: MAE/MSE losses, three adaptive-gradient optimizers, a
learning-rate grid, per-epoch re-augmentation, and early stopping with a
minimum epoch count, a patience window, and best-weights restoration.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .augment import AugmentationPolicy, augment_pair
from .corpus import CorpusPair
from .network import ErdUNet
from .weights_io import write_weights

LOSSES = ("mae", "mse")
OPTIMIZERS = ("adam", "nadam", "rms")
LR_GRID = (1e-3, 1e-4, 1e-5, 1e-6)


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "mae"
    optimizer: str = "nadam"
    lr: float = 1e-4
    min_epochs: int = 10
    patience: int = 50
    max_epochs: int = 500
    batch_size: int = 8
    seed: int = 0
    depth: int = 4
    base_filters: int = 32
    augment: bool = True
    policy: AugmentationPolicy = field(default_factory=AugmentationPolicy)

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.patience < 1 or self.min_epochs < 1:
            raise ValueError("patience and min_epochs must be at least 1")


@dataclass
class TrainResult:
    model: ErdUNet
    history: list[dict]
    best_epoch: int
    best_val_loss: float
    stopped_epoch: int


class TrainingDiverged(RuntimeError):
    """Raised on a non-finite loss; carries the history up to the failure."""

    def __init__(self, message: str, history: list[dict]):
        super().__init__(message)
        self.history = history


def _pad_to_multiple(x: torch.Tensor, mult: int) -> tuple[torch.Tensor, tuple]:
    h, w = x.shape[-2:]
    ph, pw = (-h) % mult, (-w) % mult
    top, left = ph // 2, pw // 2
    if ph == 0 and pw == 0:
        return x, (0, h, 0, w)
    out = torch.zeros(*x.shape[:-2], h + ph, w + pw, dtype=x.dtype)
    out[..., top:top + h, left:left + w] = x
    return out, (top, top + h, left, left + w)


def _stack(pairs: list[CorpusPair], mult: int) -> tuple[torch.Tensor, torch.Tensor, tuple]:
    xs, ys, crop = [], [], None
    for p in pairs:
        x, crop = _pad_to_multiple(torch.from_numpy(p.inputs), mult)
        y, _ = _pad_to_multiple(torch.from_numpy(p.target).unsqueeze(0), mult)
        xs.append(x)
        ys.append(y)
    return torch.stack(xs), torch.stack(ys), crop


def _loss_fn(kind: str, pred: torch.Tensor, target: torch.Tensor,
             crop: tuple) -> torch.Tensor:
    t0, t1, l0, l1 = crop
    diff = pred[..., t0:t1, l0:l1] - target[..., t0:t1, l0:l1]
    return diff.abs().mean() if kind == "mae" else (diff * diff).mean()


def _make_optimizer(cfg: TrainConfig, model: ErdUNet) -> torch.optim.Optimizer:
    if cfg.optimizer == "adam":
        return torch.optim.Adam(model.parameters(), lr=cfg.lr)
    if cfg.optimizer == "nadam":
        return torch.optim.NAdam(model.parameters(), lr=cfg.lr)
    return torch.optim.RMSprop(model.parameters(), lr=cfg.lr)


def train_unet(train_pairs: list[CorpusPair], val_pairs: list[CorpusPair],
               cfg: TrainConfig) -> TrainResult:
    """Train until the validation loss stalls.

    At least min_epochs epochs are run; training stops once the validation
    loss has not improved for cfg.patience epochs, and the best-found
    weights are restored. The training set is re-augmented every epoch;
    validation pairs are never augmented. Deterministic for a fixed seed.
    """
    if not train_pairs or not val_pairs:
        raise ValueError("need non-empty training and validation sets")
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    model = ErdUNet(cfg.depth, cfg.base_filters)
    mult = model.pad_multiple
    opt = _make_optimizer(cfg, model)

    x_val, y_val, crop = _stack(val_pairs, mult)
    base_train = [(torch.from_numpy(p.inputs), torch.from_numpy(p.target).unsqueeze(0))
                  for p in train_pairs]

    history: list[dict] = []
    best_val = float("inf")
    best_epoch = 0
    best_state = copy.deepcopy(model.state_dict())

    for epoch in range(1, cfg.max_epochs + 1):
        model.train()
        if cfg.augment:
            augmented = [augment_pair(x, y, rng, cfg.policy) for x, y in base_train]
        else:
            augmented = base_train
        xs, ys = [], []
        for x, y in augmented:
            xp, crop = _pad_to_multiple(x, mult)
            yp, _ = _pad_to_multiple(y, mult)
            xs.append(xp)
            ys.append(yp)
        x_train = torch.stack(xs)
        y_train = torch.stack(ys)

        order = torch.from_numpy(rng.permutation(len(x_train)))
        total = 0.0
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            opt.zero_grad()
            pred = model(x_train[idx])
            loss = _loss_fn(cfg.loss, pred, y_train[idx], crop)
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(idx)
        train_loss = total / len(x_train)

        model.eval()
        with torch.no_grad():
            val_loss = float(_loss_fn(cfg.loss, model(x_val), y_val, crop))
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise TrainingDiverged(
                f"training diverged at epoch {epoch} "
                f"(train={train_loss}, val={val_loss})", history)
        history.append({"epoch": epoch, "train_loss": train_loss,
                        "val_loss": val_loss})
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
        if epoch >= cfg.min_epochs and epoch - best_epoch >= cfg.patience:
            break

    model.load_state_dict(best_state)
    model.eval()
    return TrainResult(model, history, best_epoch, best_val, len(history))


def zero_predictor_loss(pairs: list[CorpusPair], kind: str = "mae") -> float:
    """Loss of the all-zeros predictor; the floor any useful model must beat."""
    targets = np.stack([p.target for p in pairs])
    return float(np.abs(targets).mean() if kind == "mae" else (targets ** 2).mean())


def write_history_csv(history: list[dict], path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for row in history:
            fh.write(f"{row['epoch']},{row['train_loss']:.8f},{row['val_loss']:.8f}\n")


def export_weights(result: TrainResult, path: str | Path) -> None:
    model = result.model
    write_weights(model.interchange_tensors(), model.depth, model.base_filters, path)
