"""Loss functions, gradients, AdamW and the early-stopping training loop."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import torch
from torch import nn

from .batching import collate_arrays, featurize_graph
from .crystal_data import Dataset
from .models import CrystalDOSModel

log = logging.getLogger(__name__)

LOSS_MODES = ("paper_pointwise", "batch_rmse", "mse")


class NumericalError(FloatingPointError):
    """Raised when a loss or gradient becomes non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 8
    max_epochs: int = 1000
    patience: int = 50
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    loss_mode: str = "paper_pointwise"
    max_steps: int | None = None

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"unknown loss_mode {self.loss_mode!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


# Per-dataset defaults (L', L, d, lr, B).
HYPERPARAMETERS = {
    "phonon": {"mp_layers": 3, "attn_layers": 2, "d": 256, "lr": 0.001, "batch_size": 1},
    "electron_random": {"mp_layers": 3, "attn_layers": 2, "d": 256, "lr": 0.0001, "batch_size": 8},
    "electron_species": {"mp_layers": 3, "attn_layers": 2, "d": 256, "lr": 0.0001, "batch_size": 8},
    "electron_system": {"mp_layers": 3, "attn_layers": 2, "d": 256, "lr": 0.0005, "batch_size": 8},
}


def loss(pred: torch.Tensor, target: torch.Tensor, mode: str = "paper_pointwise") -> torch.Tensor:
    """Batch loss averaged jointly over crystals and grid points.

    ``paper_pointwise`` is mean(sqrt(r**2)), i.e. the mean absolute residual;
    ``batch_rmse`` is sqrt(mean(r**2)).
    """
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    if torch.isnan(pred).any() or torch.isnan(target).any():
        raise NumericalError("NaN in loss inputs")
    r = pred - target
    if mode == "paper_pointwise":
        return r.abs().mean()
    if mode == "batch_rmse":
        return (r ** 2).mean().sqrt()
    if mode == "mse":
        return (r ** 2).mean()
    raise ValueError(f"unknown loss mode {mode!r}")


def backward(model: nn.Module, batch, mode: str = "paper_pointwise",
             target: torch.Tensor | None = None) -> tuple[float, dict[str, torch.Tensor]]:
    """Forward + reverse pass; returns the loss and a gradient per named tensor."""
    model.zero_grad(set_to_none=False)
    target = batch.y if target is None else target
    value = loss(model(batch), target, mode)
    value.backward()
    grads = {}
    for name, p in model.named_parameters():
        g = p.grad if p.grad is not None else torch.zeros_like(p)
        if not torch.isfinite(g).all():
            raise NumericalError(f"non-finite gradient for {name}")
        grads[name] = g.clone()
    return float(value.detach()), grads


@dataclass
class AdamWState:
    t: int = 0
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)


@torch.no_grad()
def adamw_step(params: dict[str, torch.Tensor], grads: dict[str, torch.Tensor],
               state: AdamWState, cfg: TrainConfig) -> AdamWState:
    """In-place AdamW update with decoupled weight decay and bias correction."""
    b1, b2 = cfg.betas
    state.t += 1
    c1 = 1 - b1 ** state.t
    c2 = 1 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m.setdefault(name, torch.zeros_like(p))
        v = state.v.setdefault(name, torch.zeros_like(p))
        m.mul_(b1).add_(g, alpha=1 - b1)
        v.mul_(b2).addcmul_(g, g, value=1 - b2)
        p.mul_(1 - cfg.lr * cfg.weight_decay)
        p.sub_(cfg.lr * (m / c1) / ((v / c2).sqrt() + cfg.eps))
    return state


@dataclass
class History:
    epochs: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    valid_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stop_epoch: int = 0
    steps: int = 0

    @property
    def best_valid(self) -> float:
        return min(self.valid_loss)

    def to_csv(self) -> str:
        rows = ["epoch,train_loss,valid_loss"]
        rows += [f"{e},{tr!r},{va!r}" for e, tr, va in zip(self.epochs, self.train_loss, self.valid_loss)]
        return "\n".join(rows) + "\n"


def train_loop(model: nn.Module, n_train: int,
               make_batch: Callable[[np.ndarray], tuple[object, torch.Tensor]],
               valid_loss: Callable[[nn.Module], float], cfg: TrainConfig,
               ) -> tuple[nn.Module, History]:
    """Shuffle, step per batch, validate per epoch, keep the best snapshot.

    Stops after ``cfg.patience`` epochs without a strict improvement, at
    ``cfg.max_epochs``, or once ``cfg.max_steps`` optimizer steps are taken.
    """
    rng = np.random.default_rng(cfg.seed)
    params = dict(model.named_parameters())
    state = AdamWState()
    hist = History()
    best_state = copy.deepcopy(model.state_dict())
    best = math.inf
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n_train)
        total, seen = 0.0, 0
        for k in range(0, n_train, cfg.batch_size):
            idx = order[k:k + cfg.batch_size]
            inputs, target = make_batch(idx)
            value, grads = backward(model, inputs, cfg.loss_mode, target)
            adamw_step(params, grads, state, cfg)
            total += value * len(idx)
            seen += len(idx)
            hist.steps += 1
            if cfg.max_steps is not None and hist.steps >= cfg.max_steps:
                break
        v = valid_loss(model)
        if not math.isfinite(v):
            raise NumericalError(f"validation loss became {v} at epoch {epoch}")
        hist.epochs.append(epoch)
        hist.train_loss.append(total / seen)
        hist.valid_loss.append(v)
        hist.stop_epoch = epoch
        if v < best:
            best, hist.best_epoch = v, epoch
            best_state = copy.deepcopy(model.state_dict())
        elif epoch - hist.best_epoch >= cfg.patience:
            break
        if cfg.max_steps is not None and hist.steps >= cfg.max_steps:
            break
    model.load_state_dict(best_state)
    return model, hist


class GraphFeed:
    """Pre-featurized crystals for repeated batching."""

    def __init__(self, dataset: Dataset, model: CrystalDOSModel):
        fz = model.cfg.featurizer
        self.arrays = [featurize_graph(c, fz) for c in dataset.crystals]
        self.edge_width = fz.rbf_centers

    def __len__(self) -> int:
        return len(self.arrays)

    def batch(self, idx):
        b = collate_arrays([self.arrays[i] for i in idx], self.edge_width)
        return b, b.y

    def batches(self, size: int = 64):
        for k in range(0, len(self.arrays), size):
            yield self.batch(range(k, min(k + size, len(self.arrays))))


@torch.no_grad()
def evaluate_loss(model: nn.Module, feed: GraphFeed, mode: str = "paper_pointwise") -> float:
    preds, targets = [], []
    for b, y in feed.batches():
        preds.append(model(b))
        targets.append(y)
    return float(loss(torch.cat(preds), torch.cat(targets), mode))


def fit(model: CrystalDOSModel, train: Dataset, valid: Dataset, cfg: TrainConfig,
        ) -> tuple[CrystalDOSModel, History]:
    """Train with AdamW and early stopping on the validation loss."""
    if len(train) == 0 or len(valid) == 0:
        raise ValueError("fit needs non-empty train and valid sets")
    train_feed, valid_feed = GraphFeed(train, model), GraphFeed(valid, model)
    model, hist = train_loop(
        model, len(train_feed), train_feed.batch,
        lambda mdl: evaluate_loss(mdl, valid_feed, cfg.loss_mode), cfg)
    log.info("fit: best epoch %d (valid %.5f), stopped at %d after %d steps",
             hist.best_epoch, hist.best_valid, hist.stop_epoch, hist.steps)
    return model, hist
