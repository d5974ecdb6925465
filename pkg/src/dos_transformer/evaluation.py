"""Test-time spectrum metrics, per-family breakdowns and the Fermi-energy probe."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .crystal_data import CRYSTAL_SYSTEMS, CrystalGraph
from .layers import DTYPE, MLP
from .training import TrainConfig, loss, train_loop

FAMILY_KEYS = ("n_species_kinds", "crystal_system")
SPECIES_FAMILY_NAMES = {1: "unary", 2: "binary", 3: "ternary", 4: "quaternary",
                        5: "quinary", 6: "senary", 7: "septenary"}


@dataclass
class MetricReport:
    rmse: float
    mae: float
    n_crystals: int
    per_family: dict[str, dict] = field(default_factory=dict)
    fermi_rmse: float | None = None

    def __post_init__(self):
        if self.rmse < 0 or self.mae < 0:
            raise ValueError("metrics must be non-negative")

    def to_dict(self) -> dict:
        return {"rmse": self.rmse, "mae": self.mae, "per_family": self.per_family,
                "fermi_rmse": self.fermi_rmse, "n_crystals": self.n_crystals}


def per_crystal_metrics(pred, target) -> tuple[np.ndarray, np.ndarray]:
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    r = pred - target
    return np.sqrt(np.mean(r ** 2, axis=1)), np.mean(np.abs(r), axis=1)


def metrics(pred, target) -> tuple[float, float]:
    """Mean over crystals of the per-crystal RMSE and MAE."""
    rmse, mae = per_crystal_metrics(pred, target)
    return float(rmse.mean()), float(mae.mean())


def family_label(crystal: CrystalGraph, key: str) -> str:
    if key == "n_species_kinds":
        label = SPECIES_FAMILY_NAMES.get(crystal.n_species_kinds)
    elif key == "crystal_system":
        label = crystal.crystal_system if crystal.crystal_system in CRYSTAL_SYSTEMS else None
    else:
        raise ValueError(f"unknown family key {key!r}; choose from {FAMILY_KEYS}")
    if label is None:
        raise ValueError(f"crystal {crystal.id}: no known {key} family "
                         f"({getattr(crystal, key)!r})")
    return label


def family_breakdown(pred, target, crystals, key: str) -> dict[str, dict]:
    """Per-family ``{rmse, mae, n}`` on the given crystals, ordered by label."""
    rmse, mae = per_crystal_metrics(pred, target)
    labels = [family_label(c, key) for c in crystals]
    if len(labels) != len(rmse):
        raise ValueError("one crystal per prediction row is required")
    out = {}
    for label in sorted(set(labels)):
        sel = np.array([lab == label for lab in labels])
        out[label] = {"rmse": float(rmse[sel].mean()), "mae": float(mae[sel].mean()),
                      "n": int(sel.sum())}
    return out


def report(pred, target, crystals=None, family_key: str | None = None) -> MetricReport:
    rmse, mae = metrics(pred, target)
    per_family = {}
    if family_key is not None:
        per_family = family_breakdown(pred, target, crystals, family_key)
    return MetricReport(rmse, mae, len(pred), per_family)


# Fermi-energy probe ------------------------------------------------------------

@dataclass(frozen=True)
class ProbeConfig:
    hidden: int = 256
    activation: str = "softplus"
    seed: int = 0
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        lr=1e-3, batch_size=32, max_epochs=1000, patience=50, loss_mode="mse"))


class FermiProbe(nn.Module):
    """Four affine layers M -> h -> h -> h -> 1, nonlinear after each hidden layer."""

    def __init__(self, m: int, cfg: ProbeConfig = ProbeConfig()):
        super().__init__()
        gen = torch.Generator().manual_seed(cfg.seed)
        self.m = m
        self.net = MLP([m, cfg.hidden, cfg.hidden, cfg.hidden, 1], act=cfg.activation, generator=gen)

    def forward(self, dos: torch.Tensor) -> torch.Tensor:
        if dos.shape[-1] != self.m:
            raise ValueError(f"probe expects DOS width {self.m}, got {dos.shape[-1]}")
        return self.net(dos).squeeze(-1)

    @torch.no_grad()
    def predict(self, dos) -> np.ndarray:
        return self(torch.as_tensor(np.asarray(dos), dtype=DTYPE)).numpy()


def _as_targets(fermi) -> np.ndarray:
    if fermi is None or any(f is None for f in fermi):
        raise ValueError("Fermi targets are required for every crystal")
    return np.asarray(fermi, dtype=np.float64)


def fermi_probe_train(dos_true, fermi, cfg: ProbeConfig = ProbeConfig(),
                      dos_valid=None, fermi_valid=None) -> FermiProbe:
    """Fit the probe on ground-truth DOS -> Fermi energy, then freeze it.

    Early stopping uses the given validation pair, or the training pair when
    none is supplied.
    """
    x = torch.as_tensor(np.asarray(dos_true), dtype=DTYPE)
    y = torch.as_tensor(_as_targets(fermi), dtype=DTYPE)
    if dos_valid is None:
        xv, yv = x, y
    else:
        xv = torch.as_tensor(np.asarray(dos_valid), dtype=DTYPE)
        yv = torch.as_tensor(_as_targets(fermi_valid), dtype=DTYPE)
    probe = FermiProbe(x.shape[1], cfg)
    mode = cfg.train.loss_mode

    def valid_loss(model):
        with torch.no_grad():
            return float(loss(model(xv), yv, mode))

    probe, _ = train_loop(probe, len(x), lambda idx: (x[idx], y[idx]), valid_loss, cfg.train)
    for p in probe.parameters():
        p.requires_grad_(False)
    return probe


def fermi_eval(probe: FermiProbe, dos_pred, fermi_true) -> float:
    """RMSE (eV) of probe(dos_pred) against the true Fermi energies."""
    pred = probe.predict(dos_pred)
    return float(np.sqrt(np.mean((pred - _as_targets(fermi_true)) ** 2)))
