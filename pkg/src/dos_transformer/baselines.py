"""Comparison models: per-atom MLP or graph network encoders, each with a direct
M-output head or the raw (unrefined) energy bank."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .crystal_data import CrystalGraph
from .layers import mlp_param_count
from .models import CrystalDOSModel, ModelConfig, build_model, predict

ENCODERS = ("mlp", "graph_network")
ENERGY_MODES = ("direct", "energy_embedding")


@dataclass(frozen=True)
class BaselineKind:
    encoder: str = "graph_network"
    energy_mode: str = "energy_embedding"

    def __post_init__(self):
        if self.encoder not in ENCODERS:
            raise ValueError(f"unknown encoder {self.encoder!r}")
        if self.energy_mode not in ENERGY_MODES:
            raise ValueError(f"unknown energy mode {self.energy_mode!r}")

    @property
    def model_kind(self) -> str:
        return "mlp" if self.encoder == "mlp" else "gn"

    @property
    def energy(self) -> bool:
        return self.energy_mode == "energy_embedding"


ALL_BASELINES = tuple(BaselineKind(e, m) for e in ENCODERS for m in ENERGY_MODES)


def baseline_config(kind: BaselineKind, **dims) -> ModelConfig:
    return ModelConfig(kind=kind.model_kind, energy=kind.energy, **dims)


def build_baseline(kind: BaselineKind, **dims) -> CrystalDOSModel:
    return build_model(baseline_config(kind, **dims))


def baseline_predict(graph: CrystalGraph, kind: BaselineKind, model: CrystalDOSModel) -> np.ndarray:
    if (model.cfg.kind, model.cfg.energy) != (kind.model_kind, kind.energy):
        raise ValueError(f"model ({model.cfg.kind}, energy={model.cfg.energy}) does not match {kind}")
    return predict(graph, model)


def count_params(cfg: ModelConfig) -> int:
    """Closed-form trainable parameter count for any model variant."""
    d, m = cfg.d, cfg.m
    if cfg.kind == "mlp":
        total = mlp_param_count([cfg.node_in, d, d])
    else:
        total = mlp_param_count([cfg.node_in, d]) + mlp_param_count([cfg.edge_in, d])
        total += cfg.mp_layers * (mlp_param_count([3 * d, d, d]) + mlp_param_count([2 * d, d, d]))
    if cfg.energy:
        total += m * d + mlp_param_count([d, d, 1]) + 1
    else:
        total += mlp_param_count([d, d, m])
    return total
