"""Model configuration, construction of every model variant, and checkpoints."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import energy_transformer as et
from .batching import GraphBatch, collate
from .crystal_data import CrystalGraph, FeaturizerConfig
from .graph_encoder import NodeEdgeEncoder, encode, make_processor
from .layers import DTYPE, MLP

MODEL_KINDS = ("dostransformer", "mlp", "gn")
CHECKPOINT_FORMAT = "dos-transformer-checkpoint/1"


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "dostransformer"
    energy: bool = True
    d: int = 256
    mp_layers: int = 3
    attn_layers: int = 2
    m: int = 201
    activation: str = "softplus"
    seed: int = 0
    featurizer: FeaturizerConfig = field(default_factory=FeaturizerConfig)

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind == "dostransformer" and not self.energy:
            raise ValueError("dostransformer always uses the energy bank")
        if self.attn_layers < 0:
            raise ValueError("attn_layers must be >= 0")

    @property
    def node_in(self) -> int:
        return self.featurizer.num_species

    @property
    def edge_in(self) -> int:
        return self.featurizer.rbf_centers

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["featurizer"] = FeaturizerConfig(**d.get("featurizer", {}))
        return cls(**d)


class CrystalDOSModel(nn.Module):
    """Crystal encoder -> sum pool -> (direct head | energy-bank decoder).

    For ``kind='dostransformer'`` the bank is refined by ``attn_layers``
    cross-attention steps before decoding; energy-mode baselines decode the raw
    bank.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        gen = torch.Generator().manual_seed(cfg.seed)
        d, act = cfg.d, cfg.activation
        if cfg.kind == "mlp":
            self.encoder = nn.ModuleDict(
                {"atom": MLP([cfg.node_in, d, d], act=act, generator=gen)})
        else:
            self.encoder = NodeEdgeEncoder(cfg.node_in, cfg.edge_in, d, act, gen)
            self.processor = make_processor(d, cfg.mp_layers, act, gen)
        if cfg.energy:
            self.energy = et.EnergyBank(cfg.m, d, generator=gen)
            self.decoder = et.EnergyDecoder(d, act, generator=gen)
        else:
            self.decoder = nn.ModuleDict({"head": MLP([d, d, cfg.m], act=act, generator=gen)})

    @property
    def refine_layers(self) -> int:
        return self.cfg.attn_layers if self.cfg.kind == "dostransformer" else 0

    def atom_embeddings(self, batch: GraphBatch) -> torch.Tensor:
        if self.cfg.kind == "mlp":
            return self.encoder["atom"](batch.x)
        return encode(batch, self.encoder, self.processor)

    def forward(self, batch: GraphBatch) -> torch.Tensor:
        h = self.atom_embeddings(batch)
        g = et.pool_crystal(h, batch.batch, batch.num_graphs)
        if not self.cfg.energy:
            return self.decoder["head"](g)
        if self.refine_layers:
            h_pad, mask = et.pad_atoms(h, batch.batch, batch.local, batch.num_graphs, batch.max_atoms)
            e = et.refine(self.energy.bank, h_pad, self.refine_layers, mask)
        else:
            e = self.energy.bank.expand(batch.num_graphs, *self.energy.bank.shape)
        return et.decode(e, g, self.decoder)


def build_model(cfg: ModelConfig) -> CrystalDOSModel:
    return CrystalDOSModel(cfg)


def predict(graph: CrystalGraph, model: CrystalDOSModel) -> np.ndarray:
    """Full forward pass for one crystal; returns the M-vector of DOS values."""
    with torch.no_grad():
        out = model(collate([graph], model.cfg.featurizer))
    return out[0].numpy()


def predict_many(graphs, model: CrystalDOSModel, batch_size: int = 64) -> np.ndarray:
    graphs = list(graphs)
    outs = []
    with torch.no_grad():
        for k in range(0, len(graphs), batch_size):
            outs.append(model(collate(graphs[k:k + batch_size], model.cfg.featurizer)).numpy())
    return np.concatenate(outs) if outs else np.zeros((0, model.cfg.m))


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def state_to_json(model: nn.Module) -> dict:
    return {
        name: {"shape": list(t.shape), "data": t.detach().reshape(-1).tolist()}
        for name, t in model.state_dict().items()
    }


def save_checkpoint(model: CrystalDOSModel, path, extra: dict | None = None) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "model": model.cfg.to_dict(),
        "extra": extra or {},
        "tensors": state_to_json(model),
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n")


def load_state(model: nn.Module, tensors: dict) -> None:
    state = {}
    expected = model.state_dict()
    missing = set(expected) - set(tensors)
    unknown = set(tensors) - set(expected)
    if missing or unknown:
        raise ValueError(f"checkpoint mismatch: missing={sorted(missing)} unknown={sorted(unknown)}")
    for name, spec in tensors.items():
        t = torch.tensor(spec["data"], dtype=DTYPE).reshape(spec["shape"])
        if t.shape != expected[name].shape:
            raise ValueError(f"{name}: shape {tuple(t.shape)} != {tuple(expected[name].shape)}")
        state[name] = t
    model.load_state_dict(state)


def load_checkpoint(path) -> tuple[CrystalDOSModel, dict]:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a model checkpoint")
    model = build_model(ModelConfig.from_dict(payload["model"]))
    load_state(model, payload["tensors"])
    return model, payload.get("extra", {})
