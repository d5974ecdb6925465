"""Collate crystal graphs into padded/concatenated tensors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .crystal_data import CrystalGraph, FeaturizerConfig
from .layers import DTYPE


@dataclass
class GraphBatch:
    x: torch.Tensor  # (total atoms, F)
    edge_index: torch.Tensor  # (2, total edges), global atom indices
    edge_attr: torch.Tensor  # (total edges, F_e)
    batch: torch.Tensor  # (total atoms,), graph index of each atom
    local: torch.Tensor  # (total atoms,), position of each atom within its graph
    n_atoms: torch.Tensor  # (B,)
    y: torch.Tensor | None  # (B, M)
    ids: list[str]

    @property
    def num_graphs(self) -> int:
        return int(self.n_atoms.shape[0])

    @property
    def max_atoms(self) -> int:
        return int(self.n_atoms.max())


@dataclass(frozen=True)
class GraphArrays:
    """Featurized arrays of one crystal, reusable across epochs."""

    id: str
    x: np.ndarray
    edges: np.ndarray  # (2, E)
    edge_attr: np.ndarray
    dos: np.ndarray | None

    @property
    def n_atoms(self) -> int:
        return self.x.shape[0]


def featurize_graph(g: CrystalGraph, featurizer: FeaturizerConfig) -> GraphArrays:
    edges = np.asarray(g.edges, dtype=np.int64).reshape(-1, 2).T
    return GraphArrays(g.id, g.node_features(featurizer), edges,
                       g.edge_feature_matrix(featurizer), g.dos)


def collate(graphs: Sequence[CrystalGraph | GraphArrays], featurizer: FeaturizerConfig) -> GraphBatch:
    arrays = [g if isinstance(g, GraphArrays) else featurize_graph(g, featurizer) for g in graphs]
    return collate_arrays(arrays, featurizer.rbf_centers)


def collate_arrays(graphs: Sequence[GraphArrays], edge_width: int) -> GraphBatch:
    xs, eis, eas, bvec, local, y = [], [], [], [], [], []
    offset = 0
    for g_idx, g in enumerate(graphs):
        n = g.n_atoms
        xs.append(g.x)
        if g.edges.shape[1]:
            eis.append(g.edges + offset)
            eas.append(g.edge_attr)
        bvec.append(np.full(n, g_idx, dtype=np.int64))
        local.append(np.arange(n, dtype=np.int64))
        if g.dos is not None:
            y.append(g.dos)
        offset += n
    f_e = eas[0].shape[1] if eas else edge_width
    edge_index = np.concatenate(eis, axis=1) if eis else np.zeros((2, 0), dtype=np.int64)
    edge_attr = np.concatenate(eas) if eas else np.zeros((0, f_e))
    return GraphBatch(
        x=torch.as_tensor(np.concatenate(xs), dtype=DTYPE),
        edge_index=torch.as_tensor(edge_index),
        edge_attr=torch.as_tensor(edge_attr, dtype=DTYPE),
        batch=torch.as_tensor(np.concatenate(bvec)),
        local=torch.as_tensor(np.concatenate(local)),
        n_atoms=torch.as_tensor([g.n_atoms for g in graphs]),
        y=torch.as_tensor(np.stack(y), dtype=DTYPE) if len(y) == len(graphs) else None,
        ids=[g.id for g in graphs],
    )
