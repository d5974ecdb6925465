"""Graph-network crystal encoder: node/edge encoders plus message-passing
processor layers producing one embedding row per atom."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .batching import GraphBatch
from .layers import MLP


@dataclass(frozen=True)
class EncoderDims:
    node_in: int
    edge_in: int
    d: int
    layers: int = 3


class NodeEdgeEncoder(nn.Module):
    """Initial atom and bond states; single affine layer plus nonlinearity each."""

    def __init__(self, node_in: int, edge_in: int, d: int, act: str = "softplus",
                 generator: torch.Generator | None = None):
        super().__init__()
        self.node = MLP([node_in, d], act=act, act_last=True, generator=generator)
        self.edge = MLP([edge_in, d], act=act, act_last=True, generator=generator)


class ProcessorLayer(nn.Module):
    def __init__(self, d: int, act: str = "softplus", generator: torch.Generator | None = None):
        super().__init__()
        self.edge = MLP([3 * d, d, d], act=act, generator=generator)
        self.node = MLP([2 * d, d, d], act=act, generator=generator)


def make_processor(d: int, layers: int, act: str = "softplus",
                   generator: torch.Generator | None = None) -> nn.ModuleDict:
    if layers < 1:
        raise ValueError("message passing needs at least one processor layer")
    return nn.ModuleDict({f"l{k + 1}": ProcessorLayer(d, act, generator) for k in range(layers)})


def encode_initial(x: torch.Tensor, edge_attr: torch.Tensor, encoder: NodeEdgeEncoder):
    if x.shape[1] != encoder.node.sizes[0]:
        raise ValueError(f"atom feature width {x.shape[1]} != encoder input {encoder.node.sizes[0]}")
    if edge_attr.shape[1] != encoder.edge.sizes[0]:
        raise ValueError(
            f"edge feature width {edge_attr.shape[1]} != encoder input {encoder.edge.sizes[0]}")
    return encoder.node(x), encoder.edge(edge_attr)


def message_pass(edge_index: torch.Tensor, h: torch.Tensor, b: torch.Tensor,
                 layer: ProcessorLayer):
    """One processor step.

    ``b_ij <- psi_edge([h_i, h_j, b_ij])`` for every directed edge (i, j), then
    ``h_i <- psi_node([h_i, sum_j b_ij])`` summing over edges leaving i.
    """
    src, dst = edge_index[0], edge_index[1]
    b_new = layer.edge(torch.cat([h[src], h[dst], b], dim=1))
    agg = torch.zeros_like(h).index_add(0, src, b_new)
    h_new = layer.node(torch.cat([h, agg], dim=1))
    return h_new, b_new


def encode(batch: GraphBatch, encoder: NodeEdgeEncoder, processor: nn.ModuleDict) -> torch.Tensor:
    """Atom embedding matrix (total atoms x d) for a batch of graphs."""
    h, b = encode_initial(batch.x, batch.edge_attr, encoder)
    for layer in processor.values():
        h, b = message_pass(batch.edge_index, h, b, layer)
    return h
