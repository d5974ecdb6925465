"""Energy-embedding bank refined by parameter-free cross-attention over atom
embeddings, and the per-energy decoder."""

from __future__ import annotations

import math

import torch
from torch import nn

from .layers import DTYPE, MLP


class EnergyBank(nn.Module):
    """Learnable M x d query matrix shared across all crystals."""

    def __init__(self, m: int, d: int, std: float = 0.02, generator: torch.Generator | None = None):
        super().__init__()
        self.bank = nn.Parameter(torch.randn(m, d, generator=generator, dtype=DTYPE) * std)


class EnergyDecoder(nn.Module):
    """``phi(e_j + alpha * g)``; phi is d -> d -> 1 with a linear output."""

    def __init__(self, d: int, act: str = "softplus", generator: torch.Generator | None = None):
        super().__init__()
        self.head = MLP([d, d, 1], act=act, generator=generator)
        self.alpha = nn.Parameter(torch.tensor(1.0, dtype=DTYPE))


def pad_atoms(h: torch.Tensor, batch: torch.Tensor, local: torch.Tensor,
              num_graphs: int, max_atoms: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Scatter concatenated atom rows into (B, n_max, d) plus a validity mask."""
    h_pad = h.new_zeros(num_graphs, max_atoms, h.shape[1]).index_put((batch, local), h)
    mask = torch.zeros(num_graphs, max_atoms, dtype=torch.bool).index_put(
        (batch, local), torch.ones_like(batch, dtype=torch.bool))
    return h_pad, mask


def attention_weights(e_prev: torch.Tensor, h: torch.Tensor,
                      mask: torch.Tensor | None = None) -> torch.Tensor:
    """Row-softmax of ``e_prev @ h.T / sqrt(d)``; padded atoms get zero weight."""
    d = h.shape[-1]
    scores = e_prev @ h.transpose(-1, -2) / math.sqrt(d)
    if mask is not None:
        scores = scores.masked_fill(~mask.unsqueeze(-2), float("-inf"))
    return torch.softmax(scores, dim=-1)


def cross_attention_layer(e_prev: torch.Tensor, h: torch.Tensor,
                          mask: torch.Tensor | None = None) -> torch.Tensor:
    """Queries are the energy rows; keys and values are the atom rows, unprojected."""
    if e_prev.shape[-1] != h.shape[-1]:
        raise ValueError(f"width mismatch: energy {e_prev.shape[-1]} vs atoms {h.shape[-1]}")
    if h.shape[-2] < 1:
        raise ValueError("cross-attention needs at least one atom")
    return attention_weights(e_prev, h, mask) @ h


def refine(e0: torch.Tensor, h: torch.Tensor, layers: int,
           mask: torch.Tensor | None = None) -> torch.Tensor:
    """Apply ``layers`` cross-attention steps; output has h's leading batch dims."""
    e = e0.expand(*h.shape[:-2], *e0.shape)
    for _ in range(layers):
        e = cross_attention_layer(e, h, mask)
    return e


def pool_crystal(h: torch.Tensor, batch: torch.Tensor | None = None,
                 num_graphs: int | None = None) -> torch.Tensor:
    """Sum of atom rows, per graph when ``batch`` is given."""
    if batch is None:
        return h.sum(dim=0)
    return h.new_zeros(num_graphs, h.shape[1]).index_add(0, batch, h)


def decode(e_final: torch.Tensor, g: torch.Tensor, decoder: EnergyDecoder) -> torch.Tensor:
    if e_final.shape[-1] != g.shape[-1]:
        raise ValueError(f"width mismatch: energy {e_final.shape[-1]} vs crystal {g.shape[-1]}")
    return decoder.head(e_final + decoder.alpha * g.unsqueeze(-2)).squeeze(-1)
