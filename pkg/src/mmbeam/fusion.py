"""Gated cross-modal fusion, beam classifier and classification loss."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

MODALITIES = ("image", "lidar", "gps")


@dataclass
class BeamDistribution:
    p: np.ndarray
    m_hat: int

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64)
        if self.p.ndim != 1 or np.any(self.p < 0) or abs(self.p.sum() - 1.0) > 1e-6:
            raise ValueError("p must be a probability vector")


def gate_weights(x_img, x_lidar, x_gps, gate: nn.Linear):
    """Softmax modality weights from the concatenated (image, lidar, gps) features."""
    if not (x_img.shape[-1] == x_lidar.shape[-1] == x_gps.shape[-1]):
        raise ValueError("modality features must share one dimension")
    x = torch.cat([x_img, x_lidar, x_gps], dim=-1)
    if x.shape[-1] != gate.in_features:
        raise ValueError(f"gate expects {gate.in_features} inputs, got {x.shape[-1]}")
    return torch.softmax(gate(x), dim=-1)


class CrossModalAttention(nn.Module):
    """One multi-head self-attention layer over the three modality tokens, with residual."""

    def __init__(self, dim: int, heads: int = 4):
        super().__init__()
        if dim % heads:
            raise ValueError("dim must be divisible by heads")
        self.heads = heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, tokens):
        """``tokens``: (B, 3, d) -> refined (B, 3, d)."""
        B, T, C = tokens.shape
        h = self.heads

        def split(t):
            return t.view(B, T, h, C // h).transpose(1, 2)

        q, k, v = split(self.q(tokens)), split(self.k(tokens)), split(self.v(tokens))
        att = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(C // h), dim=-1)
        mixed = (att @ v).transpose(1, 2).reshape(B, T, C)
        return tokens + self.out(mixed)


def fuse(refined, alpha):
    """Weighted sum over the modality axis: (B, 3, d), (B, 3) -> (B, d)."""
    return (alpha.unsqueeze(-1) * refined).sum(dim=1)


class GatedFusion(nn.Module):
    """Gate + cross-modal attention.

    ``gate_order="after"`` (default) computes the weights from the raw
    features and applies them to the attention-refined tokens.  ``"before"``
    scales the tokens by their weights first and sums the refined output.
    """

    def __init__(self, dim: int, heads: int = 4, gate_order: str = "after"):
        super().__init__()
        if gate_order not in ("before", "after"):
            raise ValueError("gate_order must be 'before' or 'after'")
        self.gate_order = gate_order
        self.gate = nn.Linear(3 * dim, 3)
        self.attn = CrossModalAttention(dim, heads)

    def forward(self, x_img, x_lidar, x_gps):
        alpha = gate_weights(x_img, x_lidar, x_gps, self.gate)
        tokens = torch.stack([x_img, x_lidar, x_gps], dim=1)
        if self.gate_order == "after":
            return fuse(self.attn(tokens), alpha), alpha
        refined = self.attn(alpha.unsqueeze(-1) * tokens)
        return refined.sum(dim=1), alpha


def classify(x_fused, head: nn.Linear) -> list[BeamDistribution]:
    """Probability vectors and argmax beams (lowest index on ties) for a batch."""
    with torch.no_grad():
        p = torch.softmax(head(x_fused).double(), dim=-1).cpu().numpy()
    return [BeamDistribution(row, int(np.argmax(row))) for row in np.atleast_2d(p)]


def ce_loss(logits, target):
    """Mean cross-entropy from logits; ``target`` holds class ids or one-hot rows."""
    if target.dim() == logits.dim():
        t = target.to(logits.dtype)
        if not (torch.all((t == 0) | (t == 1)) and torch.all(t.sum(dim=-1) == 1)):
            raise ValueError("target rows must be one-hot")
        target = t.argmax(dim=-1)
    return F.cross_entropy(logits, target)
