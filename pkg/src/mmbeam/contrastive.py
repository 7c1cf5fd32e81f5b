"""InfoNCE alignment of image and LiDAR embeddings."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import torch

from .model import BeamPredictor, PreparedData, recalibrate_batchnorm

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ContrastiveConfig:
    temperature: float = 0.07
    symmetric: bool = False

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")


@dataclass
class PretrainLog:
    epoch: list[int]
    mean_loss: list[float]
    retrieval_top1: list[float]

    def rows(self):
        return list(zip(self.epoch, self.mean_loss, self.retrieval_top1))


def cosine_similarity_matrix(A, B):
    """``S[i, j] = <A_i, B_j> / (|A_i| |B_j|)``; rejects zero-norm rows."""
    A = torch.as_tensor(A)
    B = torch.as_tensor(B)
    na = A.norm(dim=1, keepdim=True)
    nb = B.norm(dim=1, keepdim=True)
    if torch.any(na < 1e-12) or torch.any(nb < 1e-12):
        raise ValueError("cosine similarity is undefined for zero-norm rows")
    return (A / na) @ (B / nb).T


def infonce_loss(img_embs, lidar_embs, cfg: ContrastiveConfig | None = None):
    """Mean over rows of ``-log softmax(S / tau)[i, i]``; positives sit on the diagonal."""
    cfg = cfg or ContrastiveConfig()
    if img_embs.shape[0] != lidar_embs.shape[0]:
        raise ValueError("image and LiDAR batches must have equal row counts")
    logits = cosine_similarity_matrix(img_embs, lidar_embs) / cfg.temperature
    diag = torch.diagonal(logits)
    loss = (torch.logsumexp(logits, dim=1) - diag).mean()
    if cfg.symmetric:
        loss = 0.5 * (loss + (torch.logsumexp(logits, dim=0) - diag).mean())
    return loss


@torch.no_grad()
def retrieval_top1(model: BeamPredictor, data: PreparedData, batch_size: int) -> float:
    """Fraction of image rows whose most similar LiDAR row (within its batch) is its own pair."""
    model.eval()
    hits = total = 0
    for b in data.batches(batch_size, drop_singleton=True):
        zi = model.encoders.encode_image(b.images)
        zl = model.encoders.encode_lidar(b.point_feats, b.point_index, b.size)
        s = cosine_similarity_matrix(zi, zl)
        hits += int((s.argmax(dim=1) == torch.arange(b.size)).sum())
        total += b.size
    return hits / total if total else float("nan")


def contrastive_params(model: BeamPredictor):
    return list(model.encoders.vision.parameters()) + list(model.encoders.lidar.parameters())


def pretrain(model: BeamPredictor, train: PreparedData, epochs: int, lr: float = 1e-3,
             weight_decay: float = 1e-4, batch_size: int = 64, cfg: ContrastiveConfig | None = None,
             held_out: PreparedData | None = None, seed: int = 0) -> PretrainLog:
    """Align the vision and LiDAR branches with AdamW on in-batch InfoNCE.

    Only the vision and LiDAR parameters are updated; BatchNorm statistics are
    re-estimated on ``train`` after every epoch.  ``retrieval_top1`` is
    measured on ``held_out`` (NaN when absent).
    """
    cfg = cfg or ContrastiveConfig()
    if len(train) == 0:
        raise ValueError("pretraining needs a non-empty training split")
    params = contrastive_params(model)
    opt = torch.optim.AdamW(params, lr=lr, weight_decay=weight_decay)
    gen = torch.Generator().manual_seed(seed)
    log = PretrainLog([], [], [])
    for epoch in range(1, epochs + 1):
        model.train()
        order = torch.randperm(len(train), generator=gen)
        total = 0.0
        steps = 0
        for b in train.batches(batch_size, order, drop_singleton=True):
            zi = model.encoders.encode_image(b.images)
            zl = model.encoders.encode_lidar(b.point_feats, b.point_index, b.size)
            loss = infonce_loss(zi, zl, cfg)
            if not torch.isfinite(loss):
                raise FloatingPointError(f"non-finite InfoNCE loss at epoch {epoch}, step {steps}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item()
            steps += 1
        recalibrate_batchnorm(model, train, batch_size)
        r1 = retrieval_top1(model, held_out, batch_size) if held_out is not None else math.nan
        log.epoch.append(epoch)
        log.mean_loss.append(total / max(steps, 1))
        log.retrieval_top1.append(r1)
        logger.info("pretrain epoch %d loss %.4f retrieval@1 %.3f", epoch, log.mean_loss[-1], r1)
    return log
