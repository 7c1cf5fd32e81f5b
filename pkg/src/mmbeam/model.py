"""End-to-end beam predictor and the tensorized dataset it consumes."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .dataio import DatasetIndex, GpsNormalizer, MultimodalSample, load_image, load_points
from .encoders import EncoderBank, EncoderConfig, Voxels, collate_voxels, tokenize, verbalize_gps, voxelize
from .fusion import MODALITIES, BeamDistribution, GatedFusion


@dataclass
class Batch:
    images: torch.Tensor
    point_feats: torch.Tensor
    point_index: torch.Tensor
    g_hat: torch.Tensor
    tokens: torch.Tensor
    labels: torch.Tensor

    @property
    def size(self) -> int:
        return self.labels.shape[0]


class PreparedData:
    """Decoded, voxelized and tokenized samples held in memory."""

    def __init__(self, images, voxels: list[Voxels], g_hat, tokens, labels, sample_ids):
        self.images = torch.as_tensor(images, dtype=torch.float32)
        self.voxels = voxels
        self.g_hat = torch.as_tensor(g_hat, dtype=torch.float32)
        self.tokens = torch.as_tensor(tokens, dtype=torch.int64)
        self.labels = torch.as_tensor(labels, dtype=torch.int64)
        self.sample_ids = list(sample_ids)

    def __len__(self):
        return self.labels.shape[0]

    @classmethod
    def from_samples(cls, samples: list[MultimodalSample], cfg: EncoderConfig,
                     norm: GpsNormalizer, bs_position) -> "PreparedData":
        images = np.stack([s.image for s in samples]).transpose(0, 3, 1, 2)
        gps = np.array([s.gps_raw for s in samples], dtype=np.float64)
        return cls(
            images=np.ascontiguousarray(images, dtype=np.float32),
            voxels=[voxelize(s.points, cfg) for s in samples],
            g_hat=norm.normalize(gps),
            tokens=np.stack([tokenize(verbalize_gps(g, bs_position), cfg.vocab, cfg.max_tokens) for g in gps]),
            labels=np.array([s.beam_label for s in samples]),
            sample_ids=[s.sample_id for s in samples],
        )

    @classmethod
    def from_index(cls, index: DatasetIndex, cfg: EncoderConfig, norm: GpsNormalizer,
                   bs_position) -> "PreparedData":
        samples = [MultimodalSample(r.sample_id, load_image(index.image_path(i)),
                                    load_points(index.lidar_path(i)), (r.latitude, r.longitude), r.beam_index)
                   for i, r in enumerate(index.records)]
        if not samples:
            raise ValueError("cannot prepare an empty dataset")
        return cls.from_samples(samples, cfg, norm, bs_position)

    def batch(self, rows) -> Batch:
        rows = torch.as_tensor(rows, dtype=torch.int64)
        feats, index = collate_voxels([self.voxels[i] for i in rows.tolist()])
        return Batch(self.images[rows], feats.float(), index, self.g_hat[rows], self.tokens[rows], self.labels[rows])

    def batches(self, batch_size: int, order=None, drop_singleton: bool = False):
        order = torch.arange(len(self)) if order is None else order
        for start in range(0, len(order), batch_size):
            rows = order[start:start + batch_size]
            if drop_singleton and len(rows) == 1:
                continue
            yield self.batch(rows)


class BeamPredictor(nn.Module):
    """Encoders -> gated cross-modal fusion -> linear beam classifier.

    With a single modality in ``modality_mask`` the fusion stage is bypassed
    and that modality's feature goes straight to the classifier.
    """

    def __init__(self, enc_cfg: EncoderConfig, M: int, gate_order: str = "after",
                 modality_mask=MODALITIES, use_gps_text: bool = True, fusion_heads: int = 4):
        super().__init__()
        mask = tuple(m for m in MODALITIES if m in set(modality_mask))
        if not mask:
            raise ValueError("modality_mask must name at least one modality")
        unknown = set(modality_mask) - set(MODALITIES)
        if unknown:
            raise ValueError(f"unknown modalities {sorted(unknown)}")
        self.enc_cfg = enc_cfg
        self.M = M
        self.modality_mask = mask
        self.use_gps_text = use_gps_text
        self.encoders = EncoderBank(enc_cfg)
        self.fusion = GatedFusion(enc_cfg.d_shared, fusion_heads, gate_order)
        self.head = nn.Linear(enc_cfg.d_shared, M)

    def describe(self) -> dict:
        return {"M": self.M, "gate_order": self.fusion.gate_order,
                "modality_mask": list(self.modality_mask), "use_gps_text": self.use_gps_text}

    def embed_gps(self, b: Batch):
        enc = self.encoders
        x_pos = enc.encode_pos(b.g_hat)
        if self.use_gps_text:
            x_text = enc.encode_text(b.tokens)
        else:
            x_text = x_pos.new_zeros(b.size, self.enc_cfg.d_t)
        return enc.unify_gps(x_pos, x_text)

    def embed(self, b: Batch) -> dict:
        out = {}
        if "image" in self.modality_mask:
            out["image"] = self.encoders.encode_image(b.images)
        if "lidar" in self.modality_mask:
            out["lidar"] = self.encoders.encode_lidar(b.point_feats, b.point_index, b.size)
        if "gps" in self.modality_mask:
            out["gps"] = self.embed_gps(b)
        return out

    def forward(self, b: Batch):
        """Return ``(logits, alpha)``; alpha is (B, 3) over (image, lidar, gps)."""
        feats = self.embed(b)
        if len(self.modality_mask) == 3:
            fused, alpha = self.fusion(feats["image"], feats["lidar"], feats["gps"])
            return self.head(fused), alpha
        if len(self.modality_mask) == 1:
            name = self.modality_mask[0]
            alpha = torch.zeros(b.size, 3)
            alpha[:, MODALITIES.index(name)] = 1.0
            return self.head(feats[name]), alpha
        # Two modalities: the missing token is zero and its gate weight is forced to zero.
        ref = next(iter(feats.values()))
        xs = [feats.get(m, torch.zeros_like(ref)) for m in MODALITIES]
        logits_gate = self.fusion.gate(torch.cat(xs, dim=-1))
        present = torch.tensor([m in feats for m in MODALITIES])
        alpha = torch.softmax(logits_gate.masked_fill(~present, float("-inf")), dim=-1)
        refined = self.fusion.attn(torch.stack(xs, dim=1))
        return self.head((alpha.unsqueeze(-1) * refined).sum(dim=1)), alpha

    @torch.no_grad()
    def predict_proba(self, data: PreparedData, batch_size: int = 256):
        self.eval()
        probs, alphas = [], []
        for b in data.batches(batch_size):
            logits, alpha = self(b)
            probs.append(torch.softmax(logits.double(), dim=-1))
            alphas.append(alpha.double())
        return torch.cat(probs).numpy(), torch.cat(alphas).numpy()


@torch.no_grad()
def recalibrate_batchnorm(model: BeamPredictor, data: PreparedData, batch_size: int) -> None:
    """Re-estimate the BatchNorm running statistics with one pass over ``data``.

    Exponential running averages lag behind quickly moving weights, which
    leaves eval-mode features offset from what training saw.  A no-grad pass
    with cumulative averaging removes the lag.  Parameters are untouched.
    BatchNorm only lives in the vision and LiDAR encoders, which are run
    directly so that both are refreshed whatever the modality mask.
    """
    encoders = (model.encoders.vision, model.encoders.lidar)
    bns = [m for enc in encoders for m in enc.modules() if isinstance(m, nn.modules.batchnorm._BatchNorm)]
    if not bns:
        return
    saved = [bn.momentum for bn in bns]
    for bn in bns:
        bn.reset_running_stats()
        bn.momentum = None
    was_training = model.training
    model.train()
    for b in data.batches(batch_size, drop_singleton=True):
        model.encoders.encode_image(b.images)
        model.encoders.encode_lidar(b.point_feats, b.point_index, b.size)
    model.train(was_training)
    for bn, mom in zip(bns, saved):
        bn.momentum = mom


def predict_sample(model: BeamPredictor, sample: MultimodalSample, norm: GpsNormalizer,
                   bs_position) -> tuple[BeamDistribution, np.ndarray]:
    """Single-sample inference; returns the beam distribution and the gate weights."""
    data = PreparedData.from_samples([sample], model.enc_cfg, norm, bs_position)
    p, alpha = model.predict_proba(data)
    return BeamDistribution(p[0], int(np.argmax(p[0]))), alpha[0]


def save_checkpoint(path, model: BeamPredictor, norm: GpsNormalizer | None = None,
                    bs_position=None, extra: dict | None = None) -> Path:
    path = Path(path)
    torch.save({
        "encoder_config": model.enc_cfg.to_dict(),
        "model": model.describe(),
        "state_dict": model.state_dict(),
        "normalizer": norm.to_dict() if norm else None,
        "bs_position": list(bs_position) if bs_position is not None else None,
        "extra": extra or {},
    }, path)
    return path


def load_checkpoint(path):
    """Rebuild ``(model, normalizer, bs_position, extra)`` from :func:`save_checkpoint` output."""
    ck = torch.load(Path(path), map_location="cpu", weights_only=False)
    enc_cfg = EncoderConfig.from_dict(ck["encoder_config"])
    desc = ck["model"]
    model = BeamPredictor(enc_cfg, desc["M"], desc["gate_order"], desc["modality_mask"], desc["use_gps_text"])
    model.load_state_dict(ck["state_dict"])
    norm = GpsNormalizer(**ck["normalizer"]) if ck["normalizer"] else None
    bs = tuple(ck["bs_position"]) if ck["bs_position"] is not None else None
    return model, norm, bs, ck["extra"]
