"""Modality encoders: windowed-attention vision, voxel LiDAR, positional MLP, GPS text."""
from __future__ import annotations

import math
import re
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import _accel

DIRECTIONS = ("north", "northeast", "east", "southeast", "south", "southwest", "west", "northwest")
PROMPT_TEMPLATE = ("The vehicle is currently at latitude {lat:.6f}, longitude {lon:.6f}, "
                   "located to the {dir} of the base station.")


@dataclass
class EncoderConfig:
    d_shared: int = 128
    d_v: int = 128
    d_l: int = 128
    d_p: int = 32
    d_t: int = 64
    image_size: tuple[int, int] = (32, 64)
    patch_size: int = 8
    window_size: int = 4
    n_vision_blocks: int = 4
    vision_heads: int = 4
    mlp_ratio: float = 2.0
    voxel_grid: tuple[int, int, int] = (16, 16, 4)
    voxel_origin: tuple[float, float, float] = (-20.0, 0.0, -0.5)
    voxel_extent: tuple[float, float, float] = (40.0, 16.0, 4.0)
    vfe_dim: int = 16
    voxel_conv_dims: tuple[int, int] = (16, 32)
    mlp_hidden: int = 64
    text_dim: int = 32
    text_blocks: int = 2
    text_heads: int = 4
    max_tokens: int = 48
    dropout: float = 0.0
    vocab: tuple[str, ...] = field(default_factory=lambda: default_vocab())

    def __post_init__(self):
        self.image_size = tuple(self.image_size)
        self.voxel_grid = tuple(self.voxel_grid)
        self.voxel_origin = tuple(self.voxel_origin)
        self.voxel_extent = tuple(self.voxel_extent)
        self.voxel_conv_dims = tuple(self.voxel_conv_dims)
        self.vocab = tuple(self.vocab)
        if self.d_shared < 8:
            raise ValueError("d_shared must be >= 8")
        dims = (self.d_v, self.d_l, self.d_p, self.d_t, self.mlp_hidden, self.text_dim, self.vfe_dim)
        if min(dims) <= 0:
            raise ValueError("all encoder dimensions must be positive")
        H, W = self.image_size
        if H % self.patch_size or W % self.patch_size:
            raise ValueError(f"image size {self.image_size} not divisible by patch_size {self.patch_size}")
        gh, gw = H // self.patch_size, W // self.patch_size
        if gh % self.window_size or gw % self.window_size:
            raise ValueError(f"patch grid {(gh, gw)} not divisible by window_size {self.window_size}")
        if self.d_v % self.vision_heads or self.text_dim % self.text_heads:
            raise ValueError("attention widths must be divisible by their head counts")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["vocab"] = list(self.vocab)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d)


# ------------------------------------------------------------------- attention

class SelfAttention(nn.Module):
    """Multi-head self-attention with an optional additive bias/mask."""

    def __init__(self, dim: int, heads: int, dropout: float = 0.0):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, bias=None):
        B, T, C = x.shape
        h = self.heads
        q, k, v = self.qkv(x).reshape(B, T, 3, h, C // h).permute(2, 0, 3, 1, 4)
        att = (q @ k.transpose(-2, -1)) / math.sqrt(C // h)
        if bias is not None:
            att = att + bias
        att = self.drop(att.softmax(dim=-1))
        out = (att @ v).transpose(1, 2).reshape(B, T, C)
        return self.proj(out)


class FeedForward(nn.Sequential):
    def __init__(self, dim: int, hidden: int, dropout: float = 0.0):
        super().__init__(nn.Linear(dim, hidden), nn.GELU(), nn.Dropout(dropout), nn.Linear(hidden, dim))


class TransformerBlock(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: float = 2.0, dropout: float = 0.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, heads, dropout)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = FeedForward(dim, int(dim * mlp_ratio), dropout)

    def forward(self, x, bias=None):
        x = x + self.attn(self.norm1(x), bias)
        return x + self.mlp(self.norm2(x))


# ---------------------------------------------------------------------- vision

def _window_partition(x, ws):
    B, H, W, C = x.shape
    x = x.view(B, H // ws, ws, W // ws, ws, C).permute(0, 1, 3, 2, 4, 5)
    return x.reshape(-1, ws * ws, C)


def _window_merge(win, ws, B, H, W):
    C = win.shape[-1]
    x = win.view(B, H // ws, W // ws, ws, ws, C).permute(0, 1, 3, 2, 4, 5)
    return x.reshape(B, H, W, C)


class SwinBlock(nn.Module):
    """Window-local attention block; ``shift`` selects the shifted-window variant.

    An axis whose patch grid equals the window size is never shifted.
    """

    def __init__(self, dim, heads, grid, window, shift, mlp_ratio=2.0, dropout=0.0):
        super().__init__()
        self.grid = grid
        self.ws = window
        self.shift = tuple((window // 2 if (shift and g > window) else 0) for g in grid)
        self.block = TransformerBlock(dim, heads, mlp_ratio, dropout)
        self.rel_bias = nn.Parameter(torch.zeros((2 * window - 1) ** 2, heads))
        nn.init.trunc_normal_(self.rel_bias, std=0.02)
        coords = torch.stack(torch.meshgrid(torch.arange(window), torch.arange(window), indexing="ij")).flatten(1)
        rel = (coords[:, :, None] - coords[:, None, :]).permute(1, 2, 0) + (window - 1)
        self.register_buffer("rel_index", rel[..., 0] * (2 * window - 1) + rel[..., 1], persistent=False)
        self.register_buffer("mask", self._shift_mask(), persistent=False)

    def _shift_mask(self):
        if not any(self.shift):
            return None
        H, W = self.grid
        region = torch.zeros(1, H, W, 1)
        cnt = 0
        h_slices = [slice(0, H)] if not self.shift[0] else [
            slice(0, -self.ws), slice(-self.ws, -self.shift[0]), slice(-self.shift[0], None)]
        w_slices = [slice(0, W)] if not self.shift[1] else [
            slice(0, -self.ws), slice(-self.ws, -self.shift[1]), slice(-self.shift[1], None)]
        for hs in h_slices:
            for wsl in w_slices:
                region[:, hs, wsl, :] = cnt
                cnt += 1
        win = _window_partition(region, self.ws).squeeze(-1)
        diff = win[:, None, :] - win[:, :, None]
        return torch.where(diff != 0, -1e4, 0.0)  # (nW, T, T)

    def forward(self, x):
        B, T, C = x.shape
        H, W = self.grid
        x = x.view(B, H, W, C)
        if any(self.shift):
            x = torch.roll(x, shifts=(-self.shift[0], -self.shift[1]), dims=(1, 2))
        win = _window_partition(x, self.ws)
        heads = self.rel_bias.shape[1]
        bias = self.rel_bias[self.rel_index.reshape(-1)].reshape(self.ws ** 2, self.ws ** 2, heads)
        bias = bias.permute(2, 0, 1).unsqueeze(0).to(x.dtype)  # (1, h, T, T)
        if self.mask is not None:
            nW = self.mask.shape[0]
            bias = (bias + self.mask.to(x.dtype)[:, None]).repeat(B, 1, 1, 1)
            bias = bias.view(B * nW, heads, self.ws ** 2, self.ws ** 2)
        win = self.block(win, bias)
        x = _window_merge(win, self.ws, B, H, W)
        if any(self.shift):
            x = torch.roll(x, shifts=self.shift, dims=(1, 2))
        return x.reshape(B, T, C)


class VisionEncoder(nn.Module):
    """Patch embedding, alternating regular/shifted window blocks, average pool, projection."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        p = cfg.patch_size
        self.grid = (cfg.image_size[0] // p, cfg.image_size[1] // p)
        self.patch = nn.Conv2d(3, cfg.d_v, kernel_size=p, stride=p)
        self.pos = nn.Parameter(torch.zeros(1, self.grid[0] * self.grid[1], cfg.d_v))
        nn.init.trunc_normal_(self.pos, std=0.02)
        self.blocks = nn.ModuleList(
            SwinBlock(cfg.d_v, cfg.vision_heads, self.grid, cfg.window_size, shift=bool(i % 2),
                      mlp_ratio=cfg.mlp_ratio, dropout=cfg.dropout)
            for i in range(cfg.n_vision_blocks))
        self.norm = nn.LayerNorm(cfg.d_v)
        # Batch statistics remove the scene background shared by every frame;
        # in eval mode this is still one affine map.
        self.proj = nn.Sequential(nn.BatchNorm1d(cfg.d_v), nn.Linear(cfg.d_v, cfg.d_shared))

    def forward(self, images):
        """``images``: (B, 3, H, W) in [0, 1]."""
        x = self.patch(images).flatten(2).transpose(1, 2) + self.pos
        for blk in self.blocks:
            x = blk(x)
        return self.proj(self.norm(x).mean(dim=1))


# ----------------------------------------------------------------------- LiDAR

@dataclass
class Voxels:
    """Points of one cloud inside the voxel box, canonically sorted.

    ``feats`` columns: normalized x, y, z, intensity, then the point's offset
    from its voxel's point mean in voxel units.  ``index`` is the flat voxel id.
    """
    feats: np.ndarray
    index: np.ndarray
    grid: tuple[int, int, int]


def voxelize(points, cfg: EncoderConfig) -> Voxels:
    """Bucket points into the voxel grid, dropping those outside the box.

    Rows are sorted by (voxel, x, y, z, intensity) so the result, and all
    downstream pooling, is bit-identical under any reordering of the input.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 4:
        raise ValueError("points must be a (P, 4) array")
    idx = _accel.voxel_index(pts, cfg.voxel_origin, cfg.voxel_extent, cfg.voxel_grid)
    keep = idx >= 0
    if not keep.any():
        raise ValueError("all points fall outside the voxel extent")
    pts, idx = pts[keep], idx[keep]
    order = np.lexsort((pts[:, 3], pts[:, 2], pts[:, 1], pts[:, 0], idx))
    pts, idx = pts[order], idx[order]

    origin = np.asarray(cfg.voxel_origin)
    size = np.asarray(cfg.voxel_extent)
    vsize = size / np.asarray(cfg.voxel_grid)
    n_vox = int(np.prod(cfg.voxel_grid))
    sums = np.zeros((n_vox, 3))
    np.add.at(sums, idx, pts[:, :3])
    counts = np.bincount(idx, minlength=n_vox)[:, None]
    means = sums[idx] / counts[idx]
    feats = np.column_stack([(pts[:, :3] - origin) / size, pts[:, 3], (pts[:, :3] - means) / vsize])
    return Voxels(feats=feats, index=idx, grid=tuple(cfg.voxel_grid))


def collate_voxels(voxels: list[Voxels]):
    """Stack clouds into (points, features) with batch-offset voxel ids."""
    n_vox = int(np.prod(voxels[0].grid))
    feats = np.concatenate([v.feats for v in voxels])
    index = np.concatenate([v.index + b * n_vox for b, v in enumerate(voxels)])
    return torch.from_numpy(feats), torch.from_numpy(index)


class LidarEncoder(nn.Module):
    """Voxel feature encoding, dense 3-D convolutions, global pooling, projection."""

    N_POINT_FEATS = 7

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.grid = tuple(cfg.voxel_grid)
        self.vfe = nn.Linear(self.N_POINT_FEATS, cfg.vfe_dim)
        c1, c2 = cfg.voxel_conv_dims
        self.conv = nn.Sequential(
            nn.Conv3d(2 * cfg.vfe_dim, c1, 3, stride=2, padding=1), nn.GELU(),
            nn.Conv3d(c1, c2, 3, padding=1), nn.GELU(),
        )
        self.head = nn.Sequential(nn.BatchNorm1d(2 * c2), nn.Linear(2 * c2, cfg.d_l), nn.GELU())
        self.proj = nn.Linear(cfg.d_l, cfg.d_shared)

    def voxel_features(self, feats, index, batch_size: int):
        """Per-voxel mean and max of point features; empty voxels are exactly zero."""
        n_vox = int(np.prod(self.grid))
        pf = F.gelu(self.vfe(feats.to(self.vfe.weight.dtype)))
        C = pf.shape[1]
        idx = index.unsqueeze(1).expand(-1, C)
        base = pf.new_zeros(batch_size * n_vox, C)
        mean = base.scatter_reduce(0, idx, pf, reduce="mean", include_self=False)
        mx = base.scatter_reduce(0, idx, pf, reduce="amax", include_self=False)
        grid = torch.cat([mean, mx], dim=1).view(batch_size, *self.grid, 2 * C)
        return grid.permute(0, 4, 1, 2, 3)

    def forward(self, feats, index, batch_size: int):
        g = self.conv(self.voxel_features(feats, index, batch_size))
        pooled = torch.cat([g.mean(dim=(2, 3, 4)), g.amax(dim=(2, 3, 4))], dim=1)
        return self.proj(self.head(pooled))


# --------------------------------------------------------------- GPS branches

class PositionMLP(nn.Sequential):
    def __init__(self, cfg: EncoderConfig):
        super().__init__(nn.Linear(2, cfg.mlp_hidden), nn.GELU(), nn.Linear(cfg.mlp_hidden, cfg.d_p))


def compass_direction(bearing_deg: float) -> str:
    """8-sector compass word; sectors are centered on multiples of 45 degrees."""
    b = bearing_deg % 360.0
    return DIRECTIONS[int(math.floor((b + 22.5) / 45.0)) % 8]


def bearing_deg(gps, origin) -> float:
    """Bearing of ``gps`` seen from ``origin`` (degrees clockwise from north, local flat-earth)."""
    dlat = gps[0] - origin[0]
    dlon = (gps[1] - origin[1]) * math.cos(math.radians(origin[0]))
    if dlat == 0 and dlon == 0:
        return 0.0
    return math.degrees(math.atan2(dlon, dlat)) % 360.0


def verbalize_gps(gps_raw, bs_position) -> str:
    lat, lon = float(gps_raw[0]), float(gps_raw[1])
    if not (math.isfinite(lat) and math.isfinite(lon)):
        raise ValueError("GPS coordinates must be finite")
    direction = compass_direction(bearing_deg((lat, lon), bs_position))
    return PROMPT_TEMPLATE.format(lat=lat, lon=lon, dir=direction)


_TOKEN_RE = re.compile(r"[A-Za-z]+|\d|[^\sA-Za-z\d]")
PAD, UNK = "<pad>", "<unk>"


def default_vocab() -> tuple[str, ...]:
    words = _TOKEN_RE.findall(PROMPT_TEMPLATE.replace("{lat:.6f}", "").replace("{lon:.6f}", "")
                              .replace("{dir}", ""))
    base = [PAD, UNK] + list(dict.fromkeys(words)) + list(DIRECTIONS) + [str(d) for d in range(10)] + ["-", "."]
    return tuple(dict.fromkeys(base))


def tokenize(prompt: str, vocab, max_tokens: int) -> np.ndarray:
    """Token ids padded with 0; every digit, sign and point is its own token."""
    toks = _TOKEN_RE.findall(prompt)
    if not toks:
        raise ValueError("empty prompt")
    if len(toks) > max_tokens:
        raise ValueError(f"prompt has {len(toks)} tokens, limit is {max_tokens}")
    lookup = {t: i for i, t in enumerate(vocab)}
    unk = lookup[UNK]
    ids = np.zeros(max_tokens, dtype=np.int64)
    ids[:len(toks)] = [lookup.get(t, unk) for t in toks]
    return ids


class TextEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.tok = nn.Embedding(len(cfg.vocab), cfg.text_dim, padding_idx=0)
        self.pos = nn.Parameter(torch.zeros(1, cfg.max_tokens, cfg.text_dim))
        nn.init.trunc_normal_(self.pos, std=0.02)
        self.blocks = nn.ModuleList(TransformerBlock(cfg.text_dim, cfg.text_heads, 2.0, cfg.dropout)
                                    for _ in range(cfg.text_blocks))
        self.norm = nn.LayerNorm(cfg.text_dim)
        self.proj = nn.Linear(cfg.text_dim, cfg.d_t)

    def forward(self, ids):
        valid = ids != 0
        x = self.tok(ids) + self.pos[:, :ids.shape[1]]
        bias = torch.where(valid, 0.0, -1e4).to(x.dtype)[:, None, None, :]
        for blk in self.blocks:
            x = blk(x, bias)
        x = self.norm(x)
        w = valid.to(x.dtype).unsqueeze(-1)
        pooled = (x * w).sum(dim=1) / w.sum(dim=1)
        return self.proj(pooled)


# ------------------------------------------------------------------------ bank

class EncoderBank(nn.Module):
    """All modality branches plus the unified GPS projection."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.vision = VisionEncoder(cfg)
        self.lidar = LidarEncoder(cfg)
        self.pos = PositionMLP(cfg)
        self.text = TextEncoder(cfg)
        self.gps_proj = nn.Linear(cfg.d_p + cfg.d_t, cfg.d_shared)

    def encode_image(self, images):
        H, W = self.cfg.image_size
        if images.shape[-2:] != (H, W):
            raise ValueError(f"image size {tuple(images.shape[-2:])} does not match config {(H, W)}")
        return self.vision(images)

    def encode_lidar(self, feats, index, batch_size):
        return self.lidar(feats, index, batch_size)

    def encode_pos(self, g_hat):
        return self.pos(g_hat)

    def encode_text(self, ids):
        return self.text(ids)

    def unify_gps(self, x_pos, x_text):
        if x_pos.shape[-1] + x_text.shape[-1] != self.gps_proj.in_features:
            raise ValueError("x_pos/x_text dimensions do not match the GPS projection")
        return self.gps_proj(torch.cat([x_pos, x_text], dim=-1))


def param_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
