"""Flat ``key = value`` run configuration with typed, documented defaults.

Precedence: command-line flags > config file > built-in defaults.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .contrastive import ContrastiveConfig
from .dataio import SyntheticSceneConfig
from .encoders import EncoderConfig
from .harness import TrainConfig
from .metrics import DbaConfig


@dataclass(frozen=True)
class Key:
    name: str
    default: Any
    kind: str  # int, float, bool, str, ints, strs
    doc: str


KEYS = [
    # codebook and synthetic scene
    Key("M", 32, "int", "codebook size (number of beams)"),
    Key("N_ant", 32, "int", "antennas in the BS uniform linear array"),
    Key("n_samples", 2000, "int", "synthetic samples to generate"),
    Key("road_span_min_m", -16.0, "float", "western end of the road segment (m, east of BS)"),
    Key("road_span_max_m", 16.0, "float", "eastern end of the road segment (m, east of BS)"),
    Key("road_offset_m", 8.0, "float", "distance of the UE lane north of the BS (m)"),
    Key("bs_lat", 33.42, "float", "BS latitude (deg); also the origin of the prompt's direction word"),
    Key("bs_lon", -111.93, "float", "BS longitude (deg)"),
    Key("image_height", 32, "int", "camera image height (px)"),
    Key("image_width", 64, "int", "camera image width (px)"),
    Key("camera_half_fov_deg", 70.0, "float", "camera half field of view (deg)"),
    Key("points_per_vehicle", 96, "int", "LiDAR returns per vehicle"),
    Key("clutter_points", 64, "int", "LiDAR ground-clutter returns per frame"),
    Key("gps_noise_std_deg", 3e-5, "float", "GPS noise std per axis (deg)"),
    Key("distractor_prob", 0.5, "float", "probability of a second, non-UE vehicle in the scene"),
    Key("night_mode", False, "bool", "darken and noise the camera images"),
    # splits
    Key("split_seed", 0, "int", "seed of the stratified train/val/test split"),
    Key("train_frac", 0.8, "float", "training fraction"),
    Key("val_frac", 0.1, "float", "validation fraction"),
    Key("test_frac", 0.1, "float", "test fraction"),
    # encoders
    Key("d_shared", 128, "int", "shared latent dimension"),
    Key("d_v", 128, "int", "vision token width"),
    Key("d_l", 128, "int", "LiDAR branch width before projection"),
    Key("d_p", 32, "int", "positional MLP output dimension"),
    Key("d_t", 64, "int", "text branch output dimension"),
    Key("patch_size", 8, "int", "vision patch size (px)"),
    Key("window_size", 4, "int", "attention window size (patches)"),
    Key("n_vision_blocks", 4, "int", "vision attention blocks (odd blocks use shifted windows)"),
    Key("vision_heads", 4, "int", "vision attention heads"),
    Key("voxel_grid", [16, 16, 4], "ints", "voxel grid nx,ny,nz"),
    Key("voxel_origin", [-20.0, 0.0, -0.5], "floats", "voxel box corner x,y,z (m)"),
    Key("voxel_extent", [40.0, 16.0, 4.0], "floats", "voxel box size x,y,z (m)"),
    Key("vfe_dim", 16, "int", "per-point VFE feature width"),
    Key("mlp_hidden", 64, "int", "positional MLP hidden width"),
    Key("text_dim", 32, "int", "text token width"),
    Key("text_blocks", 2, "int", "text transformer blocks"),
    # contrastive pretraining
    Key("temperature", 0.07, "float", "InfoNCE temperature"),
    Key("symmetric", False, "bool", "also add the LiDAR-to-image InfoNCE direction"),
    Key("pretrain_epochs", 30, "int", "contrastive pretraining epochs"),
    Key("pretrain_lr", 1e-3, "float", "pretraining learning rate"),
    # finetuning
    Key("epochs", 100, "int", "maximum finetuning epochs"),
    Key("lr", 1e-3, "float", "finetuning learning rate"),
    Key("weight_decay", 1e-4, "float", "AdamW decoupled weight decay"),
    Key("batch_size", 64, "int", "batch size for both stages"),
    Key("early_stop_patience", 10, "int", "epochs without validation-DBA gain before stopping"),
    Key("gate_order", "after", "str", "apply gate weights before or after cross-modal attention"),
    Key("use_pretrain", True, "bool", "initialize vision/LiDAR from the pretraining checkpoint"),
    Key("use_gps_text", True, "bool", "include the GPS-text branch"),
    Key("modality_mask", ["image", "lidar", "gps"], "strs", "modalities fed to the model"),
    Key("seed", 0, "int", "data-generation and training seed"),
    # metric and ablation
    Key("K", 3, "int", "ranks averaged by the DBA score"),
    Key("delta", 5.0, "float", "DBA beam-index tolerance"),
    Key("ablation_seeds", [0, 1, 2, 3, 4], "ints", "seeds of the ablation matrix"),
]
DEFAULTS = {k.name: k.default for k in KEYS}
_BY_NAME = {k.name: k for k in KEYS}


class ConfigError(ValueError):
    pass


def parse_value(key: str, raw: str):
    ks = _BY_NAME[key]
    raw = raw.strip()
    try:
        if ks.kind == "int":
            return int(raw)
        if ks.kind == "float":
            return float(raw)
        if ks.kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if ks.kind == "str":
            return raw
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        if ks.kind == "ints":
            return [int(p) for p in parts]
        if ks.kind == "floats":
            return [float(p) for p in parts]
        return parts
    except ValueError:
        raise ConfigError(f"bad value for {key!r} ({ks.kind} expected): {raw!r}") from None


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ",".join(format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def load_config(path=None, overrides: dict | None = None) -> dict:
    cfg = dict(DEFAULTS)
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string("[run]\n" + path.read_text())
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for key, raw in parser["run"].items():
            if key not in _BY_NAME:
                raise ConfigError(f"{path}: unknown config key {key!r}")
            cfg[key] = parse_value(key, raw)
    for key, value in (overrides or {}).items():
        if key not in _BY_NAME:
            raise ConfigError(f"unknown config key {key!r}")
        if value is not None:
            cfg[key] = value
    return cfg


def dump_config(cfg: dict) -> str:
    lines = []
    for k in KEYS:
        lines.append(f"# {k.doc}")
        lines.append(f"{k.name} = {format_value(cfg[k.name])}")
    return "\n".join(lines) + "\n"


def scene_config(cfg: dict) -> SyntheticSceneConfig:
    return SyntheticSceneConfig(
        n_samples=cfg["n_samples"], M=cfg["M"], N_ant=cfg["N_ant"],
        road_span_m=(cfg["road_span_min_m"], cfg["road_span_max_m"]), road_offset_m=cfg["road_offset_m"],
        bs_position=(cfg["bs_lat"], cfg["bs_lon"]), image_size=(cfg["image_height"], cfg["image_width"]),
        camera_half_fov_deg=cfg["camera_half_fov_deg"], points_per_vehicle=cfg["points_per_vehicle"],
        clutter_points=cfg["clutter_points"], gps_noise_std_deg=cfg["gps_noise_std_deg"],
        distractor_prob=cfg["distractor_prob"], night_mode=cfg["night_mode"], rng_seed=cfg["seed"],
    )


def encoder_config(cfg: dict) -> EncoderConfig:
    return EncoderConfig(
        d_shared=cfg["d_shared"], d_v=cfg["d_v"], d_l=cfg["d_l"], d_p=cfg["d_p"], d_t=cfg["d_t"],
        image_size=(cfg["image_height"], cfg["image_width"]), patch_size=cfg["patch_size"],
        window_size=cfg["window_size"], n_vision_blocks=cfg["n_vision_blocks"],
        vision_heads=cfg["vision_heads"], voxel_grid=tuple(cfg["voxel_grid"]),
        voxel_origin=tuple(cfg["voxel_origin"]), voxel_extent=tuple(cfg["voxel_extent"]),
        vfe_dim=cfg["vfe_dim"], mlp_hidden=cfg["mlp_hidden"], text_dim=cfg["text_dim"],
        text_blocks=cfg["text_blocks"],
    )


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        epochs=cfg["epochs"], lr=cfg["lr"], batch_size=cfg["batch_size"],
        early_stop_patience=cfg["early_stop_patience"], seed=cfg["seed"], weight_decay=cfg["weight_decay"],
        gate_order=cfg["gate_order"], use_pretrain=cfg["use_pretrain"], use_gps_text=cfg["use_gps_text"],
        modality_mask=tuple(cfg["modality_mask"]), pretrain_epochs=cfg["pretrain_epochs"],
        pretrain_lr=cfg["pretrain_lr"],
        contrastive=ContrastiveConfig(cfg["temperature"], cfg["symmetric"]),
        dba=DbaConfig(cfg["K"], cfg["delta"]),
    )


def split_fracs(cfg: dict) -> tuple[float, float, float]:
    return (cfg["train_frac"], cfg["val_frac"], cfg["test_frac"])
