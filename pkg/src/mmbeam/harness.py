"""Pretrain / finetune / test orchestration, ablations and curve logging."""
from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .dataio import GpsNormalizer, fit_gps_normalizer, load_index, split
from .contrastive import ContrastiveConfig, PretrainLog, contrastive_params, pretrain
from .encoders import EncoderConfig
from .fusion import MODALITIES, ce_loss
from .metrics import DbaConfig, DbaReport, dba_score, rank_batch
from .model import BeamPredictor, PreparedData, recalibrate_batchnorm

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-3
    batch_size: int = 64
    early_stop_patience: int = 10
    seed: int = 0
    weight_decay: float = 1e-4
    gate_order: str = "after"
    use_pretrain: bool = True
    use_gps_text: bool = True
    modality_mask: tuple[str, ...] = MODALITIES
    pretrain_epochs: int = 30
    pretrain_lr: float = 1e-3
    contrastive: ContrastiveConfig = ContrastiveConfig()
    dba: DbaConfig = DbaConfig()

    def __post_init__(self):
        object.__setattr__(self, "modality_mask", tuple(self.modality_mask))
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")
        if not self.lr > 0 or self.weight_decay < 0:
            raise ValueError("lr must be > 0 and weight_decay >= 0")
        if not self.modality_mask:
            raise ValueError("modality_mask must not be empty")
        if set(self.modality_mask) - set(MODALITIES):
            raise ValueError(f"modality_mask entries must come from {MODALITIES}")
        if self.gate_order not in ("before", "after"):
            raise ValueError("gate_order must be 'before' or 'after'")


@dataclass
class RunArtifacts:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_dba: list[float] = field(default_factory=list)
    best_epoch: int = 0
    best_state: dict | None = None
    test_report: DbaReport | None = None
    stopped_early: bool = False

    @property
    def epochs_run(self) -> int:
        return len(self.val_dba)


class EarlyStopping:
    """Tracks the best validation score; ``step`` returns True when patience runs out."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -math.inf
        self.best_epoch = 0
        self.bad = 0

    def step(self, epoch: int, score: float) -> bool:
        if score > self.best:
            self.best, self.best_epoch, self.bad = score, epoch, 0
            return False
        self.bad += 1
        return self.bad >= self.patience


def seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)


def build_model(enc_cfg: EncoderConfig, M: int, cfg: TrainConfig) -> BeamPredictor:
    """Fresh model initialized from ``cfg.seed``.

    Every variant draws its parameters in the same order, so for one seed the
    initial weights agree across variants.
    """
    seed_everything(cfg.seed)
    return BeamPredictor(enc_cfg, M, cfg.gate_order, cfg.modality_mask, cfg.use_gps_text)


def pretrained_state(model: BeamPredictor) -> dict:
    """Vision and LiDAR parameters (the contrastively trained part) as a state dict."""
    keep = ("encoders.vision.", "encoders.lidar.")
    return {k: v.clone() for k, v in model.state_dict().items() if k.startswith(keep)}


def run_pretrain(model: BeamPredictor, train: PreparedData, val: PreparedData | None,
                 cfg: TrainConfig) -> PretrainLog:
    return pretrain(model, train, cfg.pretrain_epochs, lr=cfg.pretrain_lr, weight_decay=cfg.weight_decay,
                    batch_size=cfg.batch_size, cfg=cfg.contrastive, held_out=val, seed=cfg.seed)


def _epoch_loss(model: BeamPredictor, data: PreparedData) -> float:
    model.eval()
    total = 0.0
    with torch.no_grad():
        for b in data.batches(256):
            logits, _ = model(b)
            total += float(ce_loss(logits, b.labels)) * b.size
    return total / len(data)


def evaluate(model: BeamPredictor, data: PreparedData, dba_cfg: DbaConfig | None = None) -> DbaReport:
    """Rank beams per sample by predicted probability and score them."""
    dba_cfg = dba_cfg or DbaConfig()
    if len(data) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    probs, alpha = model.predict_proba(data)
    report = dba_score(data.labels.numpy(), rank_batch(probs, dba_cfg.K), dba_cfg)
    gate_mean = {m: float(a) for m, a in zip(MODALITIES, alpha.mean(axis=0))}
    report.extras["gate_mean"] = gate_mean
    logger.info("mean gate weights %s", gate_mean)
    return report


def finetune(model: BeamPredictor, train: PreparedData, val: PreparedData, cfg: TrainConfig,
             val_score_fn: Callable[[int, BeamPredictor], float] | None = None) -> RunArtifacts:
    """Supervised training with early stopping on validation DBA.

    BatchNorm statistics are re-estimated on ``train`` before each validation.
    The best-scoring parameters are restored into ``model`` before returning.
    ``val_score_fn(epoch, model)`` replaces the validation DBA when given.
    """
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    stopper = EarlyStopping(cfg.early_stop_patience)
    art = RunArtifacts()
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = torch.randperm(len(train), generator=gen)
        total = 0.0
        for b in train.batches(cfg.batch_size, order, drop_singleton=True):
            logits, _ = model(b)
            loss = ce_loss(logits, b.labels)
            if not torch.isfinite(loss):
                raise FloatingPointError(f"non-finite classification loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * b.size
        art.train_loss.append(total / len(train))
        recalibrate_batchnorm(model, train, cfg.batch_size)
        art.val_loss.append(_epoch_loss(model, val))
        if val_score_fn is not None:
            score = float(val_score_fn(epoch, model))
        else:
            score = evaluate(model, val, cfg.dba).score
        art.val_dba.append(score)
        stop = stopper.step(epoch, score)
        if stopper.best_epoch == epoch:
            art.best_state = copy.deepcopy(model.state_dict())
        logger.info("epoch %d train %.4f val %.4f dba %.4f", epoch, art.train_loss[-1], art.val_loss[-1], score)
        if stop:
            art.stopped_early = True
            break
    art.best_epoch = stopper.best_epoch
    model.load_state_dict(art.best_state)
    return art


@dataclass
class Splits:
    train: PreparedData
    val: PreparedData
    test: PreparedData
    M: int
    normalizer: GpsNormalizer | None = None


def prepare_splits(index_path, enc_cfg: EncoderConfig, M: int, bs_position, split_seed: int = 0,
                   fracs=(0.8, 0.1, 0.1)) -> Splits:
    """Load an index, split it, fit the GPS normalizer on train and tensorize all three parts."""
    index = load_index(index_path, M=M)
    parts = split(index, fracs, split_seed)
    norm = fit_gps_normalizer(parts[0])
    train, val, test = (PreparedData.from_index(p, enc_cfg, norm, bs_position) for p in parts)
    return Splits(train, val, test, M, norm)


def run_full(splits: Splits, enc_cfg: EncoderConfig, cfg: TrainConfig,
             pretrain_cache: dict | None = None) -> tuple[BeamPredictor, RunArtifacts, PretrainLog | None]:
    """Optional contrastive pretraining, then finetuning and a test-split evaluation."""
    model = build_model(enc_cfg, splits.M, cfg)
    plog = None
    if cfg.use_pretrain and set(cfg.modality_mask) & {"image", "lidar"}:
        key = cfg.seed
        if pretrain_cache is not None and key in pretrain_cache:
            state, plog = pretrain_cache[key]
        else:
            donor = build_model(enc_cfg, splits.M, replace(cfg, modality_mask=MODALITIES, use_gps_text=True))
            plog = run_pretrain(donor, splits.train, splits.val, cfg)
            state = pretrained_state(donor)
            if pretrain_cache is not None:
                pretrain_cache[key] = (state, plog)
        model.load_state_dict(state, strict=False)
    torch.manual_seed(cfg.seed)
    art = finetune(model, splits.train, splits.val, cfg)
    art.test_report = evaluate(model, splits.test, cfg.dba)
    return model, art, plog


ABLATION_VARIANTS = ("full", "no-pretrain", "no-gps-text", "image-only", "lidar-only", "position-only")


def variant_config(base: TrainConfig, variant: str) -> TrainConfig:
    if variant == "full":
        return base
    if variant == "no-pretrain":
        return replace(base, use_pretrain=False)
    if variant == "no-gps-text":
        return replace(base, use_gps_text=False)
    if variant == "image-only":
        return replace(base, modality_mask=("image",))
    if variant == "lidar-only":
        return replace(base, modality_mask=("lidar",))
    if variant == "position-only":
        return replace(base, modality_mask=("gps",))
    raise ValueError(f"unknown ablation variant {variant!r}")


@dataclass
class AblationRow:
    variant: str
    seed: int
    report: DbaReport | None
    error: str | None = None


def ablate(splits: Splits, enc_cfg: EncoderConfig, base: TrainConfig, seeds=(0, 1, 2, 3, 4),
           variants=ABLATION_VARIANTS) -> list[AblationRow]:
    """Run every variant for every seed on the same splits.

    Pretraining depends only on the seed, so it runs once per seed and is
    shared by all variants that use it.  A failing run is recorded and the
    matrix continues.
    """
    rows = []
    for seed in seeds:
        cache: dict = {}
        for variant in variants:
            cfg = replace(variant_config(base, variant), seed=seed)
            try:
                _, art, _ = run_full(splits, enc_cfg, cfg, cache)
                rows.append(AblationRow(variant, seed, art.test_report))
                logger.info("ablation %s seed %d dba %.4f", variant, seed, art.test_report.score)
            except Exception as exc:  # noqa: BLE001 - one failed variant must not stop the matrix
                logger.error("ablation %s seed %d failed: %s", variant, seed, exc)
                rows.append(AblationRow(variant, seed, None, repr(exc)))
    return rows


def summarize_ablation(rows: list[AblationRow]) -> dict[str, tuple[float, float]]:
    """Mean and (population) std of test DBA per variant, in first-seen order."""
    out: dict[str, list[float]] = {}
    for r in rows:
        out.setdefault(r.variant, [])
        if r.report is not None:
            out[r.variant].append(r.report.score)
    return {v: (float(np.mean(s)) if s else math.nan, float(np.std(s)) if s else math.nan)
            for v, s in out.items()}


# ------------------------------------------------------------------ CSV output

def fmt(v: float) -> str:
    return repr(float(v))


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) if isinstance(x, float) else x for x in row])
    return path


def write_pretrain_log(path, log: PretrainLog) -> Path:
    return write_csv(path, ("epoch", "mean_loss", "retrieval_top1"), log.rows())


def write_ablation_table(path, rows: list[AblationRow]) -> Path:
    return write_csv(path, ("variant", "seed", "dba", "top1"),
                     [(r.variant, r.seed, r.report.score if r.report else math.nan,
                       r.report.top1 if r.report else math.nan) for r in rows])


def plot_curves(art: RunArtifacts, out_dir) -> dict[str, Path]:
    """Write ``finetune_log.csv`` and ``dba_log.csv``, plus PNG plots when matplotlib works."""
    if not art.val_dba:
        raise ValueError("no curves to plot")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    epochs = list(range(1, len(art.val_dba) + 1))
    paths = {
        "finetune_log": write_csv(out / "finetune_log.csv", ("epoch", "train_loss", "val_loss"),
                                  zip(epochs, art.train_loss, art.val_loss)),
        "dba_log": write_csv(out / "dba_log.csv", ("epoch", "val_dba"), zip(epochs, art.val_dba)),
    }
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except Exception as exc:  # noqa: BLE001 - plots are best-effort
        logger.warning("skipping plots: %s", exc)
        return paths
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(epochs, art.train_loss, label="train")
    ax.plot(epochs, art.val_loss, label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("cross-entropy")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "loss_curve.png", dpi=120)
    plt.close(fig)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(epochs, art.val_dba, color="tab:green")
    ax.set_xlabel("epoch")
    ax.set_ylabel("validation DBA")
    fig.tight_layout()
    fig.savefig(out / "dba_curve.png", dpi=120)
    plt.close(fig)
    paths["loss_plot"] = out / "loss_curve.png"
    paths["dba_plot"] = out / "dba_curve.png"
    return paths


def read_curves(out_dir) -> RunArtifacts:
    out = Path(out_dir)
    art = RunArtifacts()
    with open(out / "finetune_log.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            art.train_loss.append(float(row["train_loss"]))
            art.val_loss.append(float(row["val_loss"]))
    with open(out / "dba_log.csv", newline="") as fh:
        art.val_dba = [float(r["val_dba"]) for r in csv.DictReader(fh)]
    return art
