"""Batch command-line interface: ``mmbeam <command> [flags]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import config as C
from .dataio import generate_synthetic
from .harness import (
    ablate, build_model, evaluate, finetune, plot_curves, prepare_splits, pretrained_state, read_curves,
    run_pretrain, summarize_ablation, write_ablation_table, write_csv, write_pretrain_log,
)
from .model import load_checkpoint, save_checkpoint

logger = logging.getLogger("mmbeam")


class CliError(Exception):
    pass


def _cfg(args) -> dict:
    return C.load_config(args.config, {"seed": args.seed})


def _run_dir(args, create: bool = True) -> Path:
    run = Path(args.run_dir)
    if create:
        run.mkdir(parents=True, exist_ok=True)
    elif not run.is_dir():
        raise CliError(f"run directory {run} does not exist (check --run-dir)")
    return run


def _index_path(args) -> Path:
    p = Path(args.data_dir) / "index.csv"
    if not p.exists():
        raise CliError(f"no index.csv under {args.data_dir} (run `mmbeam gen-data` or check --data-dir)")
    return p


def _splits(args, cfg):
    return prepare_splits(_index_path(args), C.encoder_config(cfg), cfg["M"], (cfg["bs_lat"], cfg["bs_lon"]),
                          cfg["split_seed"], C.split_fracs(cfg))


def _snapshot(run: Path, cfg: dict) -> None:
    (run / "config.snapshot").write_text(C.dump_config(cfg))


def cmd_gen_data(args) -> int:
    cfg = _cfg(args)
    index = generate_synthetic(C.scene_config(cfg), args.data_dir)
    hist = np.bincount(index.labels, minlength=cfg["M"])
    print(f"index: {Path(args.data_dir) / 'index.csv'}")
    print(f"samples: {len(index)}  beams used: {int((hist > 0).sum())}/{cfg['M']}")
    print("label histogram: " + " ".join(str(int(c)) for c in hist))
    return 0


def cmd_pretrain(args) -> int:
    cfg = _cfg(args)
    run = _run_dir(args)
    _snapshot(run, cfg)
    enc_cfg, tcfg = C.encoder_config(cfg), C.train_config(cfg)
    sp = _splits(args, cfg)
    model = build_model(enc_cfg, cfg["M"], tcfg)
    log = run_pretrain(model, sp.train, sp.val, tcfg)
    write_pretrain_log(run / "pretrain_log.csv", log)
    save_checkpoint(run / "pretrain.ckpt", model, sp.normalizer, (cfg["bs_lat"], cfg["bs_lon"]),
                    {"stage": "pretrain"})
    print(f"pretrain checkpoint: {run / 'pretrain.ckpt'}")
    last = log.retrieval_top1[-1] if log.epoch else float("nan")
    print(f"RETRIEVAL_TOP1={last!r}")
    return 0


def cmd_finetune(args) -> int:
    cfg = _cfg(args)
    run = _run_dir(args)
    enc_cfg, tcfg = C.encoder_config(cfg), C.train_config(cfg)
    ck_path = run / "pretrain.ckpt"
    if tcfg.use_pretrain and not ck_path.exists():
        raise CliError(f"not pretrained: {ck_path} is missing; run `mmbeam pretrain --run-dir {run}` first "
                       "or set use_pretrain = false")
    _snapshot(run, cfg)
    sp = _splits(args, cfg)
    model = build_model(enc_cfg, cfg["M"], tcfg)
    if tcfg.use_pretrain:
        donor, _, _, _ = load_checkpoint(ck_path)
        model.load_state_dict(pretrained_state(donor), strict=False)
    torch.manual_seed(tcfg.seed)
    art = finetune(model, sp.train, sp.val, tcfg)
    plot_curves(art, run)
    save_checkpoint(run / "best.ckpt", model, sp.normalizer, (cfg["bs_lat"], cfg["bs_lon"]),
                    {"stage": "finetune", "best_epoch": art.best_epoch})
    print(f"best epoch {art.best_epoch} of {art.epochs_run}; checkpoint: {run / 'best.ckpt'}")
    print(f"DBA={art.val_dba[art.best_epoch - 1]!r}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _cfg(args)
    run = _run_dir(args, create=False)
    ck_path = run / "best.ckpt"
    if not ck_path.exists():
        hint = " (pretrain.ckpt exists: run `mmbeam finetune` first)" if (run / "pretrain.ckpt").exists() else ""
        raise CliError(f"no finetuned checkpoint at {ck_path}{hint}")
    model, _, _, _ = load_checkpoint(ck_path)
    sp = _splits(args, cfg)
    report = evaluate(model, sp.test, C.train_config(cfg).dba)
    (run / "test_report.json").write_text(report.to_json() + "\n")
    print("gate weights: " + ", ".join(f"{k}={v:.3f}" for k, v in report.extras["gate_mean"].items()))
    print(f"top1={report.top1!r} top3={report.top3!r}")
    print(f"DBA={report.score!r}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _cfg(args)
    run = _run_dir(args)
    _snapshot(run, cfg)
    sp = _splits(args, cfg)
    rows = ablate(sp, C.encoder_config(cfg), C.train_config(cfg), seeds=tuple(cfg["ablation_seeds"]))
    write_ablation_table(run / "ablation_table.csv", rows)
    summary = summarize_ablation(rows)
    write_csv(run / "ablation_summary.csv", ("variant", "mean_dba", "std_dba"),
              [(v, m, s) for v, (m, s) in summary.items()])
    for v, (m, s) in summary.items():
        print(f"{v:14s} {m:.4f} +- {s:.4f}")
    print(f"DBA={summary['full'][0]!r}")
    return 0


def cmd_plot(args) -> int:
    run = _run_dir(args, create=False)
    if not (run / "finetune_log.csv").exists():
        raise CliError(f"no finetune_log.csv in {run}; run `mmbeam finetune` first")
    art = read_curves(run)
    paths = plot_curves(art, run)
    for name, p in paths.items():
        print(f"{name}: {p}")
    return 0


COMMANDS = {
    "gen-data": (cmd_gen_data, "generate the synthetic multimodal V2I dataset"),
    "pretrain": (cmd_pretrain, "contrastive image/LiDAR pretraining"),
    "finetune": (cmd_finetune, "supervised finetuning with early stopping"),
    "evaluate": (cmd_evaluate, "score the best checkpoint on the test split"),
    "ablate": (cmd_ablate, "run the ablation matrix"),
    "plot": (cmd_plot, "redraw loss and DBA curves from a run directory"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmbeam", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text,
                           formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        p.add_argument("--config", default=None, help="flat key = value config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--data-dir", default="data", help="dataset directory holding index.csv")
        p.add_argument("--run-dir", default="run", help="directory for logs and checkpoints")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    torch.set_num_threads(1)
    try:
        return COMMANDS[args.command][0](args)
    except (CliError, C.ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
