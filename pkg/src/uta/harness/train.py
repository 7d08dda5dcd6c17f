"""Training loop: multi-scale batches, full objective, SGD with warm-up/linear decay."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from uta import data as D
from uta.core import Config, sigmoid
from uta.depthbranch import dec_weights
from uta.harness.checkpoint import load_checkpoint, save_checkpoint
from uta.harness.model import build_model, model_input
from uta.harness.schedule import lr_schedule
from uta.losses import LossBundle, bce_loss, dec_loss, depth_loss, edge_loss, gms_loss, iou_loss, mls_loss

log = logging.getLogger(__name__)

LOG_FIELDS = ["epoch", "step", "scale", "lr", "l_bce", "l_iou", "l_depth", "l_edge", "l_dec", "l_mls",
              "l_gms", "l_sum", "mean_e"]


class TrainingError(RuntimeError):
    pass


def make_optimizer(model, cfg: Config):
    bb = {id(p) for p in model.backbone_parameters()}
    groups = [
        {"params": [p for p in model.parameters() if id(p) in bb], "lr": cfg.lr_backbone, "max_lr": cfg.lr_backbone},
        {"params": [p for p in model.parameters() if id(p) not in bb], "lr": cfg.lr_head, "max_lr": cfg.lr_head},
    ]
    return torch.optim.SGD(groups, lr=cfg.lr_head, momentum=cfg.momentum, weight_decay=cfg.weight_decay)


def compute_losses(cfg: Config, out: dict, batch: dict, variant="uta"):
    """Assemble the objective for one batch; returns ``(LossBundle, error weights or None)``."""
    y = batch["mask"]
    pos_only = cfg.bce_positive_only
    zero = out["logits"].sum() * 0.0
    e = None
    l_depth = zero
    if "p_d" in out:
        l_depth = depth_loss(out["p_d"], batch["depth"])
        e = dec_weights(out["p_d"], batch["depth"], cfg.error_window)
    l_edge = edge_loss(out["edges"], batch["edge"], pos_only) if out["edges"] else zero
    p_final = sigmoid(out["logits"])
    if cfg.use_mls:
        l_mls = mls_loss([sigmoid(s) for s in out["sides"]], y, e, cfg.lambdas, pos_only)
    else:
        l_mls = zero
    l_gms = gms_loss(p_final, y, e, pos_only)
    bundle = LossBundle(
        l_depth=l_depth, l_edge=l_edge, l_mls=l_mls, l_gms=l_gms,
        l_bce=bce_loss(p_final, y, pos_only).detach(), l_iou=iou_loss(p_final, y).detach(),
        l_dec=dec_loss(p_final, y, e, pos_only).detach() if e is not None else 0.0,
    )
    return bundle, e


@dataclass
class EpochStats:
    epoch: int
    l_sum: float
    mean_e: float
    steps: int


@dataclass
class TrainResult:
    model: torch.nn.Module
    checkpoint: Path | None
    history: list = field(default_factory=list)


def _rng_state(rng):
    return rng.bit_generator.state


def _set_rng_state(rng, state):
    rng.bit_generator.state = state


def load_training_samples(cfg: Config, variant="uta") -> list:
    split = D.SplitSpec.read(cfg.split_file) if cfg.split_file else None
    samples = []
    for root in cfg.train_roots:
        root = Path(root)
        ids = [i for d, i in split.train if d == root.name] if split else None
        if cfg.depth_source == "estimated":
            part = D.load_dataset(root, ids, depth_dir=None, num_workers=cfg.num_workers, edge_kernel=cfg.edge_kernel)
            part = D.ingest_estimated_depth(part, root)
        else:
            part = D.load_dataset(root, ids, num_workers=cfg.num_workers, edge_kernel=cfg.edge_kernel)
        samples += part
    if not samples:
        raise TrainingError("no training samples; set train_roots")
    log.info("loaded %d training samples (depth: %s)", len(samples), cfg.depth_source)
    return samples


def train(cfg: Config, samples=None, out_dir=None, variant="uta", resume=None, epochs=None,
          save_every=1, log_every=0) -> TrainResult:
    """Train ``variant`` on ``samples`` (loaded from ``cfg`` when omitted).

    ``resume`` continues from a checkpoint written by an earlier call;
    ``epochs`` overrides ``cfg.epochs`` as the stopping epoch (the schedule
    still spans ``cfg.epochs``).
    """
    out_dir = Path(out_dir or cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if samples is None:
        samples = load_training_samples(cfg, variant)
    needs_depth = variant != "uta" or cfg.use_dac
    if needs_depth and any(s.depth is None for s in samples):
        raise TrainingError("training needs depth for every sample")

    rng = np.random.default_rng(cfg.seed)
    if resume:
        model, optimizer, meta = load_checkpoint(resume, lambda m: make_optimizer(m, cfg), variant)
        start_epoch, step = meta["epoch"], meta["step"]
        _set_rng_state(rng, meta["rng_state"])
    else:
        model = build_model(cfg, variant)
        optimizer = make_optimizer(model, cfg)
        start_epoch, step = 0, 0
    log.info("training %s [%s] for %d epochs", variant, cfg.ablation_string(), cfg.epochs)

    n = len(samples)
    per_step = cfg.batch_size * cfg.accum_steps
    steps_per_epoch = math.ceil(n / per_step)
    total_steps = steps_per_epoch * cfg.epochs
    stop_epoch = cfg.epochs if epochs is None else min(epochs, cfg.epochs)

    log_path = out_dir / "train_log.csv"
    fresh = not (resume and log_path.exists())
    history, ckpt = [], None
    with open(log_path, "w" if fresh else "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        if fresh:
            writer.writeheader()
        for epoch in range(start_epoch, stop_epoch):
            model.train()
            order = rng.permutation(n)
            sums, es, count = 0.0, 0.0, 0
            for s0 in range(0, n, per_step):
                chunk = order[s0:s0 + per_step]
                scale = cfg.scales[int(rng.integers(len(cfg.scales)))]
                k = cfg.scales.index(scale)
                for g in optimizer.param_groups:
                    g["lr"] = lr_schedule(step, total_steps, g["max_lr"], cfg.warmup_frac)
                optimizer.zero_grad(set_to_none=True)
                micro = [chunk[i:i + cfg.batch_size] for i in range(0, len(chunk), cfg.batch_size)]
                rows = []
                for idx in micro:
                    batch_samples = [samples[i] for i in idx]
                    if cfg.augment:
                        batch_samples = [D.augment(s, rng, flip_prob=cfg.flip_prob, min_area=cfg.crop_min_area)
                                         for s in batch_samples]
                    batch = D.collate(batch_samples, scale, cfg.edge_kernel)
                    image, depth = model_input(variant, batch)
                    out = model(image, scale_index=k, input_size=scale, depth=depth)
                    bundle, e = compute_losses(cfg, out, batch, variant)
                    l_sum = bundle.l_sum
                    if not torch.isfinite(l_sum):
                        dump = out_dir / "nan_batch.txt"
                        dump.write_text("\n".join(batch["ids"]) + "\n")
                        raise TrainingError(
                            f"non-finite loss at epoch {epoch} step {step}; batch ids in {dump}: {batch['ids']}")
                    (l_sum / len(micro)).backward()
                    rows.append((bundle.as_floats(), float(e.mean()) if e is not None else 0.0))
                optimizer.step()
                step += 1
                vals = {key: float(np.mean([r[0][key] for r in rows])) for key in rows[0][0]}
                mean_e = float(np.mean([r[1] for r in rows]))
                writer.writerow({"epoch": epoch, "step": step, "scale": scale,
                                 "lr": optimizer.param_groups[1]["lr"], **vals, "mean_e": mean_e})
                sums += vals["l_sum"]
                es += mean_e
                count += 1
            stats = EpochStats(epoch + 1, sums / count, es / count, count)
            history.append(stats)
            if log_every and (epoch + 1) % log_every == 0:
                log.info("epoch %d: l_sum %.4f mean_e %.4f", stats.epoch, stats.l_sum, stats.mean_e)
            fh.flush()
            if save_every and ((epoch + 1) % save_every == 0 or epoch + 1 == stop_epoch):
                ckpt = out_dir / "last.utaw"
                save_checkpoint(ckpt, model, optimizer, epoch + 1, step, _rng_state(rng), variant)
    return TrainResult(model, ckpt, history)
