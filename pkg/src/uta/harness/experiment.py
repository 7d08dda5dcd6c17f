"""Depth-quality ranking of training samples and the component ablation sweep."""
from __future__ import annotations

import csv
import logging
import math
from pathlib import Path

import torch

from uta import data as D
from uta.core import Config
from uta.harness.checkpoint import load_checkpoint
from uta.harness.infer import evaluate
from uta.harness.model import model_input
from uta.harness.train import train

log = logging.getLogger(__name__)

TOP_FRACTIONS = (0.3, 0.5, 0.7, 1.0)

# (dac, spm, caf, gms, mls) per row of the component ablation, baseline first
ABLATION_ROWS = [
    (0, 0, 0, 0, 0),
    (1, 0, 0, 0, 0),
    (1, 1, 0, 0, 0),
    (0, 0, 1, 0, 0),
    (1, 0, 1, 0, 0),
    (1, 1, 1, 0, 0),
    (1, 1, 1, 1, 0),
    (1, 1, 1, 1, 1),
]


class MissingCheckpointError(FileNotFoundError):
    pass


@torch.no_grad()
def _predict_batch(model, variant, batch):
    model.eval()
    image, depth = model_input(variant, batch)
    return torch.sigmoid(model(image, depth=depth)["logits"])


def consistency_scores(samples, dual_model, depth_model, size) -> dict:
    """Per-sample MAE between depth-only and dual-input saliency predictions."""
    scores = {}
    for s in samples:
        batch = D.collate([s], size)
        if "depth" not in batch:
            raise ValueError(f"{s.id}: no depth map to score")
        a = _predict_batch(dual_model, "dual", batch)
        b = _predict_batch(depth_model, "depth_only", batch)
        scores[s.id] = float((a - b).abs().mean())
    return scores


def rank_ids(scores: dict) -> list:
    """Ascending score (most consistent first); ties broken by id."""
    return sorted(scores, key=lambda k: (scores[k], k))


def top_fraction_splits(ranked, base: D.SplitSpec, fractions=TOP_FRACTIONS) -> dict:
    """``{fraction: SplitSpec}`` keeping the first ceil(fraction * N) ranked training samples."""
    by_id = {}
    for dataset, sid in base.train:
        by_id.setdefault(sid, (dataset, sid))
    ordered = [by_id[s] for s in ranked if s in by_id]
    out = {}
    for frac in fractions:
        keep = ordered[: math.ceil(frac * len(ordered))]
        out[frac] = D.SplitSpec(keep, dict(base.test))
    return out


def depth_consistency_rank(samples, ckpt_dual, ckpt_depth_only, split=None, size=None, out_dir=None):
    """Rank training samples by depth-saliency consistency and emit top-k% splits."""
    for label, path in (("dual-input", ckpt_dual), ("depth-only", ckpt_depth_only)):
        if not path or not Path(path).is_file():
            raise MissingCheckpointError(f"missing {label} checkpoint: {path}")
    dual, _, _ = load_checkpoint(ckpt_dual, variant="dual")
    depth_only, _, _ = load_checkpoint(ckpt_depth_only, variant="depth_only")
    size = size or dual.cfg.base_size
    scores = consistency_scores(samples, dual, depth_only, size)
    ranked = rank_ids(scores)
    if split is None:
        split = D.SplitSpec([(s.source, s.id) for s in samples], {})
    splits = top_fraction_splits(ranked, split)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "depth_consistency.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rank", "id", "mae"])
            for r, sid in enumerate(ranked):
                w.writerow([r, sid, scores[sid]])
        for frac, spec in splits.items():
            spec.write(out_dir / f"split_top{int(round(frac * 100))}.txt")
    return ranked, scores, splits


def ablation_configs(cfg: Config) -> list:
    rows = []
    for dac, spm, caf, gms, mls in ABLATION_ROWS:
        rows.append(cfg.replace(use_dac=bool(dac), use_spm=bool(spm), use_caf=bool(caf),
                                use_gms=bool(gms), use_mls=bool(mls)))
    return rows


def run_ablation(cfg: Config, out_dir, samples=None, split=None) -> list:
    """Train and evaluate every ablation row; writes ``ablation.csv``."""
    out_dir = Path(out_dir)
    rows = []
    for i, row_cfg in enumerate(ablation_configs(cfg)):
        tag = f"{i}_{row_cfg.ablation_string()}"
        log.info("ablation row %s", tag)
        result = train(row_cfg, samples, out_dir / tag)
        reports = evaluate(None, row_cfg.test_roots, out_dir / tag / "eval", split, model=result.model)
        for r in reports:
            rows.append({"row": i, "config": row_cfg.ablation_string(), **r.row()})
    if rows:
        with open(out_dir / "ablation.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    return rows
