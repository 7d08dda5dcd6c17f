"""RGB-only prediction and dataset evaluation."""
from __future__ import annotations

import logging
from pathlib import Path

import cv2
import numpy as np
import torch
import torch.nn.functional as F

from uta import data as D
from uta.core import resize_bilinear
from uta.harness.checkpoint import load_checkpoint
from uta.metrics import Evaluator, write_report_csv

log = logging.getLogger(__name__)


@torch.no_grad()
def predict_array(model, rgb: np.ndarray, resize: int | None = None) -> np.ndarray:
    """Saliency probabilities (H, W) for an 8-bit RGB image (H, W, 3).

    With ``resize`` the image is resized to ``resize`` x ``resize`` and the
    map resized back; otherwise the image is edge-padded to the
    backbone's stride multiple and the map cropped back.
    """
    model.eval()
    h, w = rgb.shape[:2]
    x = torch.from_numpy(D.normalize_rgb(rgb))[None]
    m = model.backbone.multiple
    if resize:
        x = resize_bilinear(x, resize, resize)
    elif h % m or w % m:
        ph, pw = -h % m, -w % m
        log.warning("input %dx%d not divisible by %d; padding by (%d, %d)", h, w, m, ph, pw)
        x = F.pad(x, (0, pw, 0, ph), mode="replicate")
    logits = model(x)["logits"]
    if resize:
        logits = resize_bilinear(logits, h, w)
    return torch.sigmoid(logits[0, 0, :h, :w]).numpy()


def to_png_array(prob: np.ndarray) -> np.ndarray:
    return np.clip(np.round(prob * 255.0), 0, 255).astype(np.uint8)


def predict(ckpt, image_path, out_path, resize=None, model=None) -> Path:
    """Write an 8-bit saliency map for one RGB image. Never touches depth files."""
    if model is None:
        model, _, _ = load_checkpoint(ckpt)
    rgb = D.read_rgb(image_path)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    cv2.imwrite(str(out_path), to_png_array(predict_array(model, rgb, resize)))
    return out_path


def predict_dir(ckpt, root, out_dir, ids=None, resize=None, model=None) -> list:
    if model is None:
        model, _, _ = load_checkpoint(ckpt)
    root = Path(root)
    ids = ids if ids is not None else D.list_ids(root)
    paths = []
    for sid in ids:
        src = D._find(root / "rgb", sid)
        if src is None:
            raise D.SampleLoadError(sid, "missing rgb image")
        paths.append(predict(None, src, Path(out_dir) / f"{sid}.png", resize, model))
    return paths


def evaluate_predictions(pred_dir, root, ids=None, name=None):
    """Score saved 8-bit maps against ``<root>/mask``."""
    root = Path(root)
    ids = ids if ids is not None else D.list_ids(root)
    ev = Evaluator(name or root.name)
    for sid in ids:
        pred = cv2.imread(str(Path(pred_dir) / f"{sid}.png"), cv2.IMREAD_GRAYSCALE)
        if pred is None:
            raise D.SampleLoadError(sid, f"missing prediction in {pred_dir}")
        mask_path = D._find(root / "mask", sid)
        if mask_path is None:
            raise D.SampleLoadError(sid, "missing mask")
        ev.step(pred, D.read_mask(mask_path))
    return ev.report()


def evaluate(ckpt, roots, out_dir, split=None, resize=None, model=None) -> list:
    """Predict every test image of each dataset root, then write ``report.csv`` and curves."""
    if model is None:
        model, _, _ = load_checkpoint(ckpt)
    if resize is None:
        resize = model.cfg.base_size
    out_dir = Path(out_dir)
    reports = []
    for root in roots:
        root = Path(root)
        ids = split.test.get(root.name) if split is not None else None
        pred_dir = out_dir / "pred" / root.name
        predict_dir(None, root, pred_dir, ids, resize, model)
        report = evaluate_predictions(pred_dir, root, ids)
        report.write_curves(out_dir / f"curves_{root.name}.csv")
        reports.append(report)
        log.info("%s: %s", root.name, report.row())
    write_report_csv(reports, out_dir / "report.csv")
    (out_dir / "report.txt").write_text("".join(f"[{r.name}]\n{r.to_text()}" for r in reports))
    return reports
