"""Saliency evaluation: threshold curves, F-measures, weighted F-measure, MAE.

Maps are quantized to 8 bits. Curve index ``t`` runs over 0..255 and a pixel
counts as salient at index ``t`` when its value is >= max(t, 1), so a zero
score is never salient. Precision is 1 when nothing is predicted salient;
recall is 1 when the ground truth is empty.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from uta.core import ShapeError

BETA2 = 0.3
N_THRESH = 256


def to_uint8(p) -> np.ndarray:
    p = np.asarray(p)
    if p.dtype == np.uint8:
        return p
    return np.clip(np.round(p.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)


def _check(p, y):
    if p.shape != y.shape:
        raise ShapeError(f"map {p.shape} vs mask {y.shape}")


def confusion_curves(p8, y):
    """TP, FP, FN counts for every curve index, via cumulative histograms."""
    p8 = to_uint8(p8).ravel()
    y = np.asarray(y).ravel() > 0
    fg = np.bincount(p8[y], minlength=256)
    bg = np.bincount(p8[~y], minlength=256)
    # tp_ge[v] = count of fg pixels with value >= v
    tp_ge = np.cumsum(fg[::-1])[::-1]
    fp_ge = np.cumsum(bg[::-1])[::-1]
    idx = np.maximum(np.arange(N_THRESH), 1)
    tp, fp = tp_ge[idx], fp_ge[idx]
    fn = y.sum() - tp
    return tp, fp, fn


def pr_at_thresholds(p8, y):
    """Per-image precision and recall arrays of length 256."""
    p8, y = np.asarray(p8), np.asarray(y)
    _check(p8, y)
    tp, fp, fn = confusion_curves(p8, y)
    tp, fp, fn = (a.astype(np.float64) for a in (tp, fp, fn))
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 1.0)
        recall = np.where(tp + fn > 0, tp / (tp + fn), 1.0)
    return precision, recall


def f_beta(precision, recall, beta2=BETA2):
    precision = np.asarray(precision, dtype=np.float64)
    recall = np.asarray(recall, dtype=np.float64)
    denom = beta2 * precision + recall
    with np.errstate(invalid="ignore", divide="ignore"):
        f = np.where(denom > 0, (1 + beta2) * precision * recall / denom, 0.0)
    return f if f.ndim else float(f)


def f_max(f_curve):
    return float(np.max(f_curve))


def f_mean(f_curve):
    return float(np.mean(f_curve))


def f_adaptive(p8, y, beta2=BETA2):
    """F at a single threshold of twice the map's mean (capped at 255)."""
    p8, y = to_uint8(p8), np.asarray(y) > 0
    thr = min(2.0 * p8.mean(), 255.0)
    pred = p8 >= max(thr, 1.0)
    tp = float((pred & y).sum())
    prec = tp / pred.sum() if pred.any() else 1.0
    rec = tp / y.sum() if y.any() else 1.0
    return f_beta(prec, rec, beta2)


def mae(p, y):
    p = np.asarray(p, dtype=np.float64)
    if p.max(initial=0) > 1.0:
        p = p / 255.0
    y = (np.asarray(y) > 0).astype(np.float64)
    _check(p, y)
    return float(np.abs(p - y).mean())


def _gaussian_kernel(size=7, sigma=5.0):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2 * sigma**2))
    return g / g.sum()


def f_weighted(p, y, beta2=1.0, eps=np.finfo(np.float64).eps):
    """Weighted F-measure with distance-dependent error weighting.

    1. E = |p - y| with p in [0, 1].
    2. Background pixels take the error of their nearest foreground pixel
       (Euclidean distance transform with indices).
    3. The propagated error is smoothed with a 7x7 Gaussian (sigma 5, zero
       padding); inside the object each pixel keeps min(E, smoothed).
    4. Background errors are scaled by 2 - exp(ln(0.5) / 5 * distance).
    5. Weighted TP/FP give precision and recall; combine with ``beta2``.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.max(initial=0) > 1.0:
        p = p / 255.0
    gt = np.asarray(y) > 0
    _check(p, gt)
    if not gt.any():
        # nothing to find: score 1 only for an all-zero map
        return 1.0 if not (p > 0).any() else 0.0
    err = np.abs(p - gt)
    dist, (iy, ix) = ndimage.distance_transform_edt(~gt, return_indices=True)
    et = err.copy()
    bg = ~gt
    et[bg] = err[iy[bg], ix[bg]]
    ea = ndimage.correlate(et, _gaussian_kernel(), mode="constant", cval=0.0)
    min_e = err.copy()
    swap = gt & (ea < err)
    min_e[swap] = ea[swap]
    b = np.ones_like(err)
    b[bg] = 2.0 - np.exp(np.log(0.5) / 5.0 * dist[bg])
    ew = min_e * b
    tpw = gt.sum() - ew[gt].sum()
    fpw = ew[bg].sum()
    recall = 1.0 - ew[gt].mean()
    precision = tpw / (tpw + fpw + eps)
    return float((1 + beta2) * recall * precision / (recall + beta2 * precision + eps))


@dataclass
class MetricsReport:
    name: str
    f_max: float
    f_mean: float
    f_weighted: float
    mae: float
    precision: np.ndarray = field(repr=False)
    recall: np.ndarray = field(repr=False)
    f_curve: np.ndarray = field(repr=False)
    f_adaptive: float = float("nan")
    count: int = 0

    def row(self) -> dict:
        return {"dataset": self.name, "count": self.count, "f_max": self.f_max, "f_mean": self.f_mean,
                "f_weighted": self.f_weighted, "mae": self.mae, "f_adaptive": self.f_adaptive}

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.row().items())

    def write_curves(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "precision", "recall", "f"])
            for t in range(N_THRESH):
                w.writerow([t, self.precision[t], self.recall[t], self.f_curve[t]])


class Evaluator:
    """Accumulates per-image curves; ``report`` averages over images."""

    def __init__(self, name="dataset", beta2=BETA2):
        self.name, self.beta2 = name, beta2
        self.precisions, self.recalls, self.fcurves = [], [], []
        self.maes, self.fws, self.fadp = [], [], []

    def step(self, p, y):
        p8 = to_uint8(p)
        y = np.asarray(y) > 0
        prec, rec = pr_at_thresholds(p8, y)
        self.precisions.append(prec)
        self.recalls.append(rec)
        self.fcurves.append(f_beta(prec, rec, self.beta2))
        self.maes.append(mae(p8 / 255.0, y))
        self.fws.append(f_weighted(p8 / 255.0, y))
        self.fadp.append(f_adaptive(p8, y, self.beta2))

    def report(self) -> MetricsReport:
        if not self.fcurves:
            raise ValueError(f"no images evaluated for {self.name}")
        f_curve = np.mean(self.fcurves, axis=0)
        return MetricsReport(
            name=self.name,
            f_max=f_max(f_curve),
            f_mean=f_mean(f_curve),
            f_weighted=float(np.mean(self.fws)),
            mae=float(np.mean(self.maes)),
            precision=np.mean(self.precisions, axis=0),
            recall=np.mean(self.recalls, axis=0),
            f_curve=f_curve,
            f_adaptive=float(np.mean(self.fadp)),
            count=len(self.fcurves),
        )


def write_report_csv(reports, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(reports[0].row()))
        w.writeheader()
        for r in reports:
            w.writerow(r.row())
