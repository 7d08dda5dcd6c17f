"""Dataset loading, splits, augmentation and multi-scale batching.

Directory layout of one dataset root::

    <root>/rgb/<id>.{jpg,png,bmp}     8-bit RGB
    <root>/depth/<id>.png             8- or 16-bit grayscale (captured depth)
    <root>/depth_est/<id>.png         externally estimated depth (RGB-only sets)
    <root>/mask/<id>.png              8-bit mask, foreground >= 128

Split files hold one ``<split> <dataset> <id>`` triple per line, where
``<split>`` is ``train`` or ``test``; ``#`` starts a comment.
"""
from __future__ import annotations

import logging
import math
from contextlib import contextmanager
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import cv2
import numpy as np
import torch

from uta.core import ConfigError, normalize_depth, resize_bilinear
from uta.spm import make_edge_target

log = logging.getLogger(__name__)

IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)
IMAGE_EXTS = (".jpg", ".jpeg", ".png", ".bmp")


class SampleLoadError(IOError):
    def __init__(self, sample_id, msg):
        super().__init__(f"{sample_id}: {msg}")
        self.sample_id = sample_id


@dataclass
class Sample:
    id: str
    rgb: np.ndarray  # (3, H, W) float32, channel-normalized
    depth: np.ndarray | None  # (1, H, W) float32 in [EPS_D, 1]
    mask: np.ndarray  # (1, H, W) float32 in {0, 1}
    edge: np.ndarray  # (1, H, W) float32 in {0, 1}
    source: str = ""
    depth_kind: str = "captured"
    depth_bits: int = 0

    @property
    def size(self):
        return self.mask.shape[-2:]


@dataclass
class SplitSpec:
    train: list = field(default_factory=list)  # [(dataset, id)]
    test: dict = field(default_factory=dict)  # dataset -> [id]

    def __post_init__(self):
        test_pairs = {(d, i) for d, ids in self.test.items() for i in ids}
        overlap = test_pairs & set(self.train)
        if overlap:
            raise ValueError(f"train/test overlap, e.g. {sorted(overlap)[:3]}")

    def subset(self, keep_ids) -> SplitSpec:
        keep = set(keep_ids)
        return SplitSpec([p for p in self.train if p in keep], dict(self.test))

    def write(self, path):
        lines = [f"train {d} {i}\n" for d, i in self.train]
        lines += [f"test {d} {i}\n" for d, ids in self.test.items() for i in ids]
        Path(path).write_text("".join(lines))

    @classmethod
    def read(cls, path) -> SplitSpec:
        train, test = [], {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3 or parts[0] not in ("train", "test"):
                raise ValueError(f"{path}:{lineno}: expected '<train|test> <dataset> <id>'")
            kind, dataset, sid = parts
            if kind == "train":
                train.append((dataset, sid))
            else:
                test.setdefault(dataset, []).append(sid)
        return cls(train, test)


RGBD_TRAIN_COUNTS = {"NJUD": 1500, "NLPR": 700}


def make_split(ids_by_dataset: dict, train_counts=None, seed=0) -> SplitSpec:
    """Seeded split: draw ``train_counts[d]`` training ids per dataset, rest to test.

    Datasets without a count are test-only.
    """
    train_counts = RGBD_TRAIN_COUNTS if train_counts is None else train_counts
    rng = np.random.default_rng(seed)
    train, test = [], {}
    for dataset in sorted(ids_by_dataset):
        ids = sorted(ids_by_dataset[dataset])
        n = train_counts.get(dataset, 0)
        if n > len(ids):
            raise ValueError(f"{dataset}: {n} train ids requested, {len(ids)} available")
        chosen = set(rng.choice(len(ids), size=n, replace=False).tolist()) if n else set()
        train += [(dataset, ids[k]) for k in sorted(chosen)]
        rest = [ids[k] for k in range(len(ids)) if k not in chosen]
        if rest:
            test[dataset] = rest
    return SplitSpec(train, test)


_read_log = None


@contextmanager
def audit_reads():
    """Collect the path of every image file read inside the block."""
    global _read_log
    previous, _read_log = _read_log, []
    try:
        yield _read_log
    finally:
        _read_log = previous


def _imread(path, flags):
    if _read_log is not None:
        _read_log.append(str(path))
    return cv2.imread(str(path), flags)


def _find(folder: Path, stem: str):
    for ext in IMAGE_EXTS:
        p = folder / f"{stem}{ext}"
        if p.is_file():
            return p
    return None


def list_ids(root) -> list:
    folder = Path(root) / "rgb"
    if not folder.is_dir():
        raise FileNotFoundError(f"{root}: missing rgb/ directory")
    return sorted(p.stem for p in folder.iterdir() if p.suffix.lower() in IMAGE_EXTS)


def read_rgb(path) -> np.ndarray:
    img = _imread(path, cv2.IMREAD_COLOR)
    if img is None:
        raise IOError(f"cannot read image {path}")
    return cv2.cvtColor(img, cv2.COLOR_BGR2RGB)


def normalize_rgb(img: np.ndarray) -> np.ndarray:
    x = img.astype(np.float32) / 255.0
    x = (x - IMAGENET_MEAN) / IMAGENET_STD
    return np.ascontiguousarray(x.transpose(2, 0, 1))


def read_depth(path):
    """Return (normalized depth (1, H, W), detected bit depth)."""
    raw = _imread(path, cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise IOError(f"cannot read depth {path}")
    if raw.ndim == 3:
        raw = raw[..., 0]
    bits = 16 if raw.dtype == np.uint16 else 8
    return normalize_depth(raw, bits).astype(np.float32)[None], bits


def read_mask(path) -> np.ndarray:
    m = _imread(path, cv2.IMREAD_GRAYSCALE)
    if m is None:
        raise IOError(f"cannot read mask {path}")
    return (m >= 128).astype(np.float32)


def load_sample(root, sample_id, depth_dir="depth", require_depth=True, source="", edge_kernel=5) -> Sample:
    root = Path(root)
    rgb_path = _find(root / "rgb", sample_id)
    mask_path = _find(root / "mask", sample_id)
    if rgb_path is None:
        raise SampleLoadError(sample_id, "missing rgb image")
    if mask_path is None:
        raise SampleLoadError(sample_id, "missing mask")
    rgb = read_rgb(rgb_path)
    mask = read_mask(mask_path)
    if mask.shape != rgb.shape[:2]:
        raise SampleLoadError(sample_id, f"mask {mask.shape} vs rgb {rgb.shape[:2]}")
    depth, bits = None, 0
    if depth_dir is not None:
        depth_path = _find(root / depth_dir, sample_id)
        if depth_path is None:
            if require_depth:
                raise SampleLoadError(sample_id, f"missing {depth_dir} file")
        else:
            depth, bits = read_depth(depth_path)
            if depth.shape[-2:] != mask.shape:
                depth = cv2.resize(depth[0], mask.shape[::-1], interpolation=cv2.INTER_LINEAR)[None]
    edge = make_edge_target(mask, edge_kernel).astype(np.float32)
    return Sample(
        id=sample_id, rgb=normalize_rgb(rgb), depth=depth, mask=mask[None], edge=edge[None],
        source=source or root.name, depth_kind="estimated" if depth_dir == "depth_est" else "captured",
        depth_bits=bits,
    )


def load_dataset(root, ids=None, depth_dir="depth", require_depth=True, num_workers=0, edge_kernel=5) -> list:
    """Load every sample (or ``ids``) under ``root``, ordered by id.

    ``depth_dir=None`` skips depth entirely (RGB-only evaluation).
    """
    root = Path(root)
    ids = sorted(ids) if ids is not None else list_ids(root)

    def one(sid):
        return load_sample(root, sid, depth_dir, require_depth, root.name, edge_kernel)

    if num_workers > 0:
        with ThreadPoolExecutor(num_workers) as pool:
            samples = list(pool.map(one, ids))
    else:
        samples = [one(s) for s in ids]
    bits = sorted({s.depth_bits for s in samples if s.depth is not None})
    if bits:
        log.info("%s: %d samples, depth bit depth %s", root.name, len(samples), bits)
    return samples


def ingest_estimated_depth(samples, root) -> list:
    """Attach depth from ``<root>/depth_est``; every sample must have an estimate."""
    folder = Path(root) / "depth_est"
    out = []
    for s in samples:
        path = _find(folder, s.id)
        if path is None:
            raise SampleLoadError(s.id, f"no estimated depth in {folder}")
        depth, bits = read_depth(path)
        if depth.shape[-2:] != s.size:
            depth = cv2.resize(depth[0], s.size[::-1], interpolation=cv2.INTER_LINEAR)[None]
        out.append(replace(s, depth=depth, depth_kind="estimated", depth_bits=bits))
    log.info("depth source: estimated (%d samples from %s)", len(out), folder)
    return out


def _flip(a):
    return np.ascontiguousarray(a[..., ::-1])


def _crop_resize(a, window, size, interp):
    y0, x0, h, w = window
    c = a[:, y0:y0 + h, x0:x0 + w]
    out = np.stack([cv2.resize(ch, (size[1], size[0]), interpolation=interp) for ch in c])
    return out.astype(a.dtype)


def random_crop_window(rng, h, w, min_area=0.875):
    area = rng.uniform(min_area, 1.0)
    side = math.sqrt(area)
    ch, cw = max(1, int(round(h * side))), max(1, int(round(w * side)))
    y0 = int(rng.integers(0, h - ch + 1))
    x0 = int(rng.integers(0, w - cw + 1))
    return y0, x0, ch, cw


def augment(s: Sample, rng, flip=None, crop=None, flip_prob=0.5, min_area=0.875) -> Sample:
    """Joint horizontal flip and crop-and-resize-back of all maps.

    ``flip`` (bool) and ``crop`` ((y0, x0, h, w) or False) force the random
    choices; ``crop=False`` disables cropping.
    """
    if flip is None:
        flip = rng.random() < flip_prob
    h, w = s.size
    if crop is None:
        crop = random_crop_window(rng, h, w, min_area)
    maps = {"rgb": s.rgb, "depth": s.depth, "mask": s.mask, "edge": s.edge}
    if flip:
        maps = {k: (_flip(v) if v is not None else None) for k, v in maps.items()}
    if crop and tuple(crop) != (0, 0, h, w):
        for k, v in maps.items():
            if v is None:
                continue
            interp = cv2.INTER_NEAREST if k in ("mask", "edge") else cv2.INTER_LINEAR
            maps[k] = _crop_resize(v, crop, (h, w), interp)
    return replace(s, **maps)


def scale_index(scale, scales) -> int:
    if scale not in scales:
        raise ConfigError(f"scale {scale} not in {list(scales)}")
    return list(scales).index(scale)


def collate(samples, size, edge_kernel=5, with_depth=True) -> dict:
    """Stack samples resized to ``size`` x ``size``; edges are rebuilt from the resized mask."""
    def stack(key):
        return torch.from_numpy(np.stack([getattr(s, key) for s in samples]))

    rgb = resize_bilinear(stack("rgb"), size, size)
    mask = (resize_bilinear(stack("mask"), size, size) >= 0.5).float()
    edge = torch.from_numpy(np.stack([make_edge_target(m[0].numpy(), edge_kernel)[None] for m in mask])).float()
    batch = {"ids": [s.id for s in samples], "rgb": rgb, "mask": mask, "edge": edge, "size": size}
    if with_depth and all(s.depth is not None for s in samples):
        batch["depth"] = resize_bilinear(stack("depth"), size, size).clamp(min=1e-3, max=1.0)
    return batch


def multiscale_batch(samples, scales, rng, scale=None, edge_kernel=5) -> tuple:
    """Resize a batch to one training scale; draws the scale uniformly unless forced."""
    if scale is None:
        scale = scales[int(rng.integers(len(scales)))]
    k = scale_index(scale, scales)
    return collate(samples, scale, edge_kernel), k


def synthetic_samples(n, size=64, seed=0, edge_kernel=5, radius=(0.15, 0.3)) -> list:
    """Procedural RGB-D scenes: one or two filled shapes nearer than a sloped background.

    Depth is consistent with the mask (object pixels are nearest), and the
    object colour differs from the background so the task is learnable.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    samples = []
    for k in range(n):
        mask = np.zeros((size, size), np.uint8)
        for _ in range(int(rng.integers(1, 3))):
            cy, cx = rng.uniform(0.3, 0.7, 2) * size
            r = rng.uniform(*radius) * size
            if rng.random() < 0.5:
                cv2.circle(mask, (int(cx), int(cy)), int(r), 1, -1)
            else:
                cv2.rectangle(mask, (int(cx - r), int(cy - r)), (int(cx + r), int(cy + r)), 1, -1)
        bg_col = rng.uniform(0.0, 0.45, 3)
        fg_col = rng.uniform(0.55, 1.0, 3)
        img = np.where(mask[..., None] > 0, fg_col, bg_col)
        img = img + rng.normal(0, 0.03, img.shape)
        img = (np.clip(img, 0, 1) * 255).astype(np.uint8)
        slope = rng.uniform(0.1, 0.3)
        depth = 0.3 + slope * yy
        depth = np.where(mask > 0, 0.9 + 0.05 * xx, depth)
        raw_depth = (depth * 255).astype(np.uint8)
        samples.append(Sample(
            id=f"syn{k:04d}", rgb=normalize_rgb(img), depth=normalize_depth(raw_depth, 8).astype(np.float32)[None],
            mask=mask.astype(np.float32)[None], edge=make_edge_target(mask, edge_kernel).astype(np.float32)[None],
            source="synthetic", depth_bits=8,
        ))
    return samples


def denormalize_rgb(rgb: np.ndarray) -> np.ndarray:
    img = rgb.transpose(1, 2, 0) * IMAGENET_STD + IMAGENET_MEAN
    return (np.clip(img, 0, 1) * 255).round().astype(np.uint8)


def write_dataset(samples, root, depth_dir="depth") -> Path:
    """Write samples to disk in the directory layout above."""
    root = Path(root)
    for sub in ("rgb", depth_dir, "mask"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for s in samples:
        cv2.imwrite(str(root / "rgb" / f"{s.id}.png"), cv2.cvtColor(denormalize_rgb(s.rgb), cv2.COLOR_RGB2BGR))
        cv2.imwrite(str(root / "mask" / f"{s.id}.png"), (s.mask[0] * 255).astype(np.uint8))
        if s.depth is not None:
            cv2.imwrite(str(root / depth_dir / f"{s.id}.png"), (s.depth[0] * 255).round().astype(np.uint8))
    return root
