"""Synthetic segmentation data, augmentation, and the dataset directory format.

A sample is a [3, H, W] image in [0, 1] plus an integer class mask.  The
generator composes one anti-aliased ellipse or rectangle per foreground class
over a textured background so the task is learnable but not trivial, and is
fully determined by the seed.

Dataset directory: a ``manifest.txt`` of key=value lines (version,
num_classes, one ``sample=<id>`` line per sample) next to per-sample
``<id>.image.msvt`` / ``<id>.mask.msvt`` tensor records (masks are stored as
f32 records holding integer ids).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .serial import load_tensor, save_tensor
from .tensor import Rng, Tensor

__all__ = ["SegSample", "AugmentConfig", "augment", "gen_synthetic_dataset",
           "save_dataset", "load_dataset"]


@dataclass
class SegSample:
    image: Tensor          # [3, H, W] float in [0, 1]
    mask: np.ndarray       # [H, W] int32 class ids in [0, K)
    sample_id: str

    def validate(self, num_classes: int):
        c, h, w = self.image.data.shape
        if c != 3 or self.mask.shape != (h, w):
            raise ValueError("image/mask extents do not match")
        if self.mask.min() < 0 or self.mask.max() >= num_classes:
            raise ValueError(f"mask ids must lie in [0, {num_classes})")
        return self


# -- resampling helpers ------------------------------------------------------------


def _bilinear_resize(img: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    c, h, w = img.shape
    oh, ow = out_hw
    if (h, w) == (oh, ow):
        return img.copy()
    ys = (np.arange(oh) + 0.5) * h / oh - 0.5
    xs = (np.arange(ow) + 0.5) * w / ow - 0.5
    y0 = np.clip(np.floor(ys), 0, h - 1).astype(np.intp)
    x0 = np.clip(np.floor(xs), 0, w - 1).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    fx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    top = img[:, y0[:, None], x0[None, :]] * (1 - fx) + img[:, y0[:, None], x1[None, :]] * fx
    bot = img[:, y1[:, None], x0[None, :]] * (1 - fx) + img[:, y1[:, None], x1[None, :]] * fx
    return (top * (1 - fy) + bot * fy).astype(img.dtype)


def _nearest_resize(mask: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    h, w = mask.shape
    oh, ow = out_hw
    if (h, w) == (oh, ow):
        return mask.copy()
    ys = np.minimum(((np.arange(oh) + 0.5) * h / oh).astype(np.intp), h - 1)
    xs = np.minimum(((np.arange(ow) + 0.5) * w / ow).astype(np.intp), w - 1)
    return mask[ys[:, None], xs[None, :]]


def _rotation_grid(h: int, w: int, angle_deg: float):
    """Source coordinates for an inverse-mapped rotation about the center."""
    theta = math.radians(angle_deg)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    src_y = cy + math.cos(theta) * dy - math.sin(theta) * dx
    src_x = cx + math.sin(theta) * dy + math.cos(theta) * dx
    return src_y, src_x


def _rotate_image(img: np.ndarray, angle_deg: float) -> np.ndarray:
    c, h, w = img.shape
    sy, sx = _rotation_grid(h, w, angle_deg)
    y0 = np.floor(sy).astype(np.intp)
    x0 = np.floor(sx).astype(np.intp)
    fy, fx = sy - y0, sx - x0
    out = np.zeros_like(img)
    for (oy, ox, wgt) in ((y0, x0, (1 - fy) * (1 - fx)), (y0, x0 + 1, (1 - fy) * fx),
                          (y0 + 1, x0, fy * (1 - fx)), (y0 + 1, x0 + 1, fy * fx)):
        valid = (oy >= 0) & (oy < h) & (ox >= 0) & (ox < w)
        cy = np.clip(oy, 0, h - 1)
        cx = np.clip(ox, 0, w - 1)
        out += img[:, cy, cx] * (wgt * valid)
    return out.astype(img.dtype)


def _rotate_mask(mask: np.ndarray, angle_deg: float) -> np.ndarray:
    h, w = mask.shape
    sy, sx = _rotation_grid(h, w, angle_deg)
    ny = np.rint(sy).astype(np.intp)
    nx = np.rint(sx).astype(np.intp)
    valid = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
    out = np.zeros_like(mask)
    out[valid] = mask[ny[valid], nx[valid]]
    return out


def _gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    radius = max(1, int(math.ceil(3.0 * sigma)))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (xs / sigma) ** 2)
    kernel /= kernel.sum()
    pad_y = np.pad(img, ((0, 0), (radius, radius), (0, 0)), mode="edge")
    out = np.zeros_like(img, dtype=np.float64)
    for i, kv in enumerate(kernel):
        out += pad_y[:, i:i + img.shape[1], :] * kv
    pad_x = np.pad(out, ((0, 0), (0, 0), (radius, radius)), mode="edge")
    out2 = np.zeros_like(img, dtype=np.float64)
    for i, kv in enumerate(kernel):
        out2 += pad_x[:, :, i:i + img.shape[2]] * kv
    return out2.astype(img.dtype)


# -- augmentation -------------------------------------------------------------------


@dataclass
class AugmentConfig:
    """Per-technique toggles; each enabled technique fires with probability 0.5."""
    target_size: tuple[int, int] | None = None
    flip_h: bool = False
    flip_v: bool = False
    rotate: bool = False
    noise: bool = False
    blur: bool = False
    contrast: bool = False
    max_rotate_deg: float = 25.0

    @classmethod
    def all_on(cls, target_size=None) -> "AugmentConfig":
        return cls(target_size=target_size, flip_h=True, flip_v=True, rotate=True,
                   noise=True, blur=True, contrast=True)

    def any_enabled(self) -> bool:
        return any((self.flip_h, self.flip_v, self.rotate, self.noise, self.blur, self.contrast))


def augment(sample: SegSample, rng: Rng, cfg: AugmentConfig) -> SegSample:
    """Resize to the target, then apply each enabled technique with
    probability 0.5.  Geometry changes hit image and mask identically (mask
    via nearest neighbour); photometric changes hit the image only."""
    img = sample.image.data.astype(np.float32)
    mask = sample.mask.copy()
    if cfg.target_size is not None:
        img = _bilinear_resize(img, cfg.target_size)
        mask = _nearest_resize(mask, cfg.target_size)

    if cfg.flip_h and rng.random() < 0.5:
        img = img[:, :, ::-1].copy()
        mask = mask[:, ::-1].copy()
    if cfg.flip_v and rng.random() < 0.5:
        img = img[:, ::-1, :].copy()
        mask = mask[::-1, :].copy()
    if cfg.rotate and rng.random() < 0.5:
        angle = rng.uniform(-cfg.max_rotate_deg, cfg.max_rotate_deg)
        img = _rotate_image(img, angle)
        mask = _rotate_mask(mask, angle)
    if cfg.noise and rng.random() < 0.5:
        sigma = rng.uniform(0.01, 0.05)
        img = np.clip(img + rng.normal(img.shape).astype(np.float32) * sigma, 0.0, 1.0)
    if cfg.blur and rng.random() < 0.5:
        img = _gaussian_blur(img, rng.uniform(0.5, 1.5))
    if cfg.contrast and rng.random() < 0.5:
        factor = rng.uniform(0.7, 1.3)
        mean = img.mean()
        img = np.clip((img - mean) * factor + mean, 0.0, 1.0)

    return SegSample(Tensor(np.ascontiguousarray(img, dtype=np.float32)),
                     mask.astype(np.int32), sample.sample_id)


# -- synthetic generator --------------------------------------------------------------


def _shape_coverage(rng: Rng, size: int) -> np.ndarray:
    """Anti-aliased coverage in [0, 1] of one random rotated ellipse or box."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy = rng.uniform(0.25, 0.75) * size
    cx = rng.uniform(0.25, 0.75) * size
    theta = rng.uniform(0.0, math.pi)
    dy, dx = yy - cy, xx - cx
    u = math.cos(theta) * dx + math.sin(theta) * dy
    v = -math.sin(theta) * dx + math.cos(theta) * dy
    ry = rng.uniform(0.12, 0.24) * size
    rx = rng.uniform(0.12, 0.24) * size
    if rng.random() < 0.5:
        dist = 1.0 - np.sqrt((u / rx) ** 2 + (v / ry) ** 2)
        edge = dist * min(rx, ry)      # approx. signed distance in pixels
    else:
        edge = np.minimum(rx - np.abs(u), ry - np.abs(v))
    return np.clip(edge + 0.5, 0.0, 1.0)


def _class_palette(rng: Rng, num_classes: int) -> np.ndarray:
    """One RGB shade per class, kept mutually separated so classes stay
    distinguishable under noise."""
    palette = np.zeros((num_classes, 3))
    for cls in range(1, num_classes):
        while True:
            cand = rng.uniform(0.4, 0.95, 3)
            if all(np.linalg.norm(cand - palette[j]) > 0.3 for j in range(1, cls)):
                palette[cls] = cand
                break
    return palette


def gen_synthetic_dataset(n: int, num_classes: int, size: int, rng: Rng) -> list[SegSample]:
    """n samples of ``size`` x ``size`` with one shape per class in [1, K).

    Class appearance is a dataset-level palette with small per-sample jitter;
    shapes are drawn in random order, so occlusion happens but rarely removes
    a class entirely.
    """
    if num_classes < 2:
        raise ValueError("need at least 2 classes (background + 1)")
    palette = _class_palette(rng.child(0xC01), num_classes)
    samples = []
    for i in range(n):
        srng = rng.child(i)
        tex = _gaussian_blur(srng.random((1, size, size)), 2.0)[0]
        span = tex.max() - tex.min()
        tex = (tex - tex.min()) / (span if span > 0 else 1.0)
        gains = srng.uniform(0.5, 1.0, 3)
        img = 0.10 + 0.20 * tex[None, :, :] * gains[:, None, None]
        mask = np.zeros((size, size), dtype=np.int32)

        shades = np.clip(palette + srng.uniform(-0.04, 0.04, (num_classes, 3)), 0.0, 1.0)
        order = srng.permutation(num_classes - 1) + 1
        for cls in order:
            cov = _shape_coverage(srng.child(int(cls)), size)
            mask[cov > 0.5] = cls
            img = img * (1.0 - cov) + cov * shades[cls][:, None, None]

        img = np.clip(img + srng.normal(img.shape) * 0.015, 0.0, 1.0)
        samples.append(SegSample(Tensor(img.astype(np.float32)), mask, f"s{i:04d}"))
    return samples


# -- dataset directory io ----------------------------------------------------------------


def save_dataset(samples: list[SegSample], out_dir, num_classes: int):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["version=1", f"num_classes={num_classes}"]
    for s in samples:
        s.validate(num_classes)
        save_tensor(out_dir / f"{s.sample_id}.image.msvt", s.image.data.astype(np.float32))
        save_tensor(out_dir / f"{s.sample_id}.mask.msvt", s.mask.astype(np.float32))
        lines.append(f"sample={s.sample_id}")
    (out_dir / "manifest.txt").write_text("\n".join(lines) + "\n")


def load_dataset(in_dir) -> tuple[list[SegSample], int]:
    in_dir = Path(in_dir)
    manifest = in_dir / "manifest.txt"
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest.txt under {in_dir}")
    num_classes = None
    ids = []
    for line in manifest.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        if key == "num_classes":
            num_classes = int(value)
        elif key == "sample":
            ids.append(value)
        elif key == "version":
            if int(value) != 1:
                raise ValueError(f"unsupported dataset version {value}")
    if num_classes is None:
        raise ValueError("manifest is missing num_classes")
    samples = []
    for sid in ids:
        img = load_tensor(in_dir / f"{sid}.image.msvt").astype(np.float32)
        mask = load_tensor(in_dir / f"{sid}.mask.msvt").astype(np.int32)
        samples.append(SegSample(Tensor(img), mask, sid).validate(num_classes))
    return samples, num_classes
