"""Synthetic detection data with a parametric, fog-style domain shift.

Images are small RGB canvases with 1-3 colored shape archetypes (box, disk,
cross) on a textured background; ground-truth boxes are tight bounds of the
rendered masks in normalized coordinates. The target domain re-renders the
same family under additive haze, contrast loss, extra texture noise, and a
skewed class prior. Everything is a pure function of (spec, seed): image i
draws from the child stream (seed, i), so generation order or parallelism
cannot change pixels.

Augmentation policies: 'weak' is a coin-flip horizontal mirror (boxes move
with it); 'strong' is photometric only (color jitter, occasional grayscale,
occasional blur, then channel normalization), meant to be applied on top of
an already-flipped weak view so both views share geometry.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
import json

import numpy as np
from scipy.ndimage import gaussian_filter

NORM_MEAN = np.array([0.485, 0.456, 0.406])
NORM_STD = np.array([0.229, 0.224, 0.225])
LUMA = np.array([0.299, 0.587, 0.114])

# largest object extent the renderer can emit, in pixels
_MAX_EXTENT = 14


@dataclass
class ShiftSpec:
    """Target-domain corruption strengths; all zeros = source statistics."""
    haze: float = 0.0        # blend toward a bright veil, [0,1)
    contrast: float = 0.0    # pull pixels toward the image mean, [0,1)
    noise: float = 0.0       # additive gaussian texture sigma
    class_skew: float = 0.0  # exponential tilt of the class prior


@dataclass
class DataSpec:
    image_size: int = 32
    num_classes: int = 3
    min_objects: int = 1
    max_objects: int = 3
    shift: ShiftSpec = field(default_factory=ShiftSpec)

    def to_json(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_json(d: dict) -> "DataSpec":
        d = dict(d)
        d["shift"] = ShiftSpec(**d.get("shift", {}))
        return DataSpec(**d)


@dataclass
class Dataset:
    images: np.ndarray  # (N, H, W, 3) float64 in [0, 1]
    boxes: list         # per image (G, 4) normalized xyxy
    labels: list        # per image (G,) int
    spec: DataSpec
    seed: int

    def __len__(self) -> int:
        return len(self.images)

    def ground_truth(self, i: int):
        return self.boxes[i], self.labels[i]


def _class_prior(num_classes: int, skew: float) -> np.ndarray:
    w = np.exp(-skew * np.arange(num_classes))
    return w / w.sum()


def _render_object(img, rng, cls, size):
    """Draw one archetype, return its tight pixel mask bounds."""
    h = w = size
    cy = int(rng.integers(1 + h // 2, img.shape[0] - 1 - (h - h // 2)))
    cx = int(rng.integers(1 + w // 2, img.shape[1] - 1 - (w - w // 2)))
    yy, xx = np.mgrid[0:img.shape[0], 0:img.shape[1]]
    if cls % 3 == 0:
        hh = int(rng.integers(size // 2, size + 1))
        mask = (np.abs(yy - cy) * 2 <= hh) & (np.abs(xx - cx) * 2 <= size)
    elif cls % 3 == 1:
        r = size / 2.0
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    else:
        t = max(1, size // 4)
        mask = ((np.abs(yy - cy) * 2 <= t) & (np.abs(xx - cx) * 2 <= size)) | \
               ((np.abs(xx - cx) * 2 <= t) & (np.abs(yy - cy) * 2 <= size))
    color = np.full(3, 0.25)
    color[cls % 3] = rng.uniform(0.7, 0.95)
    color[(cls + 1) % 3] = rng.uniform(0.1, 0.35)
    texture = rng.normal(0.0, 0.03, size=(int(mask.sum()), 3))
    img[mask] = np.clip(color + texture, 0.0, 1.0)
    ys, xs = np.nonzero(mask)
    return np.array([xs.min(), ys.min(), xs.max() + 1, ys.max() + 1],
                    dtype=np.float64)


def _render_image(rng, spec: DataSpec):
    s = spec.image_size
    base = rng.uniform(0.15, 0.35)
    gy, gx = np.mgrid[0:s, 0:s] / max(s - 1, 1)
    img = np.empty((s, s, 3))
    for c in range(3):
        tilt = rng.uniform(-0.08, 0.08)
        img[:, :, c] = base + tilt * (gy + gx) / 2.0
    img += rng.normal(0.0, 0.02, size=img.shape)
    img = np.clip(img, 0.0, 1.0)

    prior = _class_prior(spec.num_classes, spec.shift.class_skew)
    n = int(rng.integers(spec.min_objects, spec.max_objects + 1))
    boxes, labels = [], []
    for _ in range(n):
        cls = int(rng.choice(spec.num_classes, p=prior))
        size = int(rng.integers(7, _MAX_EXTENT + 1))
        for _attempt in range(20):
            trial = img.copy()
            px_box = _render_object(trial, rng, cls, size)
            norm = px_box / s
            if not boxes:
                break
            inter_x = np.minimum(norm[2], np.array([b[2] for b in boxes])) - \
                np.maximum(norm[0], np.array([b[0] for b in boxes]))
            inter_y = np.minimum(norm[3], np.array([b[3] for b in boxes])) - \
                np.maximum(norm[1], np.array([b[1] for b in boxes]))
            overlap = (np.clip(inter_x, 0, None) * np.clip(inter_y, 0, None)).max()
            if overlap < 0.25 * (norm[2] - norm[0]) * (norm[3] - norm[1]):
                break
        img = trial
        boxes.append(norm)
        labels.append(cls)

    sh = spec.shift
    if sh.haze > 0.0:
        img = img * (1.0 - sh.haze) + sh.haze * 0.85
    if sh.contrast > 0.0:
        img = img.mean() + (img - img.mean()) * (1.0 - sh.contrast)
    if sh.noise > 0.0:
        img = img + rng.normal(0.0, sh.noise, size=img.shape)
    img = np.clip(img, 0.0, 1.0)
    return img, np.array(boxes, dtype=np.float64).reshape(-1, 4), \
        np.array(labels, dtype=np.int64)


def generate_domain(spec: DataSpec, n_images: int, seed: int) -> Dataset:
    """Deterministic dataset; per-image child seed (seed, i)."""
    if n_images < 1:
        raise ValueError(f"n_images must be >= 1, got {n_images}")
    if spec.image_size < _MAX_EXTENT + 2:
        raise ValueError(
            f"canvas {spec.image_size} cannot fit objects up to "
            f"{_MAX_EXTENT}px with a margin")
    images = np.empty((n_images, spec.image_size, spec.image_size, 3))
    boxes, labels = [], []
    for i in range(n_images):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), i]))
        img, bx, lb = _render_image(rng, spec)
        images[i] = img
        boxes.append(bx)
        labels.append(lb)
    return Dataset(images=images, boxes=boxes, labels=labels, spec=spec,
                   seed=int(seed))


# -- augmentation -------------------------------------------------------------


def hflip(image: np.ndarray, boxes: np.ndarray):
    """Mirror horizontally; boxes stay valid xyxy."""
    out = np.ascontiguousarray(image[:, ::-1, :])
    b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4).copy()
    if len(b):
        b = np.stack([1.0 - b[:, 2], b[:, 1], 1.0 - b[:, 0], b[:, 3]], axis=1)
    return out, b


def _grayscale(img: np.ndarray) -> np.ndarray:
    return np.repeat((img @ LUMA)[..., None], 3, axis=-1)


def _color_jitter(img, rng, brightness=0.4, contrast=0.4, saturation=0.4,
                  hue=0.1):
    from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
    b = rng.uniform(max(0.0, 1.0 - brightness), 1.0 + brightness)
    c = rng.uniform(max(0.0, 1.0 - contrast), 1.0 + contrast)
    s = rng.uniform(max(0.0, 1.0 - saturation), 1.0 + saturation)
    h = rng.uniform(-hue, hue)
    img = np.clip(img * b, 0.0, 1.0)
    gray_mean = (img @ LUMA).mean()
    img = np.clip(gray_mean + (img - gray_mean) * c, 0.0, 1.0)
    gray = _grayscale(img)
    img = np.clip(gray + (img - gray) * s, 0.0, 1.0)
    hsv = rgb_to_hsv(img)
    hsv[..., 0] = (hsv[..., 0] + h) % 1.0
    return hsv_to_rgb(hsv)


def normalize(img: np.ndarray) -> np.ndarray:
    return (img - NORM_MEAN) / NORM_STD


def denormalize(img: np.ndarray) -> np.ndarray:
    return img * NORM_STD + NORM_MEAN


def augment(image: np.ndarray, boxes: np.ndarray, policy: str, rng):
    """Apply one policy; returns (image, boxes).

    'weak': horizontal flip with probability 0.5. 'strong': color jitter,
    grayscale (p=0.2), gaussian blur (p=0.5, sigma in [0.1, 2]), then
    normalization; boxes pass through untouched. The rng draw order is
    fixed so a seed pins the whole pipeline.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    image = np.asarray(image, dtype=np.float64)
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    if policy == "weak":
        if rng.random() < 0.5:
            return hflip(image, boxes)
        return image.copy(), boxes.copy()
    if policy == "strong":
        img = _color_jitter(image, rng)
        if rng.random() < 0.2:
            img = _grayscale(img)
        blur_coin = rng.random()
        sigma = rng.uniform(0.1, 2.0)
        if blur_coin < 0.5:
            img = gaussian_filter(img, sigma=(sigma, sigma, 0.0), mode="reflect")
        return normalize(img), boxes.copy()
    raise ValueError(f"unknown augmentation policy {policy!r}")


# -- dataset files ------------------------------------------------------------

DATASET_MAGIC = "titan-dataset"
DATASET_VERSION = 1


def save_dataset(path, ds: Dataset) -> None:
    """One JSON header line (spec + ground truth), then raw image float64."""
    header = {
        "format": DATASET_MAGIC,
        "version": DATASET_VERSION,
        "dtype": "<f8",
        "seed": ds.seed,
        "spec": ds.spec.to_json(),
        "images": [
            {"shape": list(ds.images[i].shape),
             "boxes": np.asarray(ds.boxes[i]).reshape(-1, 4).tolist(),
             "labels": np.asarray(ds.labels[i]).reshape(-1).tolist()}
            for i in range(len(ds))
        ],
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        f.write(np.ascontiguousarray(ds.images, dtype="<f8").tobytes())


def load_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode())
        if header.get("format") != DATASET_MAGIC:
            raise ValueError(f"not a dataset file: {path}")
        if header.get("version") != DATASET_VERSION:
            raise ValueError(f"unsupported dataset version {header.get('version')}")
        payload = f.read()
    spec = DataSpec.from_json(header["spec"])
    n = len(header["images"])
    shape = (n,) + tuple(header["images"][0]["shape"]) if n else (0,)
    images = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    boxes = [np.array(rec["boxes"], dtype=np.float64).reshape(-1, 4)
             for rec in header["images"]]
    labels = [np.array(rec["labels"], dtype=np.int64)
              for rec in header["images"]]
    return Dataset(images=images, boxes=boxes, labels=labels, spec=spec,
                   seed=int(header["seed"]))
