"""Image ingestion, synthetic corpora and normalization to [-1, 1] batches.

Every loader returns an :class:`ImageBatch` whose ``data`` array has shape
``(n, c, h, w)`` and float32 values in [-1, 1].
"""

from __future__ import annotations

import gzip
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from matplotlib.colors import rgb_to_hsv
from PIL import Image, UnidentifiedImageError
from skimage.filters import threshold_isodata

from .exceptions import ArgumentError, EmptyDatasetError, FormatError, ShapeError
from .validation import as_array, check_images

logger = logging.getLogger(__name__)

DOMAINS = ("content", "style", "generated")

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

LUMA_WEIGHTS = (0.299, 0.587, 0.114)

CONTENT_SHAPES = ("circle", "square", "triangle", "cross")
STYLE_SHAPES = ("ring", "star", "crescent", "chevron")
PALETTES = ("red", "yellow", "green", "blue")
# base fill colors in [0, 1] RGB, one per palette
PALETTE_RGB = np.array(
    [
        [0.92, 0.12, 0.10],
        [0.95, 0.85, 0.10],
        [0.12, 0.85, 0.18],
        [0.14, 0.22, 0.95],
    ]
)
PALETTE_HUES = rgb_to_hsv(PALETTE_RGB)[:, 0] * 360.0
HUE_TOLERANCE = 35.0
SATURATION_THRESHOLD = 0.4

_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff", ".webp"}


@dataclass
class ImageBatch:
    """A batch of images in ``(n, c, h, w)`` layout with values in [-1, 1]."""

    data: np.ndarray
    domain: str = "content"
    labels: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ArgumentError(f"unknown domain tag {self.domain!r}")
        self.data = check_images(self.data, channels=(1, 3))

    def __len__(self):
        return self.data.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    @property
    def shape(self):
        return self.data.shape

    @property
    def channels(self):
        return self.data.shape[1]

    @property
    def size(self):
        return self.data.shape[2]

    def take(self, index) -> "ImageBatch":
        labels = None if self.labels is None else self.labels[index]
        return ImageBatch(self.data[index], self.domain, labels, dict(self.meta))


@dataclass(frozen=True)
class DatasetSpec:
    """Where a corpus comes from and how to normalize it."""

    source: str
    path: str | None = None
    seed: int | None = None
    n: int = 2000
    target_size: int = 32
    grayscale: bool = False
    domain: str = "content"

    SOURCES = ("idx", "image_dir", "synthetic_shapes", "synthetic_styled")

    def __post_init__(self):
        if self.source not in self.SOURCES:
            raise ArgumentError(f"unknown dataset source {self.source!r}")
        if self.source.startswith("synthetic"):
            if self.seed is None:
                raise ArgumentError(f"{self.source} requires a seed")
        elif self.path is None or not os.path.exists(self.path):
            raise ArgumentError(f"{self.source} requires an existing path, got {self.path!r}")

    def load(self) -> ImageBatch:
        if self.source == "synthetic_shapes":
            batch = synth_content_corpus(self.seed, self.n, self.target_size)
        elif self.source == "synthetic_styled":
            batch = synth_style_corpus(self.seed, self.n, self.target_size)
        elif self.source == "idx":
            batch = load_idx(self.path)
            if batch.size != self.target_size:
                batch = resize_batch(batch, self.target_size)
        else:
            batch = load_image_dir(self.path, self.target_size, grayscale=self.grayscale)
        if self.grayscale and batch.channels == 3:
            batch = to_grayscale(batch)
        batch.domain = self.domain
        return batch


# --------------------------------------------------------------------- IDX


def _open(path):
    path = str(path)
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Read any unsigned-byte IDX tensor as a uint8 array."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise FormatError(f"{path}: file too short for an IDX header (offset {len(raw)})")
    zero, dtype_code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or dtype_code != 0x08 or ndim == 0:
        magic = struct.unpack(">I", raw[:4])[0]
        raise FormatError(f"{path}: unsupported IDX magic 0x{magic:08x}")
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise FormatError(f"{path}: truncated IDX header at byte offset {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    expected = int(np.prod(dims, dtype=np.int64))
    payload = len(raw) - header_end
    if payload < expected:
        raise FormatError(
            f"{path}: truncated IDX payload, expected {expected} bytes after offset "
            f"{header_end}, data ends at byte offset {len(raw)}"
        )
    return np.frombuffer(raw, dtype=np.uint8, count=expected, offset=header_end).reshape(dims)


def write_idx(path, array) -> None:
    """Write a uint8 tensor (rank 1 to 255) in the big-endian IDX layout."""
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ArgumentError(f"IDX export needs uint8 data, got {array.dtype}")
    header = struct.pack(">HBB", 0, 0x08, array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(array).tobytes())


def load_idx(path) -> ImageBatch:
    """Load an IDX image file (magic ``0x00000803``) as a single-channel batch."""
    with _open(path) as fh:
        head = fh.read(4)
    if len(head) < 4:
        raise FormatError(f"{path}: file too short for an IDX header (offset {len(head)})")
    magic = struct.unpack(">I", head)[0]
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(f"{path}: expected image magic 0x{IDX_IMAGES_MAGIC:08x}, got 0x{magic:08x}")
    pixels = read_idx(path)
    data = pixels.astype(np.float64)[:, None, :, :] / 127.5 - 1.0
    return ImageBatch(data.astype(np.float32), meta={"path": str(path)})


def export_idx(batch, path) -> None:
    """Quantize a [-1, 1] batch to uint8 and write it as IDX.

    Single-channel batches become a rank-3 ``(n, h, w)`` tensor, RGB batches
    a rank-4 ``(n, 3, h, w)`` one.
    """
    data = as_array(batch)
    quantized = to_uint8(data)
    write_idx(path, quantized[:, 0] if data.shape[1] == 1 else quantized)


def to_uint8(data) -> np.ndarray:
    return np.clip(np.round((np.asarray(data, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


# ------------------------------------------------------------ image folders


def load_image_dir(path, target_size, grayscale=False) -> ImageBatch:
    """Decode every image in ``path`` (lexicographic order), resized bilinearly.

    Files that fail to decode are skipped; their names end up in
    ``meta["skipped"]``.
    """
    root = Path(path)
    if not root.is_dir():
        raise EmptyDatasetError(f"{path} is not a directory")
    mode = "L" if grayscale else "RGB"
    arrays, files, skipped = [], [], []
    for entry in sorted(root.iterdir(), key=lambda p: p.name):
        if not entry.is_file() or entry.suffix.lower() not in _IMAGE_SUFFIXES:
            continue
        try:
            with Image.open(entry) as img:
                img = img.convert(mode)
                if img.size != (target_size, target_size):
                    img = img.resize((target_size, target_size), Image.BILINEAR)
                pixels = np.asarray(img, dtype=np.float64)
        except (UnidentifiedImageError, OSError) as exc:
            logger.warning("skipping undecodable image %s: %s", entry, exc)
            skipped.append(entry.name)
            continue
        arrays.append(pixels[None] if grayscale else pixels.transpose(2, 0, 1))
        files.append(entry.name)
    if not arrays:
        raise EmptyDatasetError(f"no decodable images in {path}")
    data = np.stack(arrays) / 127.5 - 1.0
    meta = {"path": str(path), "files": files, "skipped": skipped, "n_skipped": len(skipped)}
    return ImageBatch(data.astype(np.float32), meta=meta)


def resize_batch(batch: ImageBatch, target_size: int) -> ImageBatch:
    out = []
    for img in batch.data:
        planes = [
            np.asarray(
                Image.fromarray(plane, mode="F").resize((target_size, target_size), Image.BILINEAR)
            )
            for plane in img
        ]
        out.append(np.stack(planes))
    data = np.clip(np.stack(out), -1.0, 1.0).astype(np.float32)
    return ImageBatch(data, batch.domain, batch.labels, dict(batch.meta))


def to_grayscale(batch):
    """Collapse RGB to one luma channel (ITU-R 601 weights) in [-1, 1] space."""
    data = as_array(batch)
    if data.ndim != 4 or data.shape[1] != 3:
        raise ShapeError(f"to_grayscale needs a 3-channel batch, got shape {data.shape}")
    w = np.asarray(LUMA_WEIGHTS, dtype=np.float64).reshape(1, 3, 1, 1)
    gray = (data.astype(np.float64) * w).sum(axis=1, keepdims=True).astype(np.float32)
    if isinstance(batch, ImageBatch):
        return ImageBatch(gray, batch.domain, batch.labels, dict(batch.meta))
    return gray


# -------------------------------------------------------- synthetic corpora


def _inside(shape, u, v):
    rho = np.hypot(u, v)
    theta = np.arctan2(v, u)
    if shape == "circle":
        return rho <= 1.0
    if shape == "square":
        return np.maximum(np.abs(u), np.abs(v)) <= 0.78
    if shape == "triangle":
        # inscribed in the unit circle, inradius 0.5
        normals = np.deg2rad([270.0, 30.0, 150.0])
        return np.all([u * np.cos(a) + v * np.sin(a) <= 0.5 for a in normals], axis=0)
    if shape == "cross":
        return ((np.abs(u) <= 0.3) & (np.abs(v) <= 0.95)) | ((np.abs(v) <= 0.3) & (np.abs(u) <= 0.95))
    if shape == "ring":
        return (rho <= 1.0) & (rho >= 0.5)
    if shape == "star":
        return rho <= 0.55 + 0.45 * (1.0 + np.cos(5.0 * theta)) / 2.0
    if shape == "crescent":
        return (rho <= 1.0) & (np.hypot(u - 0.7, v) > 0.65)
    if shape == "chevron":
        return (np.abs(v + 0.3 - 0.9 * np.abs(u)) <= 0.48) & (np.abs(u) <= 0.95)
    raise ArgumentError(f"unknown glyph {shape!r}")


def _glyph_mask(rng, shape, size):
    radius = size * rng.uniform(0.3, 0.44)
    cx, cy = rng.uniform(radius, size - radius, size=2)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    ys, xs = np.mgrid[0:size, 0:size] + 0.5
    dx, dy = (xs - cx) / radius, (ys - cy) / radius
    u = np.cos(angle) * dx + np.sin(angle) * dy
    v = -np.sin(angle) * dx + np.cos(angle) * dy
    return _inside(shape, u, v)


def _balanced_labels(rng, n, k):
    return rng.permutation(np.arange(n) % k)


def _check_corpus_args(n, size):
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n < 1:
        raise ArgumentError(f"n must be a positive integer, got {n!r}")
    if size not in (16, 32):
        raise ArgumentError(f"synthetic corpora support size 16 or 32, got {size!r}")


def synth_content_corpus(seed, n, size) -> ImageBatch:
    """White glyphs (circle, square, triangle, cross) on black, one per image.

    ``labels`` holds the glyph index into :data:`CONTENT_SHAPES`; classes are
    exactly balanced.
    """
    _check_corpus_args(n, size)
    rng = np.random.default_rng([int(seed), 0])
    labels = _balanced_labels(rng, n, len(CONTENT_SHAPES))
    data = np.full((n, 1, size, size), -1.0, dtype=np.float32)
    for i, label in enumerate(labels):
        mask = _glyph_mask(rng, CONTENT_SHAPES[label], size)
        data[i, 0][mask] = 1.0
    return ImageBatch(data, "content", labels.astype(np.int64), {"seed": int(seed)})


def render_styled(rng, masks, palettes, noise=0.04) -> np.ndarray:
    """Paint boolean glyph masks ``(n, h, w)`` with palette colors plus texture noise."""
    n, h, w = masks.shape
    rgb = np.empty((n, 3, h, w))
    for i in range(n):
        fill = np.clip(PALETTE_RGB[palettes[i]] + rng.uniform(-0.04, 0.04, size=3), 0.0, 1.0)
        background = rng.uniform(0.02, 0.12)
        img = np.where(masks[i][None], fill[:, None, None], background)
        img = img + rng.normal(0.0, noise, size=img.shape)
        rgb[i] = np.clip(img, 0.0, 1.0)
    return (rgb * 2.0 - 1.0).astype(np.float32)


def synth_style_corpus(seed, n, size) -> ImageBatch:
    """Colored glyphs from :data:`STYLE_SHAPES`, each in one of four palettes.

    ``labels`` holds the palette index into :data:`PALETTES`;
    ``meta["shapes"]`` the glyph index.
    """
    _check_corpus_args(n, size)
    rng = np.random.default_rng([int(seed), 1])
    palettes = _balanced_labels(rng, n, len(PALETTES))
    shapes = rng.integers(0, len(STYLE_SHAPES), size=n)
    masks = np.stack([_glyph_mask(rng, STYLE_SHAPES[s], size) for s in shapes])
    data = render_styled(rng, masks, palettes)
    return ImageBatch(data, "style", palettes.astype(np.int64), {"seed": int(seed), "shapes": shapes})


def colorize(batch, seed) -> ImageBatch:
    """Composite ground-truth mixtures: content glyphs painted with style palettes."""
    data = as_array(batch)
    rng = np.random.default_rng([int(seed), 2])
    palettes = _balanced_labels(rng, data.shape[0], len(PALETTES))
    masks = foreground_mask(data)
    return ImageBatch(render_styled(rng, masks, palettes), "generated", palettes.astype(np.int64))


# ----------------------------------------------------------------- oracles


def value_channel(data) -> np.ndarray:
    """HSV value (max over channels) as a single-channel [-1, 1] rendering."""
    data = as_array(data)
    return data.max(axis=1, keepdims=True)


def foreground_mask(data, threshold=None) -> np.ndarray:
    """Boolean ``(n, h, w)`` glyph mask from the HSV value channel.

    By default each image is split at its own isodata threshold (the
    midpoint of the two class means), so a glyph painted in a dim color
    still separates from its background; binary [-1, 1] images split at 0. A numeric ``threshold`` is applied to
    every image instead. Constant images have an empty mask.
    """
    v = value_channel(data)[:, 0]
    if threshold is not None:
        return v > threshold
    out = np.zeros(v.shape, dtype=bool)
    for i, img in enumerate(v):
        if img.max() > img.min():
            out[i] = img > threshold_isodata(img)
    return out


def palette_of(data) -> np.ndarray:
    """Classify each image's dominant foreground hue into a palette index.

    Returns -1 for images whose foreground is empty, unsaturated, or whose
    hue vote does not land within :data:`HUE_TOLERANCE` degrees of a palette.
    """
    data = as_array(data)
    if data.ndim != 4:
        raise ShapeError(f"expected (n, c, h, w), got {data.shape}")
    n = data.shape[0]
    if data.shape[1] == 1:
        return np.full(n, -1, dtype=np.int64)
    rgb = np.clip((data.transpose(0, 2, 3, 1).astype(np.float64) + 1.0) / 2.0, 0.0, 1.0)
    hsv = rgb_to_hsv(rgb)
    out = np.full(n, -1, dtype=np.int64)
    masks = foreground_mask(data)
    for i in range(n):
        fg = masks[i]
        if not fg.any():
            continue
        sat = hsv[i, ..., 1][fg]
        if sat.mean() < SATURATION_THRESHOLD:
            continue
        hues = hsv[i, ..., 0][fg][sat >= SATURATION_THRESHOLD] * 360.0
        dist = np.abs(hues[:, None] - PALETTE_HUES[None, :])
        dist = np.minimum(dist, 360.0 - dist)
        nearest = dist.argmin(axis=1)
        close = dist[np.arange(len(hues)), nearest] <= HUE_TOLERANCE
        if not close.any():
            continue
        votes = np.bincount(nearest[close], minlength=len(PALETTES))
        if votes.max() >= 0.5 * len(hues):
            out[i] = int(votes.argmax())
    return out


def foreground_saturation(data) -> np.ndarray:
    """Mean HSV saturation over each image's foreground (NaN when empty)."""
    data = as_array(data)
    rgb = np.clip((data.transpose(0, 2, 3, 1).astype(np.float64) + 1.0) / 2.0, 0.0, 1.0)
    hsv = rgb_to_hsv(rgb)
    fg = foreground_mask(data)
    total = np.where(fg, hsv[..., 1], 0.0).sum(axis=(1, 2))
    count = fg.sum(axis=(1, 2))
    with np.errstate(invalid="ignore", divide="ignore"):
        return total / count
