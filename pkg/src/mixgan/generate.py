"""Sampling from trained checkpoints and PNG export."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .checkpoint import ModelCheckpoint
from .data import ImageBatch, to_uint8
from .exceptions import ArgumentError, IoError
from .validation import as_array, check_images, check_latent, check_positive_int


@dataclass
class LatentBatch:
    data: np.ndarray
    seed: int | None = None

    def __len__(self):
        return self.data.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)


def sample_latent(n, latent_dim, seed) -> LatentBatch:
    """Standard-normal codes, deterministic per seed."""
    n = check_positive_int(n, "n")
    latent_dim = check_positive_int(latent_dim, "latent_dim")
    rng = np.random.default_rng([int(seed), 7])
    return LatentBatch(rng.standard_normal((n, latent_dim)).astype(np.float32), int(seed))


def _nets(ckpt):
    nets = ckpt.build_nets() if isinstance(ckpt, ModelCheckpoint) else ckpt
    return nets.eval()


@torch.no_grad()
def _content_forward(nets, z):
    return nets.content_decoder(torch.from_numpy(z))


def generate_content(ckpt, z) -> ImageBatch:
    """Intermediate content-decoder images for codes ``z`` (inference-mode batch norm)."""
    if isinstance(ckpt, ModelCheckpoint):
        ckpt.require_stage("content", "mixture")
    nets = _nets(ckpt)
    z = check_latent(z, nets.arch.latent_dim).astype(np.float32)
    img, _ = _content_forward(nets, z)
    return ImageBatch(img.numpy(), "generated")


def generate_mixture(ckpt, z) -> ImageBatch:
    """Final mixture images: the content pyramid for ``z`` run through the mixture decoder."""
    if isinstance(ckpt, ModelCheckpoint):
        ckpt.require_stage("mixture")
    nets = _nets(ckpt)
    z = check_latent(z, nets.arch.latent_dim).astype(np.float32)
    _, feats = _content_forward(nets, z)
    with torch.no_grad():
        img = nets.mixture_decoder(feats)
    return ImageBatch(img.numpy(), "generated")


def generate_pairs(ckpt, z):
    """``(content, mixture)`` batches sharing the same codes."""
    return generate_content(ckpt, z), generate_mixture(ckpt, z)


def tile(batch, rows=None, cols=None) -> np.ndarray:
    """Arrange ``(n, c, s, s)`` into one ``(c, rows*s, cols*s)`` canvas, row-major."""
    data = as_array(batch)
    n, c, s, _ = data.shape
    if cols is None:
        cols = math.ceil(math.sqrt(n)) if rows is None else math.ceil(n / rows)
    if rows is None:
        rows = math.ceil(n / cols)
    if rows * cols < n:
        raise ArgumentError(f"layout {rows}x{cols} cannot hold {n} images")
    canvas = np.full((c, rows * s, cols * s), -1.0, dtype=np.float32)
    for i in range(n):
        r, q = divmod(i, cols)
        canvas[:, r * s:(r + 1) * s, q * s:(q + 1) * s] = data[i]
    return canvas


def _write_png(chw, path):
    pixels = to_uint8(chw)
    img = Image.fromarray(pixels[0], mode="L") if pixels.shape[0] == 1 else Image.fromarray(pixels.transpose(1, 2, 0), mode="RGB")
    try:
        img.save(path)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def export_images(batch, path, layout=None, individual=False) -> list:
    """Write a PNG grid to ``path`` (and optionally one file per image next to it).

    ``layout`` is ``(rows, cols)``; the default is the smallest near-square
    grid. Values map to bytes as ``round((v + 1) * 127.5)``.
    """
    data = check_images(batch, channels=(1, 3))
    path = Path(path)
    if not path.parent.is_dir():
        raise IoError(f"output directory {path.parent} does not exist")
    rows, cols = layout if layout is not None else (None, None)
    written = [path]
    _write_png(tile(data, rows, cols), path)
    if individual:
        width = len(str(len(data) - 1))
        for i, img in enumerate(data):
            out = path.with_name(f"{path.stem}_{i:0{width}d}.png")
            _write_png(img, out)
            written.append(out)
    return written


def export_pairs(content, mixture, path) -> Path:
    """One grid: content images in the top half, their mixture images below."""
    c = check_images(content, channels=(1, 3))
    m = check_images(mixture, channels=(1, 3))
    if len(c) != len(m):
        raise ArgumentError("pair batches must have equal length")
    c = np.repeat(c, 3, axis=1) if c.shape[1] == 1 else c
    m = np.repeat(m, 3, axis=1) if m.shape[1] == 1 else m
    cols = math.ceil(math.sqrt(len(c)))
    rows = math.ceil(len(c) / cols)
    canvas = np.concatenate([tile(c, rows, cols), tile(m, rows, cols)], axis=1)
    _write_png(canvas, path)
    return Path(path)
