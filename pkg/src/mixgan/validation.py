"""Input validation helpers used by the functional core and the estimators."""

from __future__ import annotations

import numpy as np
import torch

from .exceptions import ArgumentError, ShapeError


def as_array(X) -> np.ndarray:
    """Unwrap an ``ImageBatch``-like object or tensor into a numpy array."""
    X = getattr(X, "data", X)
    if isinstance(X, torch.Tensor):
        X = X.detach().cpu().numpy()
    return np.asarray(X)


def check_images(X, channels=None, size=None, dtype=np.float32, name="X") -> np.ndarray:
    """Validate an image batch of shape ``(n, c, h, w)`` with values in [-1, 1].

    ``channels`` may be an int or a tuple of allowed ints.
    """
    X = as_array(X)
    if X.ndim != 4:
        raise ShapeError(f"{name} must be rank 4 (n, c, h, w), got shape {X.shape}")
    n, c, h, w = X.shape
    if n == 0:
        raise ArgumentError(f"{name} is empty")
    if h != w:
        raise ShapeError(f"{name} must be square, got {h}x{w}")
    if channels is not None:
        allowed = (channels,) if isinstance(channels, int) else tuple(channels)
        if c not in allowed:
            raise ShapeError(f"{name} has {c} channels, expected one of {allowed}")
    if size is not None and h != size:
        raise ShapeError(f"{name} has spatial size {h}, expected {size}")
    X = X.astype(dtype, copy=False)
    if not np.all(np.isfinite(X)):
        raise ArgumentError(f"{name} contains non-finite values")
    if X.min() < -1.0 - 1e-6 or X.max() > 1.0 + 1e-6:
        raise ArgumentError(f"{name} values must lie in [-1, 1]")
    return X


def check_latent(z, latent_dim=None, name="z") -> np.ndarray:
    z = as_array(z)
    if z.ndim != 2:
        raise ShapeError(f"{name} must be rank 2 (n, latent_dim), got shape {z.shape}")
    if z.shape[0] == 0:
        raise ArgumentError(f"{name} is empty")
    if latent_dim is not None and z.shape[1] != latent_dim:
        raise ShapeError(f"{name} has latent_dim {z.shape[1]}, expected {latent_dim}")
    if not np.all(np.isfinite(z)):
        raise ArgumentError(f"{name} contains non-finite values")
    return z


def check_features(X, min_rows=1, name="X") -> np.ndarray:
    X = as_array(X).astype(np.float64, copy=False)
    if X.ndim != 2:
        raise ShapeError(f"{name} must be rank 2 (n, d), got shape {X.shape}")
    if X.shape[0] < min_rows:
        raise ArgumentError(f"{name} needs at least {min_rows} rows, got {X.shape[0]}")
    return X


def check_positive_int(value, name, minimum=1) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ArgumentError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ArgumentError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def broadcast_to_rgb(X: np.ndarray) -> np.ndarray:
    """Replicate single-channel images to three channels; RGB passes through."""
    if X.shape[1] == 3:
        return X
    if X.shape[1] == 1:
        return np.repeat(X, 3, axis=1)
    raise ShapeError(f"cannot broadcast {X.shape[1]} channels to RGB")
