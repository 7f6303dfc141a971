"""Input validation helpers shared by the transforms and estimators."""

import numpy as np

from .exceptions import ShapeError

BAND_COUNTS = (1, 2, 4, 8)


def check_band_count(K):
    if K not in BAND_COUNTS:
        raise ValueError(f"K must be one of {BAND_COUNTS}, got {K!r}")
    return int(K)


def check_signal(signal, min_length=1, name="signal"):
    """Return ``signal`` as a 1-D float64 array of at least ``min_length`` samples."""
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {x.shape}")
    if x.size < min_length:
        raise ShapeError(f"{name} has {x.size} samples, need at least {min_length}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains NaN or infinite values")
    return x


def check_same_shape(a, b, what="arrays"):
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"{what} differ in shape: {np.shape(a)} vs {np.shape(b)}")


def check_tensor4(x, channels=None):
    x = np.asarray(x)
    if x.ndim != 4 or min(x.shape) < 1:
        raise ShapeError(f"expected (N, C, H, W) tensor, got shape {x.shape}")
    if channels is not None and x.shape[1] != channels:
        raise ShapeError(f"expected {channels} input channels, got {x.shape[1]}")
    return x
