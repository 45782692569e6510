"""Input validation helpers.

All public entry points funnel array arguments through these checks so that
shape and range violations surface as :class:`~advkit.errors.InputError`
with a readable message instead of a downstream numpy broadcast failure.
"""

import numpy as np

from .errors import InputError


def as_image(x, shape=None) -> np.ndarray:
    """Validate a single grayscale image: 2-D, float64, every pixel in [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise InputError(f"expected a 2-D image, got shape {x.shape}")
    if shape is not None and x.shape != tuple(shape):
        raise InputError(f"image shape {x.shape} does not match expected {tuple(shape)}")
    if not np.isfinite(x).all():
        raise InputError("image contains non-finite pixels")
    if x.min() < 0.0 or x.max() > 1.0:
        raise InputError(f"pixels must lie in [0, 1], got range [{x.min()}, {x.max()}]")
    return x


def as_image_batch(X, shape=None) -> np.ndarray:
    """Validate a batch of images: (n, height, width). A single image is promoted."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[np.newaxis]
    if X.ndim != 3:
        raise InputError(f"expected (n, height, width) images, got shape {X.shape}")
    if shape is not None and X.shape[1:] != tuple(shape):
        raise InputError(f"image shape {X.shape[1:]} does not match expected {tuple(shape)}")
    if X.size and not np.isfinite(X).all():
        raise InputError("images contain non-finite pixels")
    if X.size and (X.min() < 0.0 or X.max() > 1.0):
        raise InputError(f"pixels must lie in [0, 1], got range [{X.min()}, {X.max()}]")
    return X


def check_label(label, num_classes: int) -> int:
    """Validate a class index against the model's label space."""
    label = int(label)
    if not 0 <= label < num_classes:
        raise InputError(f"label {label} out of range [0, {num_classes})")
    return label


def check_labels(y, num_classes: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64).ravel()
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        raise InputError(f"labels must lie in [0, {num_classes}), got range [{y.min()}, {y.max()}]")
    return y


def check_probability_vector(p, tol: float = 1e-6) -> np.ndarray:
    """Validate a prediction vector: nonnegative entries summing to 1 within tol."""
    p = np.asarray(p, dtype=np.float64).ravel()
    if p.size == 0:
        raise InputError("empty probability vector")
    if not np.isfinite(p).all():
        raise InputError("probability vector contains non-finite entries")
    if p.min() < -tol:
        raise InputError(f"probability vector has negative entry {p.min()}")
    s = p.sum()
    if abs(s - 1.0) > tol:
        raise InputError(f"probability vector sums to {s}, expected 1 within {tol}")
    return p
