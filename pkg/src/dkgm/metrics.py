"""Image sharpness, empirical restoration bias and energy distance."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

__all__ = ["LAPLACE_KERNEL", "laplace_activations", "image_sharpness", "sharpness",
           "BiasEstimate", "empirical_bias", "energy_distance", "write_metrics_csv"]

LAPLACE_KERNEL = np.array([[0.0, 1.0, 0.0],
                           [1.0, -4.0, 1.0],
                           [0.0, 1.0, 0.0]])


def laplace_activations(image) -> np.ndarray:
    """Valid-region (no padding) response to the 5-point Laplace stencil."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) < 3:
        raise ValueError(f"sharpness needs a 2-d image of at least 3x3, got {img.shape}")
    c = img[1:-1, 1:-1]
    return img[:-2, 1:-1] + img[2:, 1:-1] + img[1:-1, :-2] + img[1:-1, 2:] - 4.0 * c


def image_sharpness(image) -> float:
    return float(np.var(laplace_activations(image)))


def sharpness(images) -> float:
    """Variance of Laplace activations per image, averaged over images.

    Accepts one 2-d image or a stack ``(n, h, w)``.
    """
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[0] == 0:
        raise ValueError("expected a nonempty stack of 2-d images")
    return float(np.mean([image_sharpness(img) for img in arr]))


@dataclass(frozen=True)
class BiasEstimate:
    bias: np.ndarray
    stderr: np.ndarray
    n: int


def empirical_bias(restorer, x, n_trials: int, rng) -> BiasEstimate:
    """Monte-Carlo estimate of ``x - E[restorer(x)]``.

    ``restorer(x, rng)`` returns one random reconstruction of ``x``.
    """
    if n_trials < 2:
        raise ValueError("n_trials must be at least 2")
    x = np.asarray(x, dtype=np.float64)
    draws = np.array([restorer(x, rng) for _ in range(n_trials)], dtype=np.float64)
    stderr = draws.std(axis=0, ddof=1) / np.sqrt(n_trials)
    return BiasEstimate(x - draws.mean(axis=0), stderr, n_trials)


def energy_distance(sample_a, sample_b) -> float:
    """``2 E|A-B| - E|A-A'| - E|B-B'|`` with all-pairs means (V-statistic)."""
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    a = a.reshape(len(a), -1) if a.ndim != 1 else a[:, None]
    b = b.reshape(len(b), -1) if b.ndim != 1 else b[:, None]
    if len(a) == 0 or len(b) == 0:
        raise ValueError("both samples must be nonempty")
    if a.shape[1] != b.shape[1]:
        raise ValueError("samples differ in dimension")
    ab = cdist(a, b).mean()
    aa = cdist(a, a).mean()
    bb = cdist(b, b).mean()
    return float(max(2.0 * ab - aa - bb, 0.0))


def write_metrics_csv(path, rows) -> None:
    """``rows``: iterable of ``(metric, value, stderr, n)``; stderr may be None."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric", "value", "stderr", "n"])
        for metric, value, stderr, n in rows:
            writer.writerow([metric, repr(float(value)),
                             "" if stderr is None else repr(float(stderr)), int(n)])
