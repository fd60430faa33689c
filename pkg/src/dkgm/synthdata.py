"""Toy datasets: the thin 1-d swiss roll in the plane and a binary shapes corpus."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "SpiralParams",
    "spiral",
    "swiss_roll",
    "affine_transform",
    "inverse_affine_transform",
    "shapes_corpus",
    "manifold_distance",
    "spiral_grid",
    "write_points_csv",
    "write_pgm",
    "read_pgm",
]


@dataclass(frozen=True)
class SpiralParams:
    angle_scale: float = 4.0 * np.pi / 3.0
    latent_rate: float = 1.0
    affine_scale: float = 0.1
    affine_shift: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if not self.angle_scale > 0:
            raise ValueError("angle_scale must be positive")
        if not self.latent_rate > 0:
            raise ValueError("latent_rate must be positive")
        object.__setattr__(self, "affine_shift", tuple(float(s) for s in self.affine_shift))


def spiral(u, params: SpiralParams = SpiralParams()) -> np.ndarray:
    """g(u) = (c sqrt(u) / 3) (cos(c sqrt(u)), sin(c sqrt(u))), c = angle_scale."""
    u = np.asarray(u, dtype=np.float64)
    phase = params.angle_scale * np.sqrt(u)
    radius = phase / 3.0
    return np.stack([radius * np.cos(phase), radius * np.sin(phase)], axis=-1)


def swiss_roll(n: int, params: SpiralParams = SpiralParams(), rng=None):
    """Draw ``n`` points; returns ``(points (n, 2), u (n,))`` with ``u ~ Exp(rate)``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(rng)
    u = rng.exponential(1.0 / params.latent_rate, size=n)
    return spiral(u, params), u


def affine_transform(points, scale=0.1, shift=(1.0, 1.0)) -> np.ndarray:
    return scale * np.asarray(points, dtype=np.float64) + np.asarray(shift, dtype=np.float64)


def inverse_affine_transform(points, scale=0.1, shift=(1.0, 1.0)) -> np.ndarray:
    return (np.asarray(points, dtype=np.float64) - np.asarray(shift, dtype=np.float64)) / scale


def spiral_grid(params: SpiralParams = SpiralParams(), n_grid: int = 10_000,
                u_max: float = 8.0):
    """Dense reference samples of the spiral and the largest chord between them.

    Any point of the curve with ``u <= u_max`` lies within that chord length
    of the nearest reference sample.
    """
    u = np.linspace(0.0, u_max, n_grid)
    ref = spiral(u, params)
    chord = float(np.max(np.linalg.norm(np.diff(ref, axis=0), axis=1)))
    return ref, chord


def manifold_distance(points, params: SpiralParams = SpiralParams(),
                      n_grid: int = 10_000, u_max: float = 8.0,
                      return_bound: bool = False):
    """Mean distance from each point to the nearest densely sampled spiral point."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.shape[0] == 0:
        raise ValueError("need at least one point")
    ref, bound = spiral_grid(params, n_grid, u_max)
    ref_sq = (ref**2).sum(axis=1)
    nearest = np.empty(pts.shape[0])
    for start in range(0, pts.shape[0], 256):
        chunk = pts[start:start + 256]
        d2 = (chunk**2).sum(axis=1)[:, None] - 2.0 * chunk @ ref.T + ref_sq[None, :]
        nearest[start:start + 256] = np.sqrt(np.maximum(d2.min(axis=1), 0.0))
    mean = float(nearest.mean())
    return (mean, bound) if return_bound else mean


def _draw_shape(img, rng):
    side = img.shape[0]
    kind = rng.integers(0, 2)
    lo, hi = 1, side - 1
    if kind == 0:
        h = rng.integers(2, max(3, side // 2) + 1)
        w = rng.integers(2, max(3, side // 2) + 1)
        top = rng.integers(lo, hi - h + 1)
        left = rng.integers(lo, hi - w + 1)
        img[top:top + h, left:left + w] = 1.0
    else:
        r = rng.uniform(1.5, side / 4.0)
        cy, cx = rng.uniform(1 + r, side - 1 - r, size=2)
        yy, xx = np.mgrid[0:side, 0:side]
        img[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = 1.0


def shapes_corpus(n: int, side: int = 16, rng=None) -> np.ndarray:
    """``n`` binary images ``(n, side, side)`` of 1-4 rectangles/discs on black.

    Shapes stay off the outer pixel ring so that every image has edges inside
    the valid region of a 3x3 stencil.
    """
    if side < 8:
        raise ValueError("side must be at least 8")
    rng = np.random.default_rng(rng)
    out = np.zeros((n, side, side))
    for img in out:
        for _ in range(rng.integers(1, 5)):
            _draw_shape(img, rng)
    return out


def write_points_csv(path, points, u=None) -> None:
    points = np.asarray(points)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "y", "u"])
        for i, (x, y) in enumerate(points):
            writer.writerow([repr(float(x)), repr(float(y)),
                             "" if u is None else repr(float(u[i]))])


def write_pgm(path, image) -> None:
    """Binary 8-bit PGM with max value 255; pixel = round(value * 255)."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    pixels = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while blob[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not blob[pos:pos + 1].isspace():
            pos += 1
        fields.append(blob[start:pos])
    if fields[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h, maxval = (int(f) for f in fields[1:])
    data = np.frombuffer(blob[pos + 1:pos + 1 + w * h], dtype=np.uint8)
    return data.reshape(h, w) / float(maxval)
