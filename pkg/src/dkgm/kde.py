"""Gaussian kernel density estimation and the two-step KDE sampler."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

__all__ = ["KdeModel", "kde_density", "kde_log_density", "kde_sample",
           "likelihood_lower_bound", "LikelihoodBound"]

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class KdeModel:
    """Reference points ``(m, d)`` and a scalar bandwidth.

    For ``d > 1`` the kernel is the isotropic product Gaussian, normalised by
    ``m * bandwidth**d`` so that the estimate is a proper density.
    """

    points: np.ndarray
    bandwidth: float
    kernel: str = "gaussian"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValueError("KDE needs at least one reference point")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if self.kernel != "gaussian":
            raise ValueError(f"unsupported kernel {self.kernel!r}")
        object.__setattr__(self, "points", pts)

    @property
    def m(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def _as_queries(model, x):
    x = np.asarray(x, dtype=np.float64)
    if model.dim == 1 and x.ndim <= 1 and (x.ndim == 0 or x.shape[-1] != 1):
        # bare scalars or a 1-d array of scalar queries
        return x.reshape(-1, 1), x.ndim == 0
    if x.shape[-1] != model.dim:
        raise ValueError(f"query dimension {x.shape[-1]} != model dimension {model.dim}")
    return x.reshape(-1, model.dim), x.ndim == 1


def _log_kernel_terms(model, q):
    # log of (1/(m b^d)) K((q - X_k)/b) for every (query, k) pair
    b = model.bandwidth
    sq = ((q[:, None, :] - model.points[None, :, :]) ** 2).sum(axis=-1)
    return (-0.5 * sq / b**2 - model.dim * (_LOG_SQRT_2PI + np.log(b))
            - np.log(model.m))


def kde_log_density(model: KdeModel, x):
    q, scalar = _as_queries(model, x)
    out = logsumexp(_log_kernel_terms(model, q), axis=1)
    return float(out[0]) if scalar else out


def kde_density(model: KdeModel, x):
    """Evaluate the kernel mixture at one query or an array of queries."""
    q, scalar = _as_queries(model, x)
    out = np.exp(_log_kernel_terms(model, q)).sum(axis=1)
    return float(out[0]) if scalar else out


def kde_sample(model: KdeModel, rng: np.random.Generator, size: int | None = None):
    """Pick a reference point uniformly, then add ``bandwidth`` Gaussian noise.

    Returns one ``(d,)`` vector when ``size`` is None, else ``(size, d)``.
    """
    n = 1 if size is None else int(size)
    idx = rng.integers(0, model.m, size=n)
    draws = model.points[idx] + model.bandwidth * rng.standard_normal((n, model.dim))
    return draws[0] if size is None else draws


@dataclass(frozen=True)
class LikelihoodBound:
    bound: float
    log_density: float
    terms: np.ndarray

    @property
    def inequality_applies(self) -> bool:
        """The sum-of-logs bound is only guaranteed when every term is <= 1."""
        return bool(np.all(self.terms <= 0.0))


def likelihood_lower_bound(x, samples, bandwidth: float) -> LikelihoodBound:
    """Sum of per-sample log kernel terms, alongside ``log p_m(x)``.

    ``samples`` plays the role of the KDE reference points.  ``terms`` holds
    ``log[(1/(m b^d)) K((x - X_k)/b)]`` for each sample.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        raise ValueError("need at least one sample")
    model = KdeModel(samples, bandwidth)
    q, _ = _as_queries(model, x)
    if q.shape[0] != 1:
        raise ValueError("likelihood bound takes a single query point")
    terms = _log_kernel_terms(model, q)[0]
    return LikelihoodBound(float(terms.sum()), float(logsumexp(terms)), terms)
