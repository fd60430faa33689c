"""Two-stage generator: a noise-to-data network plus an iterative debiaser.

Stage 1 trains ``f_theta`` so that ``f_theta(x + alpha * eps)`` lands near
``x``; pushing data through it with fresh noise is KDE sampling.  Stage 2
trains a time-conditioned ``u_gamma(v, t)`` through the unrolled recursion

    x_hat_0 = u(x_in, 0)
    x_hat_t = x_hat_{t-1} + a_t * u(x_hat_0 - x_hat_{t-1}, t),  t = 1..n

on corrupted inputs (Gaussian blur for images, an affine map or additive
noise for point clouds).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint
from .errors import NumericError
from .nn import AdamState, TimeConditionedNet
from .sa import Schedule

__all__ = [
    "Stage1Config",
    "Stage2Config",
    "BlurKernel",
    "DkgmModel",
    "TrainResult",
    "gaussian_blur",
    "stage1_loss",
    "train_stage1",
    "stage2_forward",
    "stage2_loss",
    "stage2_loss_and_grad",
    "train_stage2",
    "corrupt",
    "dkgm_sample",
    "save_model",
    "load_model",
    "write_loss_csv",
]


@dataclass(frozen=True)
class Stage1Config:
    noise_level: float = 0.5
    kde_samples_per_point: int = 1
    epochs: int = 50
    batch_size: int = 100
    learning_rate: float = 3e-4

    def __post_init__(self):
        if not self.noise_level > 0:
            raise ValueError("noise_level must be positive")
        if self.kde_samples_per_point < 1:
            raise ValueError("kde_samples_per_point must be at least 1")
        _check_training(self)


@dataclass(frozen=True)
class Stage2Config:
    """Stage-2 training setup.

    ``corruption`` selects how clean data becomes the network input:
    ``"blur"`` (images, bandwidth drawn from ``b_range`` per batch),
    ``"affine"`` (``affine_scale * x + affine_shift``) or ``"noise"``
    (additive ``N(0, noise_std^2)``).  ``loss_target`` is ``"clean_data"``
    or ``"blurred_input"``.  ``anchor`` picks what the loop pulls toward:
    ``"debiased"`` is ``x_hat_0`` (the training recursion as written),
    ``"input"`` is the corrupted input itself, which mirrors the sampling
    loop of :func:`dkgm_sample`.
    """

    n_steps: int = 4
    schedule: Schedule = field(default_factory=Schedule.harmonic)
    b_range: tuple[float, float] = (0.5, 1.0)
    loss_target: str = "clean_data"
    anchor: str = "debiased"
    corruption: str = "blur"
    affine_scale: float = 0.1
    affine_shift: float = 1.0
    noise_std: float = 0.1
    epochs: int = 50
    batch_size: int = 100
    learning_rate: float = 3e-4

    def __post_init__(self):
        b_lo, b_hi = (float(b) for b in self.b_range)
        object.__setattr__(self, "b_range", (b_lo, b_hi))
        if not 0 < b_lo <= b_hi:
            raise ValueError("b_range must satisfy 0 < b_lo <= b_hi")
        if self.n_steps < 1:
            raise ValueError("n_steps must be at least 1")
        if self.loss_target not in ("clean_data", "blurred_input"):
            raise ValueError(f"unknown loss_target {self.loss_target!r}")
        if self.anchor not in ("debiased", "input"):
            raise ValueError(f"unknown anchor {self.anchor!r}")
        if self.corruption not in ("blur", "affine", "noise"):
            raise ValueError(f"unknown corruption {self.corruption!r}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        _check_training(self)


def _check_training(cfg):
    if cfg.epochs < 1 or cfg.batch_size < 1:
        raise ValueError("epochs and batch_size must be at least 1")
    if not cfg.learning_rate > 0:
        raise ValueError("learning_rate must be positive")


@dataclass(frozen=True)
class BlurKernel:
    """Truncated, renormalised 1-d Gaussian taps of radius ``ceil(3b)``."""

    bandwidth: float

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError("blur bandwidth must be positive")

    @property
    def radius(self) -> int:
        return math.ceil(3.0 * self.bandwidth)

    @property
    def weights(self) -> np.ndarray:
        r = self.radius
        j = np.arange(-r, r + 1, dtype=np.float64)
        w = np.exp(-0.5 * (j / self.bandwidth) ** 2)
        return w / w.sum()


def _blur_axis(x, weights, axis):
    r = len(weights) // 2
    n = x.shape[axis]
    idx = np.arange(n)
    out = x.copy()
    for j, w in zip(range(-r, r + 1), weights):
        if j == 0:
            continue
        src = idx + j
        # reflect about the edge pixels (edge not repeated)
        period = 2 * (n - 1) if n > 1 else 1
        src = np.abs(src) % period if n > 1 else np.zeros_like(src)
        src = np.where(src > n - 1, period - src, src)
        # accumulating differences keeps constant signals exactly fixed
        out = out + w * (np.take(x, src, axis=axis) - x)
    return out


def gaussian_blur(image, b: float) -> np.ndarray:
    """Separable Gaussian blur with reflect padding.

    Works on one image ``(h, w)`` or a stack ``(..., h, w)``.
    """
    x = np.asarray(image, dtype=np.float64)
    if x.ndim < 2 or min(x.shape[-2:]) < 1:
        raise ValueError("expected an image with at least one pixel per side")
    weights = BlurKernel(b).weights
    return _blur_axis(_blur_axis(x, weights, x.ndim - 2), weights, x.ndim - 1)


def stage1_loss(f_theta: TimeConditionedNet, x, eps, noise_level: float) -> float:
    """``sum_k ||x - f(x + noise_level * eps_k)||^2`` for one datum.

    ``eps`` has shape ``(m, d)`` (or ``(d,)`` for a single draw).
    """
    x = np.asarray(x, dtype=np.float64)
    eps = np.atleast_2d(np.asarray(eps, dtype=np.float64))
    if eps.shape[1] != x.shape[-1]:
        raise ValueError("noise draws do not match the datum width")
    out = f_theta.forward(x[None, :] + noise_level * eps, 0)
    return float(np.sum((x[None, :] - out) ** 2))


@dataclass
class TrainResult:
    net: TimeConditionedNet
    losses: list[float]


def _check_finite(value, what):
    if not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite {what}")


def _flatten(data):
    data = np.asarray(data, dtype=np.float64)
    if data.ndim < 2 or len(data) == 0:
        raise ValueError("training data must be a nonempty batch")
    return data.reshape(len(data), -1), data.shape[1:]


def train_stage1(data, cfg: Stage1Config, net: TimeConditionedNet, rng=None,
                 shuffle: bool = True) -> TrainResult:
    """Adam on the mean stage-1 loss; returns the trained copy and per-epoch losses."""
    rng = np.random.default_rng(rng)
    x_all, _ = _flatten(data)
    net = net.copy()
    opt = AdamState(lr=cfg.learning_rate)
    m = cfg.kde_samples_per_point
    losses = []
    n = len(x_all)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if shuffle else np.arange(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            xb = x_all[order[start:start + cfg.batch_size]]
            xr = np.repeat(xb, m, axis=0)
            noisy = xr + cfg.noise_level * rng.standard_normal(xr.shape)
            out, cache = net.forward_cached(noisy, 0)
            resid = out - xr
            batch_loss = float(np.sum(resid**2)) / len(xb)
            _check_finite(batch_loss, f"stage-1 loss in epoch {epoch}")
            grad, _ = net.backward(cache, 2.0 * resid / len(xb))
            net.params = opt.update(net.params, grad)
            total += batch_loss * len(xb)
        losses.append(total / n)
    return TrainResult(net, losses)


def stage2_forward(u_gamma: TimeConditionedNet, x_input, n: int,
                   schedule: Schedule = Schedule(), target=None, caches=None):
    """Run the debiasing recursion for ``n`` steps.

    Returns ``(x_hat_n, iterates)`` with ``iterates[t] = x_hat_t``.  With
    ``target`` left as None the recursion pulls toward ``x_hat_0`` (training
    form); passing ``target`` replaces ``x_hat_0`` inside the loop, which is
    how sampling pulls toward the stage-1 output.  ``caches``, if a list,
    collects what :func:`_stage2_backward` needs.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    x_hat, cache = u_gamma.forward_cached(x_input, 0)
    _check_finite(x_hat, "stage-2 iterate at t=0")
    if caches is not None:
        caches.append(cache)
    anchor = x_hat if target is None else np.asarray(target, dtype=np.float64)
    iterates = [x_hat]
    weights = schedule.weights(n) if n else ()
    for t in range(1, n + 1):
        step, cache = u_gamma.forward_cached(anchor - x_hat, t)
        if caches is not None:
            caches.append(cache)
        x_hat = x_hat + weights[t - 1] * step
        _check_finite(x_hat, f"stage-2 iterate at t={t}")
        iterates.append(x_hat)
    return x_hat, iterates


def _stage2_backward(u_gamma, caches, weights, g_out, anchored_on_input=False):
    """Reverse pass through the recursion (gradient w.r.t. parameters only)."""
    grad = np.zeros_like(u_gamma.params)
    g = g_out
    g_anchor = np.zeros_like(g_out)
    for t in range(len(caches) - 1, 0, -1):
        gp, g_v = u_gamma.backward(caches[t], weights[t - 1] * g)
        grad += gp
        if not anchored_on_input:
            g_anchor = g_anchor + g_v
        g = g - g_v
    gp, _ = u_gamma.backward(caches[0], g + g_anchor)
    return grad + gp


def stage2_loss_and_grad(u_gamma: TimeConditionedNet, x_clean, x_corrupt,
                         cfg: Stage2Config):
    """Mean over the batch of the stage-2 loss and its parameter gradient."""
    x_clean = np.asarray(x_clean, dtype=np.float64)
    x_corrupt = np.asarray(x_corrupt, dtype=np.float64)
    if x_clean.shape != x_corrupt.shape:
        raise ValueError("clean and corrupted inputs differ in shape")
    single = x_corrupt.ndim == 1
    xc = x_corrupt[None] if single else x_corrupt
    xt = x_clean[None] if single else x_clean
    caches = []
    on_input = cfg.anchor == "input"
    x_hat, _ = stage2_forward(u_gamma, xc, cfg.n_steps, cfg.schedule,
                              target=xc if on_input else None, caches=caches)
    goal = xt if cfg.loss_target == "clean_data" else xc
    resid = x_hat - goal
    batch = len(xc)
    loss = float(np.sum(resid**2)) / batch
    weights = cfg.schedule.weights(cfg.n_steps)
    grad = _stage2_backward(u_gamma, caches, weights, 2.0 * resid / batch, on_input)
    return loss, grad


def stage2_loss(u_gamma: TimeConditionedNet, x_clean, x_corrupt, cfg: Stage2Config) -> float:
    """``||goal - x_hat_n||^2`` where goal is the clean datum or the corrupted input."""
    x_clean = np.asarray(x_clean, dtype=np.float64)
    x_corrupt = np.asarray(x_corrupt, dtype=np.float64)
    if x_clean.shape != x_corrupt.shape:
        raise ValueError("clean and corrupted inputs differ in shape")
    target = x_corrupt if cfg.anchor == "input" else None
    x_hat, _ = stage2_forward(u_gamma, x_corrupt, cfg.n_steps, cfg.schedule, target=target)
    goal = x_clean if cfg.loss_target == "clean_data" else x_corrupt
    return float(np.sum((goal - x_hat) ** 2)) / (1 if x_corrupt.ndim == 1 else len(x_corrupt))


def corrupt(batch, cfg: Stage2Config, rng, image_shape=None, b=None):
    """Apply the configured corruption to a flattened batch.

    For blur, ``image_shape`` is the per-item grid and ``b`` the bandwidth
    (drawn from ``cfg.b_range`` when None).
    """
    batch = np.asarray(batch, dtype=np.float64)
    if cfg.corruption == "blur":
        if image_shape is None or len(image_shape) != 2:
            raise ValueError("blur corruption needs 2-d image items")
        if b is None:
            lo, hi = cfg.b_range
            # a degenerate range consumes no randomness
            b = lo if lo == hi else rng.uniform(lo, hi)
        imgs = batch.reshape((len(batch),) + tuple(image_shape))
        return gaussian_blur(imgs, b).reshape(len(batch), -1)
    if cfg.corruption == "affine":
        return cfg.affine_scale * batch + cfg.affine_shift
    return batch + cfg.noise_std * rng.standard_normal(batch.shape)


def train_stage2(data, cfg: Stage2Config, net: TimeConditionedNet, rng=None,
                 shuffle: bool = True) -> TrainResult:
    """Adam through the unrolled recursion; one corruption draw per batch."""
    rng = np.random.default_rng(rng)
    x_all, item_shape = _flatten(data)
    net = net.copy()
    opt = AdamState(lr=cfg.learning_rate)
    losses = []
    n = len(x_all)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if shuffle else np.arange(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            xb = x_all[order[start:start + cfg.batch_size]]
            xin = corrupt(xb, cfg, rng, item_shape)
            loss, grad = stage2_loss_and_grad(net, xb, xin, cfg)
            _check_finite(loss, f"stage-2 loss in epoch {epoch}")
            net.params = opt.update(net.params, grad)
            total += loss * len(xb)
        losses.append(total / n)
    return TrainResult(net, losses)


@dataclass
class DkgmModel:
    f_theta: TimeConditionedNet
    u_gamma: TimeConditionedNet
    data_kind: str = "vector"

    def __post_init__(self):
        if self.data_kind not in ("vector", "image_grid"):
            raise ValueError(f"unknown data_kind {self.data_kind!r}")
        widths = {self.f_theta.spec.input_width, self.f_theta.spec.output_width,
                  self.u_gamma.spec.input_width, self.u_gamma.spec.output_width}
        if len(widths) != 1:
            raise ValueError("both networks must share the data width")


def dkgm_sample(model: DkgmModel, x, alpha: float, n: int = 4,
                schedule: Schedule = Schedule(), rng=None):
    """Stage-1 KDE draw ``f(x + alpha eps)`` followed by ``n`` debiasing steps.

    Inside the loop the recursion pulls toward the stage-1 output.  ``x``
    may be one datum or a batch (one noise draw per row).
    """
    rng = np.random.default_rng(rng)
    x = np.asarray(x, dtype=np.float64)
    x_kde = model.f_theta.forward(x + alpha * rng.standard_normal(x.shape), 0)
    _check_finite(x_kde, "stage-1 sample")
    x_hat, _ = stage2_forward(model.u_gamma, x_kde, n, schedule, target=x_kde)
    return x_hat


def save_model(path, model: DkgmModel, metadata: dict | None = None) -> None:
    """Persist both networks plus numeric metadata (stored as ``meta.<key>``)."""
    tensors = {}
    tensors.update(checkpoint.net_to_tensors(model.f_theta, "f_theta."))
    tensors.update(checkpoint.net_to_tensors(model.u_gamma, "u_gamma."))
    tensors["meta.data_kind"] = np.array(float(model.data_kind == "image_grid"))
    for key, value in (metadata or {}).items():
        tensors[f"meta.{key}"] = np.array(float(value))
    checkpoint.save(path, tensors)


def load_model(path) -> tuple[DkgmModel, dict[str, float]]:
    tensors = checkpoint.load(path)
    model = DkgmModel(
        checkpoint.net_from_tensors(tensors, "f_theta."),
        checkpoint.net_from_tensors(tensors, "u_gamma."),
        "image_grid" if tensors.pop("meta.data_kind") else "vector",
    )
    meta = {k[5:]: float(v) for k, v in tensors.items() if k.startswith("meta.")}
    return model, meta


def write_loss_csv(path, losses) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "mean_loss"])
        for i, loss in enumerate(losses, start=1):
            writer.writerow([i, repr(float(loss))])
