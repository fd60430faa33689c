"""Euler-Maruyama simulation of the learning-rate control SDE.

The scalar process is

    dx_t = u_t (x0 - a x_t) dt + u_t sqrt(eta * sigma) dW_t

with cost ``m_t = E[(x_t - x0)^2] / 2``.  ``x0`` is the target the iteration
tracks; the process itself starts from ``start``, chosen so that the
initial cost equals ``m0``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericError

__all__ = ["SdeParams", "Policy", "phase_change_point", "optimal_policy",
           "SdeResult", "simulate_sde", "write_paths_csv"]

_LOG_ARG_FLOOR = 1.0 + 1e-12
_BLOCK = 1024
_CHUNK = 512


@dataclass(frozen=True)
class SdeParams:
    """Linear drift slope ``a``, constant variance ``sigma``, step ``eta``.

    ``start`` defaults to ``x0 - sqrt(2 m0)``.  When given explicitly it must
    agree with ``m0``; :meth:`from_start` derives ``m0`` instead.
    """

    a: float
    sigma: float
    eta: float
    x0: float = 0.0
    m0: float = 1.0
    start: float | None = None

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.m0 < 0:
            raise ValueError("m0 must be nonnegative")
        if self.start is None:
            object.__setattr__(self, "start", self.x0 - math.sqrt(2.0 * self.m0))
        elif not math.isclose(0.5 * (self.start - self.x0) ** 2, self.m0,
                              rel_tol=1e-12, abs_tol=1e-15):
            raise ValueError("start value is inconsistent with m0")

    @classmethod
    def from_start(cls, a, sigma, eta, x0, start) -> "SdeParams":
        return cls(a, sigma, eta, x0, 0.5 * (start - x0) ** 2, start)


def phase_change_point(p: SdeParams) -> float | None:
    """Switch time ``t* = log(4 m0 / (eta sigma) - 1) / (2a)``; None when ``a <= 0``."""
    if p.a <= 0:
        return None
    if p.sigma <= 0:
        raise DomainError("t* is undefined for sigma = 0")
    ratio = 4.0 * p.m0 / (p.eta * p.sigma)
    if ratio <= _LOG_ARG_FLOOR:
        raise DomainError(f"4 m0 / (eta sigma) = {ratio!r} must exceed 1")
    return math.log(ratio - 1.0) / (2.0 * p.a)


def optimal_policy(p: SdeParams, t):
    """Full rate up to ``t*``, then ``1 / (1 + a (t - t*))``.  Vectorised in ``t``."""
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0):
        raise ValueError("t must be nonnegative")
    t_star = phase_change_point(p)
    if t_star is None:
        u = np.ones_like(t_arr)
    else:
        u = np.where(t_arr <= t_star, 1.0,
                     1.0 / (1.0 + p.a * np.maximum(t_arr - t_star, 0.0)))
    return float(u) if u.ndim == 0 else u


@dataclass(frozen=True)
class Policy:
    """Learning-rate control ``u_t`` in ``[0, 1]``.

    ``kind`` is ``"constant"`` (value ``u``), ``"optimal"`` (needs
    ``params``) or ``"inverse_time"`` (``1 / (1 + t)``).
    """

    kind: str = "constant"
    u: float = 1.0
    params: SdeParams | None = None

    def __post_init__(self):
        if self.kind not in ("constant", "optimal", "inverse_time"):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.kind == "constant" and not 0.0 <= self.u <= 1.0:
            raise ValueError("constant policy value must lie in [0, 1]")
        if self.kind == "optimal":
            if self.params is None:
                raise ValueError("optimal policy needs SDE parameters")
            phase_change_point(self.params)

    @classmethod
    def constant(cls, u: float) -> "Policy":
        return cls("constant", u=u)

    @classmethod
    def optimal(cls, params: SdeParams) -> "Policy":
        return cls("optimal", params=params)

    def __call__(self, t):
        t_arr = np.asarray(t, dtype=np.float64)
        if self.kind == "constant":
            out = np.full_like(t_arr, self.u)
        elif self.kind == "optimal":
            return optimal_policy(self.params, t)
        else:
            out = 1.0 / (1.0 + t_arr)
        return float(out) if out.ndim == 0 else out


@dataclass
class SdeResult:
    m_T: float
    stderr: float
    x_T: np.ndarray
    times: np.ndarray | None = None
    paths: np.ndarray | None = None
    controls: np.ndarray | None = None


def _spawn(rng, n):
    if isinstance(rng, np.random.Generator):
        return rng.spawn(n)
    seq = rng if isinstance(rng, np.random.SeedSequence) else np.random.SeedSequence(rng)
    return [np.random.default_rng(s) for s in seq.spawn(n)]


def simulate_sde(p: SdeParams, policy: Policy, T: float, dt: float, n_paths: int,
                 rng=None, start: float | None = None, record_paths: int = 0,
                 record_every: int = 1) -> SdeResult:
    """Euler-Maruyama over ``n_paths`` independent paths.

    Paths are split into blocks of 1024, each driven by its own stream
    spawned from ``rng``; the result does not depend on how blocks are
    scheduled.  The first ``record_paths`` paths are kept every
    ``record_every`` steps.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    if not 0 < dt <= T / 10.0:
        raise ValueError("dt must lie in (0, T/10]")
    n_steps = int(round(T / dt))
    x = np.full(n_paths, p.start if start is None else float(start))
    n_blocks = -(-n_paths // _BLOCK)
    gens = _spawn(rng, n_blocks)
    widths = [min(_BLOCK, n_paths - i * _BLOCK) for i in range(n_blocks)]
    noise_scale = math.sqrt(p.eta * p.sigma * dt)
    times = np.arange(n_steps + 1) * dt
    u_all = np.asarray(policy(times[:-1]), dtype=np.float64)

    keep = min(record_paths, n_paths)
    rec_idx = list(range(0, n_steps + 1, record_every))
    if rec_idx[-1] != n_steps:
        rec_idx.append(n_steps)
    rec_set = {k: i for i, k in enumerate(rec_idx)}
    paths = np.empty((keep, len(rec_idx))) if keep else None
    if keep:
        paths[:, 0] = x[:keep]

    # overflow is detected below and reported with the offending path
    with np.errstate(over="ignore", invalid="ignore"):
        for c0 in range(0, n_steps, _CHUNK):
            c1 = min(c0 + _CHUNK, n_steps)
            if noise_scale > 0:
                z = np.concatenate([g.standard_normal((c1 - c0, w)) for g, w in zip(gens, widths)],
                                   axis=1)
            for k in range(c0, c1):
                u = u_all[k]
                x = x + u * (p.x0 - p.a * x) * dt
                if noise_scale > 0:
                    x = x + (u * noise_scale) * z[k - c0]
                if keep and (k + 1) in rec_set:
                    paths[:, rec_set[k + 1]] = x[:keep]
            bad = ~np.isfinite(x)
            if bad.any():
                raise NumericError(
                    f"non-finite value on path {int(np.argmax(bad))} by step {c1}"
                )

    dev2 = (x - p.x0) ** 2
    m_T = 0.5 * float(dev2.mean())
    stderr = 0.5 * float(dev2.std(ddof=1)) / math.sqrt(n_paths) if n_paths > 1 else math.nan
    rec_times = times[rec_idx] if keep else None
    controls = np.asarray(policy(rec_times), dtype=np.float64) if keep else None
    return SdeResult(m_T, stderr, x, rec_times, paths, controls)


def write_paths_csv(path, result: SdeResult) -> None:
    """Columns ``path_id, t, x_t, u_t`` for every recorded path sample."""
    if result.paths is None:
        raise ValueError("no recorded paths")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path_id", "t", "x_t", "u_t"])
        for pid, row in enumerate(result.paths):
            for t, x, u in zip(result.times, row, result.controls):
                writer.writerow([pid, repr(float(t)), repr(float(x)), repr(float(u))])
