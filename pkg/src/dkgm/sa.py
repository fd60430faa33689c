"""Multivariate Robbins-Monro iteration and diagnostics for its assumptions.

An *oracle* is any callable ``oracle(x, rng) -> x_tilde`` returning one
random reconstruction whose conditional mean is the (unknown) map ``H(x)``.
The solver looks for ``x*`` with ``H(x*) = target`` through

    x_{k+1} = x_k + a_k (target - x_tilde_k).
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError

__all__ = [
    "Schedule",
    "SaState",
    "sa_step",
    "sa_step_averaged",
    "sa_solve",
    "A1Diagnostic",
    "validate_schedule_a1",
    "MonotonicityReport",
    "monotonicity_probe",
    "bounded_second_moment_probe",
    "write_trace_csv",
]

Oracle = Callable[[np.ndarray, np.random.Generator], np.ndarray]


@dataclass(frozen=True)
class Schedule:
    """Step weights ``a_k`` for ``k >= 1``.

    ``kind`` is ``"harmonic"`` (``1/k``), ``"scaled_harmonic"`` (``c/k``) or
    ``"custom"``, where ``values`` is either a sequence (``values[k-1]`` is
    ``a_k``) or a callable of ``k``.
    """

    kind: str = "harmonic"
    scale: float = 1.0
    values: Sequence[float] | Callable[[int], float] | None = None

    def __post_init__(self):
        if self.kind not in ("harmonic", "scaled_harmonic", "custom"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "scaled_harmonic" and not self.scale > 0:
            raise ValueError("scaled_harmonic needs a positive scale")
        if self.kind == "custom":
            if self.values is None:
                raise ValueError("custom schedule needs values")
            if not callable(self.values):
                vals = tuple(float(v) for v in self.values)
                if any(not v > 0 for v in vals):
                    raise ValueError("schedule weights must be positive")
                object.__setattr__(self, "values", vals)

    @classmethod
    def harmonic(cls) -> "Schedule":
        return cls("harmonic")

    @classmethod
    def scaled_harmonic(cls, c: float) -> "Schedule":
        return cls("scaled_harmonic", scale=c)

    @classmethod
    def custom(cls, values) -> "Schedule":
        return cls("custom", values=values)

    def __call__(self, k: int) -> float:
        if k < 1:
            raise ValueError("schedule index starts at 1")
        if self.kind == "harmonic":
            return 1.0 / k
        if self.kind == "scaled_harmonic":
            return self.scale / k
        if callable(self.values):
            return float(self.values(k))
        if k > len(self.values):
            raise IndexError(f"custom schedule has only {len(self.values)} weights")
        return self.values[k - 1]

    def weights(self, n: int) -> np.ndarray:
        """``a_1 .. a_n`` as an array."""
        k = np.arange(1, n + 1, dtype=np.float64)
        if self.kind == "harmonic":
            return 1.0 / k
        if self.kind == "scaled_harmonic":
            return self.scale / k
        return np.array([self(i) for i in range(1, n + 1)], dtype=np.float64)


@dataclass
class SaState:
    """Current iterate ``x_hat`` at step ``k`` for a fixed target."""

    x_hat: np.ndarray
    target: np.ndarray
    k: int = 0
    trace: list | None = None

    def __post_init__(self):
        self.x_hat = np.array(self.x_hat, dtype=np.float64, ndmin=1)
        self.target = np.array(self.target, dtype=np.float64, ndmin=1)
        if self.x_hat.shape != self.target.shape:
            raise ValueError("iterate and target differ in dimension")
        if not np.all(np.isfinite(self.target)):
            raise ValueError("target must be finite")

    def record(self):
        if self.trace is not None:
            dist = float(np.linalg.norm(self.x_hat - self.target))
            self.trace.append((self.k, self.x_hat.copy(), dist))

    def step(self, observation, a_k: float) -> "SaState":
        """In-place update ``x_hat += a_k (target - observation)``."""
        obs = np.asarray(observation, dtype=np.float64)
        if obs.shape != self.x_hat.shape:
            raise ValueError(
                f"observation shape {obs.shape} != iterate shape {self.x_hat.shape}"
            )
        if not np.all(np.isfinite(obs)):
            raise NumericError(f"non-finite observation at step {self.k}", state=self)
        new = self.x_hat + a_k * (self.target - obs)
        if not np.all(np.isfinite(new)):
            raise NumericError(f"iterate diverged at step {self.k}", state=self)
        self.x_hat = new
        self.k += 1
        self.record()
        return self


def sa_step(state: SaState, observation, a_k: float) -> SaState:
    """Pure form of :meth:`SaState.step` (the input state is left untouched)."""
    new = SaState(state.x_hat.copy(), state.target, state.k,
                  None if state.trace is None else list(state.trace))
    return new.step(observation, a_k)


def _mean_observation(oracle, x, m, rng):
    if m < 1:
        raise ValueError("averaging count m must be at least 1")
    if m == 1:
        return np.asarray(oracle(x, rng), dtype=np.float64)
    total = np.zeros_like(x)
    for _ in range(m):
        total = total + oracle(x, rng)
    return total / m


def sa_step_averaged(state: SaState, oracle: Oracle, m: int, a_k: float, rng) -> SaState:
    """One step with the observation replaced by the mean of ``m`` oracle draws."""
    return sa_step(state, _mean_observation(oracle, state.x_hat, m, rng), a_k)


def sa_solve(oracle: Oracle, target, x0, schedule: Schedule = Schedule(),
             n_steps: int = 1000, rng=None, m: int = 1, record_trace: bool = False):
    """Run ``n_steps`` averaged Robbins-Monro steps from ``x0``.

    Returns ``(x_hat, trace)``; ``trace`` is None unless ``record_trace``.
    On divergence a :class:`NumericError` is raised whose ``state`` is the
    last finite iterate.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    rng = np.random.default_rng(rng)
    state = SaState(x0, target, trace=[] if record_trace else None)
    state.record()
    weights = schedule.weights(n_steps)
    for k in range(n_steps):
        state.step(_mean_observation(oracle, state.x_hat, m, rng), weights[k])
    return state.x_hat, state.trace


def write_trace_csv(path, trace) -> None:
    """Columns ``k, x_1..x_d, distance_to_target``."""
    if not trace:
        raise ValueError("empty trace")
    d = len(trace[0][1])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["k", *[f"x_{i + 1}" for i in range(d)], "distance_to_target"])
        for k, x, dist in trace:
            writer.writerow([k, *[repr(float(v)) for v in x], repr(float(dist))])


@dataclass(frozen=True)
class A1Diagnostic:
    partial_sum: float
    partial_square_sum: float
    decay_exponent: float
    verdict: bool


def validate_schedule_a1(schedule: Schedule, horizon: int) -> A1Diagnostic:
    """Partial sums of ``a_k`` and ``a_k**2`` up to ``horizon`` plus a verdict.

    Harmonic kinds pass analytically.  For custom schedules the tail is
    treated as a power law ``a_k ~ C k**-p`` with ``p`` estimated from
    ``a_{K/2}`` and ``a_K``; the conditions hold iff ``1/2 < p <= 1``.
    """
    if horizon < 10:
        raise ValueError("horizon must be at least 10")
    a = schedule.weights(horizon)
    p = math.log(a[horizon // 2 - 1] / a[horizon - 1]) / math.log(horizon / (horizon // 2))
    if schedule.kind in ("harmonic", "scaled_harmonic"):
        verdict = True
    else:
        verdict = 0.5 + 1e-3 < p <= 1.0 + 1e-3
    return A1Diagnostic(float(math.fsum(a)), float(math.fsum(a * a)), p, verdict)


@dataclass
class MonotonicityReport:
    """Grid spot-check of the monotonicity assumptions on ``H``.

    ``a3_violations`` counts grid pairs ``(x, x')`` that differ only in
    coordinate ``i`` with ``x_i < x'_i`` but ``H_i(x) >= H_i(x')``.  The A2
    and A4 fields are filled only when a target is supplied.
    """

    grid: np.ndarray
    h_estimate: np.ndarray
    a3_pairs: int
    a3_violations: int
    a2_violations: int | None = None
    a4_min_gap: float | None = None
    a3_violated_pairs: list = field(default_factory=list)

    @property
    def a3_fraction(self) -> float:
        return self.a3_violations / self.a3_pairs if self.a3_pairs else 0.0


def monotonicity_probe(oracle: Oracle, box, grid_points: int, n_draws: int, rng=None,
                       target=None, exclusion: float = 0.1) -> MonotonicityReport:
    """Estimate ``H`` on a regular grid and count monotonicity violations.

    ``box`` is a sequence of ``(lo, hi)`` pairs, one per dimension (d <= 3).
    With ``target`` given, A2 counts coordinate pairs where ``H_i - target_i``
    crosses zero downward, and A4 reports ``min ||H(x) - target||`` over grid
    points farther than ``exclusion`` from the grid point closest to the root.
    """
    box = np.atleast_2d(np.asarray(box, dtype=np.float64))
    d = box.shape[0]
    if d > 3:
        raise ValueError("grid probe supports at most 3 dimensions")
    rng = np.random.default_rng(rng)
    axes = [np.linspace(lo, hi, grid_points) for lo, hi in box]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    flat = mesh.reshape(-1, d)
    h = np.array([_mean_observation(oracle, x, n_draws, rng) for x in flat])
    h_grid = h.reshape(mesh.shape)

    pairs = violations = 0
    a2 = 0 if target is not None else None
    violated = []
    for i in range(d):
        # lines along axis i: every ordered pair (j < l) on each line
        line_vals = np.moveaxis(h_grid[..., i], i, -1).reshape(-1, grid_points)
        for line_idx, vals in enumerate(line_vals):
            for j, l in itertools.combinations(range(grid_points), 2):
                pairs += 1
                if vals[j] >= vals[l]:
                    violations += 1
                    violated.append((i, line_idx, j, l))
                if a2 is not None and vals[j] > target[i] > vals[l]:
                    a2 += 1
    gap = None
    if target is not None:
        target = np.asarray(target, dtype=np.float64)
        resid = np.linalg.norm(h - target, axis=1)
        root = flat[np.argmin(resid)]
        far = np.linalg.norm(flat - root, axis=1) > exclusion
        gap = float(np.min(resid[far])) if np.any(far) else None
    return MonotonicityReport(flat, h, pairs, violations, a2, gap, violated)


def bounded_second_moment_probe(oracle: Oracle, target, points, n_draws: int, rng=None) -> float:
    """Max over probe points of the Monte-Carlo estimate of ``E||x_tilde - target||^2``."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[0] == 0:
        raise ValueError("need at least one probe point")
    rng = np.random.default_rng(rng)
    target = np.asarray(target, dtype=np.float64)
    best = 0.0
    for x in points:
        draws = np.array([oracle(x, rng) for _ in range(n_draws)])
        best = max(best, float(np.mean(np.sum((draws - target) ** 2, axis=1))))
    return best
