"""Plain-text run configuration.

Format::

    # comment
    experiment = swissroll        # top-level keys come before any section
    seed = 0

    [stage2]
    n_steps = 10
    eval_steps = 0, 1, 5, 10      # lists are comma separated

Every key has a default; unknown sections or keys, malformed values and
violated invariants raise :class:`~dkgm.errors.ConfigError` with the line
number.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from typing import get_type_hints

from .errors import ConfigError
from .pipeline import Stage1Config, Stage2Config
from .sa import Schedule
from .sde import SdeParams, phase_change_point

__all__ = ["EXPERIMENTS", "RunConfig", "parse_config", "format_config", "load_config",
           "Stage1Section", "Stage2Section", "SwissRollSection", "ShapesSection",
           "SdeSection", "SaSection", "MetricsSection"]

EXPERIMENTS = ("swissroll", "shapes", "sa-demo", "sde-policy", "metrics-report")


def _check(pred, msg):
    return {"check": (pred, msg)}


def _positive(name):
    return _check(lambda v: v > 0, f"{name} must be positive")


def _at_least(name, lo):
    return _check(lambda v: v >= lo, f"{name} must be at least {lo}")


def _one_of(name, options):
    return _check(lambda v: v in options, f"{name} must be one of {', '.join(options)}")


@dataclass
class Stage1Section:
    noise_level: float = field(default=0.5, metadata=_positive("noise_level"))
    kde_samples_per_point: int = field(default=1, metadata=_at_least("kde_samples_per_point", 1))
    epochs: int = field(default=50, metadata=_at_least("epochs", 1))
    batch_size: int = field(default=100, metadata=_at_least("batch_size", 1))
    learning_rate: float = field(default=3e-4, metadata=_positive("learning_rate"))
    hidden_width: int = field(default=64, metadata=_at_least("hidden_width", 1))
    hidden_layers: int = field(default=2, metadata=_at_least("hidden_layers", 1))
    activation: str = field(default="relu", metadata=_one_of("activation", ("tanh", "relu")))
    skip_connection: bool = True

    def to_stage1(self) -> Stage1Config:
        return Stage1Config(self.noise_level, self.kde_samples_per_point, self.epochs,
                            self.batch_size, self.learning_rate)


@dataclass
class Stage2Section:
    n_steps: int = field(default=4, metadata=_at_least("n_steps", 1))
    schedule: str = field(default="harmonic",
                          metadata=_one_of("schedule", ("harmonic", "scaled_harmonic")))
    schedule_scale: float = field(default=1.0, metadata=_positive("schedule_scale"))
    b_lo: float = field(default=0.5, metadata=_positive("b_lo"))
    b_hi: float = field(default=1.0, metadata=_positive("b_hi"))
    loss_target: str = field(default="clean_data",
                             metadata=_one_of("loss_target", ("clean_data", "blurred_input")))
    anchor: str = field(default="debiased", metadata=_one_of("anchor", ("debiased", "input")))
    noise_std: float = field(default=0.1, metadata=_check(lambda v: v >= 0,
                                                            "noise_std must be nonnegative"))
    epochs: int = field(default=50, metadata=_at_least("epochs", 1))
    batch_size: int = field(default=100, metadata=_at_least("batch_size", 1))
    learning_rate: float = field(default=3e-4, metadata=_positive("learning_rate"))
    hidden_width: int = field(default=64, metadata=_at_least("hidden_width", 1))
    hidden_layers: int = field(default=2, metadata=_at_least("hidden_layers", 1))
    activation: str = field(default="tanh", metadata=_one_of("activation", ("tanh", "relu")))
    skip_connection: bool = True
    time_embed_dim: int = field(default=8, metadata=_check(
        lambda v: v >= 0 and v % 2 == 0, "time_embed_dim must be a nonnegative even integer"))

    def invariants(self):
        if self.b_lo > self.b_hi:
            yield "b_hi", "b_range must satisfy b_lo <= b_hi"

    def make_schedule(self) -> Schedule:
        if self.schedule == "harmonic":
            return Schedule.harmonic()
        return Schedule.scaled_harmonic(self.schedule_scale)

    def to_stage2(self, corruption: str, affine_scale=0.1, affine_shift=1.0) -> Stage2Config:
        return Stage2Config(
            n_steps=self.n_steps, schedule=self.make_schedule(),
            b_range=(self.b_lo, self.b_hi), loss_target=self.loss_target,
            anchor=self.anchor, corruption=corruption, affine_scale=affine_scale,
            affine_shift=affine_shift, noise_std=self.noise_std, epochs=self.epochs,
            batch_size=self.batch_size, learning_rate=self.learning_rate)


@dataclass
class SwissRollSection:
    n_points: int = field(default=2000, metadata=_at_least("n_points", 1))
    n_test: int = field(default=1000, metadata=_at_least("n_test", 1))
    eval_steps: tuple[int, ...] = (0, 1, 5, 10)
    angle_scale: float = field(default=4.0 * math.pi / 3.0, metadata=_positive("angle_scale"))
    latent_rate: float = field(default=1.0, metadata=_positive("latent_rate"))
    affine_scale: float = field(default=0.1, metadata=_check(lambda v: v != 0,
                                                              "affine_scale must be nonzero"))
    affine_shift: tuple[float, ...] = (1.0, 1.0)
    train_dkgm: bool = False
    sample_noise_levels: tuple[float, ...] = (0.5, 1.0)
    n_samples: int = field(default=100, metadata=_at_least("n_samples", 2))
    sample_steps: int = field(default=4, metadata=_at_least("sample_steps", 0))

    def invariants(self):
        if any(k < 0 for k in self.eval_steps):
            yield "eval_steps", "eval_steps must be nonnegative"
        if len(self.affine_shift) != 2:
            yield "affine_shift", "affine_shift needs exactly two values"
        if any(a <= 0 for a in self.sample_noise_levels):
            yield "sample_noise_levels", "sample_noise_levels must be positive"


@dataclass
class ShapesSection:
    n_train: int = field(default=1000, metadata=_at_least("n_train", 1))
    n_test: int = field(default=200, metadata=_at_least("n_test", 2))
    side: int = field(default=16, metadata=_at_least("side", 8))
    bandwidths: tuple[float, ...] = (0.5, 0.6, 0.8, 1.0)
    n_pgm: int = field(default=4, metadata=_at_least("n_pgm", 0))

    def invariants(self):
        if any(b <= 0 for b in self.bandwidths):
            yield "bandwidths", "bandwidths must be positive"


@dataclass
class SdeSection:
    a: float = 1.0
    sigma: float = field(default=1.0, metadata=_check(lambda v: v >= 0, "sigma must be nonnegative"))
    eta: float = field(default=0.1, metadata=_positive("eta"))
    x0: float = 0.0
    m0: float = field(default=1.0, metadata=_check(lambda v: v >= 0, "m0 must be nonnegative"))
    horizon: float = field(default=10.0, metadata=_positive("horizon"))
    dt: float = field(default=1e-3, metadata=_positive("dt"))
    n_paths: int = field(default=10_000, metadata=_at_least("n_paths", 2))
    record_paths: int = field(default=5, metadata=_at_least("record_paths", 0))
    record_every: int = field(default=100, metadata=_at_least("record_every", 1))
    policy_points: int = field(default=101, metadata=_at_least("policy_points", 2))

    def invariants(self):
        if self.dt > self.horizon / 10:
            yield "dt", "dt must not exceed horizon / 10"

    def to_params(self) -> SdeParams:
        return SdeParams(self.a, self.sigma, self.eta, self.x0, self.m0)


@dataclass
class SaSection:
    slopes: tuple[float, ...] = (2.0,)
    target: tuple[float, ...] = (1.0,)
    x0: tuple[float, ...] = (0.0,)
    noise_std: float = field(default=0.1, metadata=_check(lambda v: v >= 0,
                                                           "noise_std must be nonnegative"))
    step_budgets: tuple[int, ...] = (100, 1000, 10_000)
    averaging: int = field(default=1, metadata=_at_least("averaging", 1))
    n_runs: int = field(default=100, metadata=_at_least("n_runs", 1))
    tolerance: float = field(default=0.05, metadata=_positive("tolerance"))
    schedule: str = field(default="harmonic",
                          metadata=_one_of("schedule", ("harmonic", "scaled_harmonic")))
    schedule_scale: float = field(default=1.0, metadata=_positive("schedule_scale"))
    a1_horizon: int = field(default=1_000_000, metadata=_at_least("a1_horizon", 10))

    def invariants(self):
        if not len(self.slopes) == len(self.target) == len(self.x0):
            yield "slopes", "slopes, target and x0 must have the same length"
        if any(s <= 0 for s in self.slopes):
            yield "slopes", "slopes must be positive (increasing mean map)"
        if any(n < 1 for n in self.step_budgets) or not self.step_budgets:
            yield "step_budgets", "step_budgets must be positive"

    def make_schedule(self) -> Schedule:
        if self.schedule == "harmonic":
            return Schedule.harmonic()
        return Schedule.scaled_harmonic(self.schedule_scale)


@dataclass
class MetricsSection:
    n_images: int = field(default=100, metadata=_at_least("n_images", 1))
    side: int = field(default=16, metadata=_at_least("side", 8))
    bandwidths: tuple[float, ...] = (0.5, 0.6, 0.8, 1.0)
    bias_trials: int = field(default=10_000, metadata=_at_least("bias_trials", 2))
    noise_std: float = field(default=0.1, metadata=_check(lambda v: v >= 0,
                                                           "noise_std must be nonnegative"))
    n_energy: int = field(default=1000, metadata=_at_least("n_energy", 1))

    def invariants(self):
        if any(b <= 0 for b in self.bandwidths):
            yield "bandwidths", "bandwidths must be positive"


def _sampler_default():
    return Stage2Section(anchor="input", activation="relu", noise_std=0.1)


SECTIONS = {
    "stage1": Stage1Section,
    "stage2": Stage2Section,
    "sampler": Stage2Section,
    "swissroll": SwissRollSection,
    "shapes": ShapesSection,
    "sde": SdeSection,
    "sa": SaSection,
    "metrics": MetricsSection,
}


@dataclass
class RunConfig:
    experiment: str
    seed: int = 0
    output_dir: str = "runs"
    stage1: Stage1Section = field(default_factory=Stage1Section)
    stage2: Stage2Section = field(default_factory=Stage2Section)
    sampler: Stage2Section = field(default_factory=_sampler_default)
    swissroll: SwissRollSection = field(default_factory=SwissRollSection)
    shapes: ShapesSection = field(default_factory=ShapesSection)
    sde: SdeSection = field(default_factory=SdeSection)
    sa: SaSection = field(default_factory=SaSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)


def _parse_value(raw: str, typ, line):
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw, 10)
        if typ is float:
            value = float(raw)
            if not math.isfinite(value):
                raise ValueError(raw)
            return value
        if typ is str:
            if not raw:
                raise ValueError(raw)
            return raw
        item = typ.__args__[0]
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        return tuple(_parse_value(p, item, line) for p in parts)
    except ValueError:
        raise ConfigError(f"malformed value {raw!r}", line) from None


def _strip_comment(text: str) -> str:
    return text.split("#", 1)[0].strip()


def parse_config(text: str) -> RunConfig:
    top: dict[str, tuple[str, int]] = {}
    sections: dict[str, dict[str, tuple[str, int]]] = {}
    section_lines: dict[str, int] = {}
    current = None
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw_line)
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {line!r}", lineno)
            current = line[1:-1].strip()
            if current not in SECTIONS:
                raise ConfigError(f"unknown section [{current}]", lineno)
            if current in sections:
                raise ConfigError(f"duplicate section [{current}]", lineno)
            sections[current] = {}
            section_lines[current] = lineno
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        target = top if current is None else sections[current]
        if key in target:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        target[key] = (value, lineno)

    for key, (_, lineno) in top.items():
        if key not in ("experiment", "seed", "output_dir"):
            raise ConfigError(f"unknown key {key!r}", lineno)
    if "experiment" not in top:
        raise ConfigError("missing experiment", 1 if text.strip() else None)
    experiment, lineno = top["experiment"]
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {', '.join(EXPERIMENTS)}", lineno)
    kwargs = {"experiment": experiment}
    if "seed" in top:
        seed = _parse_value(top["seed"][0], int, top["seed"][1])
        if not 0 <= seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer", top["seed"][1])
        kwargs["seed"] = seed
    if "output_dir" in top:
        kwargs["output_dir"] = _parse_value(top["output_dir"][0], str, top["output_dir"][1])

    cfg = RunConfig(**kwargs)
    for name, entries in sections.items():
        section = getattr(cfg, name)
        hints = get_type_hints(type(section))
        known = {f.name: f for f in fields(section)}
        values = {}
        for key, (raw, lineno) in entries.items():
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in [{name}]", lineno)
            value = _parse_value(raw, hints[key], lineno)
            check = known[key].metadata.get("check")
            if check and not check[0](value):
                raise ConfigError(check[1], lineno)
            values[key] = value
        section = dataclasses.replace(section, **values)
        for key, msg in getattr(section, "invariants", lambda: ())():
            raise ConfigError(msg, entries.get(key, (None, section_lines[name]))[1])
        setattr(cfg, name, section)
    _validate_domain(cfg)
    return cfg


def _validate_domain(cfg: RunConfig) -> None:
    # build the library objects so their own invariants run too
    try:
        cfg.stage1.to_stage1()
        cfg.stage2.to_stage2("blur")
        cfg.sampler.to_stage2("noise")
        params = cfg.sde.to_params()
        if cfg.experiment == "sde-policy":
            phase_change_point(params)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    return str(value)


def format_config(cfg: RunConfig) -> str:
    """Serialise every field; ``parse_config(format_config(c)) == c``."""
    lines = [f"experiment = {cfg.experiment}", f"seed = {cfg.seed}",
             f"output_dir = {cfg.output_dir}"]
    for name in SECTIONS:
        lines.append("")
        lines.append(f"[{name}]")
        section = getattr(cfg, name)
        for f in fields(section):
            lines.append(f"{f.name} = {_format_value(getattr(section, f.name))}")
    return "\n".join(lines) + "\n"


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
