"""Seeded experiment runner behind the ``dkgm`` command.

Each experiment writes plot-ready CSV (plus PGM images and checkpoints where
relevant) into one output directory and finishes with ``manifest.csv``,
which lists every emitted file with its SHA-256.  Randomness comes only from
the named streams of :mod:`dkgm.rng`, so a (config, seed) pair fixes every
byte of output on a given platform.
"""

from __future__ import annotations

import contextlib
import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.spatial.distance import pdist

from . import checkpoint, rng as rngmod
from .config import RunConfig, Stage1Section, Stage2Section
from .errors import NumericError
from .metrics import empirical_bias, energy_distance, sharpness, write_metrics_csv
from .nn import MlpSpec, TimeConditionedNet
from .pipeline import (DkgmModel, dkgm_sample, gaussian_blur, save_model, stage2_forward,
                       train_stage1, train_stage2, write_loss_csv)
from .sa import sa_solve, validate_schedule_a1, write_trace_csv
from .sde import Policy, phase_change_point, simulate_sde, write_paths_csv
from .synthdata import (SpiralParams, affine_transform, manifold_distance, shapes_corpus,
                        swiss_roll, write_pgm, write_points_csv)

__all__ = ["RunReport", "run", "sha256_file", "write_manifest", "seed_report"]

MANIFEST = "manifest.csv"


@dataclass
class RunReport:
    output_dir: Path
    files: list[str] = field(default_factory=list)
    summary: dict[str, float] = field(default_factory=dict)


@contextlib.contextmanager
def _stage(module: str, step: str):
    """Re-raise numeric failures with the module and step that produced them."""
    try:
        yield
    except NumericError as exc:
        raise NumericError(f"{module}: {step}: {exc}", state=exc.state) from exc
    except FloatingPointError as exc:
        raise NumericError(f"{module}: {step}: {exc}") from exc


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out: Path, files) -> Path:
    path = out / MANIFEST
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["file", "sha256"])
        for name in sorted(files):
            writer.writerow([name, sha256_file(out / name)])
    return path


def seed_report(cfg: RunConfig) -> list[tuple[str, int, int]]:
    """``(stream name, index, derived seed)`` for every named stream."""
    return [(name, idx, rngmod.stream_seed(cfg.seed, idx))
            for name, idx in sorted(rngmod.STREAMS.items(), key=lambda kv: kv[1])]


def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                             for v in row])


def _make_net(section: Stage1Section | Stage2Section, width: int, time_embed_dim: int,
              rng) -> TimeConditionedNet:
    widths = (width,) + (section.hidden_width,) * section.hidden_layers + (width,)
    spec = MlpSpec(widths, section.activation, section.skip_connection, time_embed_dim)
    return TimeConditionedNet.glorot(spec, rng)


def _save_stage2(path, net, s2cfg, noise_level) -> None:
    tensors = checkpoint.net_to_tensors(net, "u_gamma.")
    meta = {"stage": 2.0, "noise_level": noise_level, "n_steps": s2cfg.n_steps,
            "b_lo": s2cfg.b_range[0], "b_hi": s2cfg.b_range[1]}
    tensors.update({f"meta.{k}": np.array(float(v)) for k, v in meta.items()})
    checkpoint.save(path, tensors)


class _Emitter:
    def __init__(self, out: Path, log: Callable[[str], None]):
        self.out = out
        self.files: list[str] = []
        self.log = log

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name


def _swissroll(cfg: RunConfig, em: _Emitter, summary: dict) -> None:
    sr = cfg.swissroll
    params = SpiralParams(angle_scale=sr.angle_scale, latent_rate=sr.latent_rate,
                          affine_scale=sr.affine_scale, affine_shift=sr.affine_shift)
    data_rng = rngmod.stream(cfg.seed, "data")
    train, _ = swiss_roll(sr.n_points, params, data_rng)
    test, test_u = swiss_roll(sr.n_test, params, data_rng)
    transformed = affine_transform(test, sr.affine_scale, sr.affine_shift)
    write_points_csv(em.path("ground_truth.csv"), test, test_u)
    write_points_csv(em.path("transformed.csv"), transformed, test_u)

    s2cfg = cfg.stage2.to_stage2("affine", sr.affine_scale, np.asarray(sr.affine_shift))
    net = _make_net(cfg.stage2, 2, cfg.stage2.time_embed_dim, rngmod.stream(cfg.seed, "init"))
    em.log(f"training stage 2 on the affine corruption ({s2cfg.epochs} epochs)")
    with _stage("pipeline", "stage-2 training"):
        result = train_stage2(train, s2cfg, net, rngmod.stream(cfg.seed, "train"))
    write_loss_csv(em.path("loss_stage2.csv"), result.losses)

    k_max = max(sr.eval_steps)
    with _stage("pipeline", "stage-2 evaluation"):
        _, iterates = stage2_forward(result.net, transformed, k_max, s2cfg.schedule)
    rows = []
    for k in sr.eval_steps:
        write_points_csv(em.path(f"reconstructions_k{k}.csv"), iterates[k], test_u)
        dist = manifold_distance(iterates[k], params)
        rows.append((k, dist, len(test)))
        summary[f"distance_k{k}"] = dist
    _write_rows(em.path("distances.csv"), ["k", "mean_manifold_distance", "n"], rows)

    _save_stage2(em.path("stage2.dkgm"), result.net, s2cfg, cfg.stage1.noise_level)

    if sr.train_dkgm:
        _swissroll_dkgm(cfg, em, summary, train, test, params)


def _swissroll_dkgm(cfg, em, summary, train, test, params) -> None:
    sr = cfg.swissroll
    s1cfg = cfg.stage1.to_stage1()
    f_net = _make_net(cfg.stage1, 2, 0, rngmod.stream(cfg.seed, "stage1_init"))
    em.log(f"training stage 1 ({s1cfg.epochs} epochs)")
    with _stage("pipeline", "stage-1 training"):
        f_res = train_stage1(train, s1cfg, f_net, rngmod.stream(cfg.seed, "stage1_train"))
    write_loss_csv(em.path("loss_stage1.csv"), f_res.losses)

    scfg = cfg.sampler.to_stage2("noise")
    u_net = _make_net(cfg.sampler, 2, cfg.sampler.time_embed_dim,
                      rngmod.stream(cfg.seed, "sampler_init"))
    em.log(f"training the sampling debiaser ({scfg.epochs} epochs)")
    with _stage("pipeline", "sampler training"):
        u_res = train_stage2(train, scfg, u_net, rngmod.stream(cfg.seed, "sampler_train"))
    write_loss_csv(em.path("loss_sampler.csv"), u_res.losses)

    model = DkgmModel(f_res.net, u_res.net)
    save_model(em.path("dkgm.dkgm"), model,
               {"stage": 2, "noise_level": s1cfg.noise_level, "n_steps": sr.sample_steps,
                "b_lo": scfg.b_range[0], "b_hi": scfg.b_range[1]})

    rows = []
    seed_point = np.repeat(test[:1], sr.n_samples, axis=0)
    for alpha in sr.sample_noise_levels:
        with _stage("pipeline", f"sampling at alpha={alpha!r}"):
            samples = dkgm_sample(model, seed_point, alpha, sr.sample_steps,
                                  scfg.schedule, rngmod.stream(cfg.seed, "sampling"))
        write_points_csv(em.path(f"samples_alpha{alpha:g}.csv"), samples)
        spread = float(pdist(samples).mean())
        rows.append((alpha, spread, manifold_distance(samples, params), len(samples)))
        summary[f"diversity_alpha{alpha:g}"] = spread
    _write_rows(em.path("diversity.csv"),
                ["alpha", "mean_pairwise_distance", "mean_manifold_distance", "n"], rows)


def _blur_each(images, bandwidths):
    return np.stack([gaussian_blur(img, b) for img, b in zip(images, bandwidths)])


def _shapes(cfg: RunConfig, em: _Emitter, summary: dict) -> None:
    sh = cfg.shapes
    data_rng = rngmod.stream(cfg.seed, "data")
    train = shapes_corpus(sh.n_train, sh.side, data_rng)
    test = shapes_corpus(sh.n_test, sh.side, data_rng)

    rows = [(0.0, sharpness(test), len(test))]
    rows += [(b, sharpness(gaussian_blur(test, b)), len(test)) for b in sh.bandwidths]
    _write_rows(em.path("table2_sharpness.csv"), ["b", "sharpness", "n"], rows)

    s2cfg = cfg.stage2.to_stage2("blur")
    width = sh.side * sh.side
    net = _make_net(cfg.stage2, width, cfg.stage2.time_embed_dim,
                    rngmod.stream(cfg.seed, "init"))
    em.log(f"training stage 2 on blurred shapes ({s2cfg.epochs} epochs)")
    with _stage("pipeline", "stage-2 training"):
        result = train_stage2(train, s2cfg, net, rngmod.stream(cfg.seed, "train"))
    write_loss_csv(em.path("loss_stage2.csv"), result.losses)

    eval_rng = rngmod.stream(cfg.seed, "eval")
    bws = eval_rng.uniform(*s2cfg.b_range, size=len(test))
    blurred = _blur_each(test, bws)
    with _stage("pipeline", "stage-2 evaluation"):
        out, _ = stage2_forward(result.net, blurred.reshape(len(test), -1), s2cfg.n_steps,
                                s2cfg.schedule)
    out = out.reshape(test.shape)
    metrics = [
        ("sharpness_clean", sharpness(test), None, len(test)),
        ("sharpness_blurred", sharpness(blurred), None, len(test)),
        ("sharpness_output", sharpness(out), None, len(test)),
        ("energy_blurred_vs_clean", energy_distance(blurred, test), None, len(test)),
        ("energy_output_vs_clean", energy_distance(out, test), None, len(test)),
    ]
    write_metrics_csv(em.path("enhancement.csv"), metrics)
    summary.update({name: value for name, value, _, _ in metrics})
    for i in range(min(sh.n_pgm, len(test))):
        write_pgm(em.path(f"clean_{i}.pgm"), test[i])
        write_pgm(em.path(f"blurred_{i}.pgm"), blurred[i])
        write_pgm(em.path(f"output_{i}.pgm"), out[i])
    _save_stage2(em.path("stage2.dkgm"), result.net, s2cfg, cfg.stage1.noise_level)


def _sa_demo(cfg: RunConfig, em: _Emitter, summary: dict) -> None:
    sa = cfg.sa
    slopes = np.asarray(sa.slopes)
    target = np.asarray(sa.target)
    root = target / slopes
    schedule = sa.make_schedule()

    def oracle(x, rng):
        return slopes * x + sa.noise_std * rng.standard_normal(x.shape)

    # every budget replays the same per-run streams so the rows are comparable
    run_seeds = np.random.SeedSequence(rngmod.stream_seed(cfg.seed, rngmod.STREAMS["sa"]))
    run_seeds = run_seeds.spawn(sa.n_runs)
    rows = []
    for budget in sorted(sa.step_budgets):
        errors = []
        for i, seq in enumerate(run_seeds):
            g = np.random.default_rng(seq)
            with _stage("sa-core", f"run {i}, budget {budget}"):
                x_hat, _ = sa_solve(oracle, target, sa.x0, schedule, budget, g, sa.averaging)
            errors.append(float(np.linalg.norm(x_hat - root)))
        errors = np.asarray(errors)
        frac = float(np.mean(errors <= sa.tolerance))
        rows.append((budget, frac, float(errors.mean()), sa.n_runs))
        summary[f"within_fraction_{budget}"] = frac
    _write_rows(em.path("convergence.csv"),
                ["n_steps", "within_fraction", "mean_error", "n_runs"], rows)

    with _stage("sa-core", "trace run"):
        _, trace = sa_solve(oracle, target, sa.x0, schedule, max(sa.step_budgets),
                            rngmod.stream(cfg.seed, "eval"), sa.averaging, record_trace=True)
    write_trace_csv(em.path("trace.csv"), trace)

    diag = validate_schedule_a1(schedule, sa.a1_horizon)
    _write_rows(em.path("a1_diagnostic.csv"),
                ["horizon", "partial_sum", "partial_square_sum", "decay_exponent", "verdict"],
                [(sa.a1_horizon, diag.partial_sum, diag.partial_square_sum,
                  diag.decay_exponent, "pass" if diag.verdict else "fail")])


def _sde_policy(cfg: RunConfig, em: _Emitter, summary: dict) -> None:
    sd = cfg.sde
    params = sd.to_params()
    t_star = phase_change_point(params)
    grid = np.linspace(0.0, sd.horizon, sd.policy_points)
    optimal = Policy.optimal(params) if t_star is not None else Policy.constant(1.0)
    header_tag = "none" if t_star is None else repr(t_star)
    _write_rows(em.path("policy.csv"), ["t", f"u_t (t_star={header_tag})"],
                zip(grid.tolist(), np.atleast_1d(optimal(grid)).tolist()))

    rows = []
    policies = [("optimal", optimal), ("constant", Policy.constant(1.0)),
                ("inverse_time", Policy("inverse_time"))]
    sde_rng = rngmod.stream(cfg.seed, "sde")
    for (name, policy), g in zip(policies, sde_rng.spawn(len(policies))):
        em.log(f"simulating {sd.n_paths} paths under the {name} policy")
        with _stage("sde-sim", f"{name} policy"):
            keep = sd.record_paths if name == "optimal" else 0
            res = simulate_sde(params, policy, sd.horizon, sd.dt, sd.n_paths, g,
                               record_paths=keep, record_every=sd.record_every)
        rows.append((name, res.m_T, res.stderr, sd.n_paths))
        summary[f"m_T_{name}"] = res.m_T
        if keep:
            write_paths_csv(em.path("paths.csv"), res)
    _write_rows(em.path("summary.csv"), ["policy", "m_T", "stderr", "n_paths"], rows)
    if t_star is not None:
        summary["t_star"] = t_star


def _metrics_report(cfg: RunConfig, em: _Emitter, summary: dict) -> None:
    mc = cfg.metrics
    images = shapes_corpus(mc.n_images, mc.side, rngmod.stream(cfg.seed, "data"))
    eval_rng = rngmod.stream(cfg.seed, "eval")
    rows = [("sharpness_clean", sharpness(images), None, len(images))]
    for b in mc.bandwidths:
        blurred = gaussian_blur(images, b)
        rows.append((f"sharpness_blur_b{b:g}", sharpness(blurred), None, len(images)))
        rows.append((f"energy_blur_b{b:g}_vs_clean", energy_distance(blurred, images), None,
                     len(images)))

    x = images[0].ravel()

    def noisy(v, rng):
        return v + mc.noise_std * rng.standard_normal(v.shape)

    est = empirical_bias(noisy, x, mc.bias_trials, eval_rng)
    norm = float(np.linalg.norm(est.bias))
    rows.append(("bias_norm_noise_restorer", norm, float(np.linalg.norm(est.stderr)), est.n))
    est = empirical_bias(lambda v, rng: gaussian_blur(v.reshape(images[0].shape), 1.0).ravel(),
                         x, 2, eval_rng)
    rows.append(("bias_norm_blur_b1", float(np.linalg.norm(est.bias)), 0.0, est.n))

    a = eval_rng.standard_normal((mc.n_energy, 1))
    rows.append(("energy_normal_shift0.1", energy_distance(
        a, eval_rng.standard_normal((mc.n_energy, 1)) + 0.1), None, mc.n_energy))
    rows.append(("energy_normal_shift3", energy_distance(
        a, eval_rng.standard_normal((mc.n_energy, 1)) + 3.0), None, mc.n_energy))
    write_metrics_csv(em.path("metrics.csv"), rows)
    summary.update({name: value for name, value, _, _ in rows if math.isfinite(value)})


RUNNERS = {
    "swissroll": _swissroll,
    "shapes": _shapes,
    "sa-demo": _sa_demo,
    "sde-policy": _sde_policy,
    "metrics-report": _metrics_report,
}


def run(cfg: RunConfig, output_dir=None, log: Callable[[str], None] | None = None) -> RunReport:
    """Execute ``cfg.experiment`` and write its artifacts plus ``manifest.csv``.

    Raises :class:`NumericError` (message prefixed with module and step) when
    any stage produces non-finite values.
    """
    out = Path(output_dir if output_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    em = _Emitter(out, log or (lambda msg: None))
    summary: dict[str, float] = {}
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        RUNNERS[cfg.experiment](cfg, em, summary)
    write_manifest(out, em.files)
    return RunReport(out, sorted(em.files) + [MANIFEST], summary)
