"""Command-line front end: presets, sweeps, and CSV/JSON/SVG artifacts.

Commands
--------
simulate       loss trajectories (se / noiseless / mc / moments regimes)
stability-map  (alpha, beta) sweep with the analytic boundary column
divergence     r_L, t_div, blow-up analysis plus the simulated trajectory
asymptotics    power-law loss asymptote report with an empirical slope check
phase-diagram  phase grid over (zeta, 1/nu)
fit            power-law exponents fitted to a spectrum
se-error       quadratic SE-approximation error of the exact noise term

Every run writes a manifest with sha256 checksums of the emitted files.
Exit codes: 0 success, 2 validation error, 3 analysis-domain error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, svg
from .asymptotics import PhaseLabel, blowup_time, classify_phase, loss_asymptote
from .errors import AnalysisDomainError, ValidationError
from .genfunc import GenFuncContext, eval_U1, solve_divergence, stability_report
from .simulate import SGDParams, run_full_moments, run_mc, run_noiseless, run_se, run_se_grid
from .serialize import json_ready
from .spectrum import (
    FeatureProblem,
    PowerLawSpec,
    Spectrum,
    build_power_law,
    build_torus_problem,
    eigendecompose,
    fit_power_law,
    load_spectrum_csv,
)

COMMANDS = ("simulate", "stability-map", "asymptotics", "divergence", "phase-diagram", "fit", "se-error")
REGIMES = ("se", "noiseless", "mc", "moments")

_DEFAULTS = dict(
    Lambda=1.0, K=1.0, modes=200, c0_mode="differenced",
    alpha=0.5, beta=0.0, tau1=1.0, tau2=1.0, steps=10_000, runs=1000, seed=0,
    regime="se", out="out", tail_start=None, kernel_scale=0.35, plot=False,
    full_scale=False, grid_alpha=None, grid_beta=None, batch_list=None,
)


@dataclass
class ExperimentConfig:
    command: str
    # problem source (exactly one)
    nu: float | None = None
    kappa: float | None = None
    Lambda: float = 1.0
    K: float = 1.0
    modes: int = 200
    c0_mode: str = "differenced"
    csv: str | None = None
    torus: int | None = None
    kernel_scale: float = 0.35
    random_features: tuple[int, int] | None = None
    # SGD parameters
    alpha: float = 0.5
    beta: float = 0.0
    gamma: float | None = None
    batch: int | None = None
    dataset_size: float | None = None
    tau1: float = 1.0
    tau2: float = 1.0
    steps: int = 10_000
    runs: int = 1000
    seed: int = 0
    regime: str = "se"
    # sweep grids
    grid_alpha: tuple[float, float, int] | None = None
    grid_beta: tuple[float, float, int] | None = None
    batch_list: list[int] | None = None
    full_scale: bool = False
    # output
    out: str = "out"
    plot: bool = False
    tail_start: int | None = None

    def sgd_params(self, steps: int | None = None) -> SGDParams:
        return SGDParams(
            alpha=self.alpha, beta=self.beta, gamma=self.gamma, batch=self.batch,
            tau1=self.tau1, tau2=self.tau2, steps=steps if steps is not None else self.steps,
        )

    def echo(self) -> dict:
        d = {k: v for k, v in self.__dict__.items()}
        return json_ready(d)


def _parse_grid(text: str) -> tuple[float, float, int]:
    parts = text.split(":")
    if len(parts) != 3:
        raise ValidationError(f"grid spec {text!r} is not of the form lo:hi:n")
    try:
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise ValidationError(f"grid spec {text!r} has non-numeric parts") from None
    if n < 1 or hi < lo:
        raise ValidationError(f"grid spec {text!r} needs hi >= lo and n >= 1")
    return lo, hi, n


_CONFIG_KEYS = {
    "command", "nu", "kappa", "Lambda", "K", "modes", "c0_mode", "csv", "torus",
    "kernel_scale", "random_features", "alpha", "beta", "gamma", "batch",
    "dataset_size", "tau1", "tau2", "steps", "runs", "seed", "regime",
    "grid_alpha", "grid_beta", "batch_list", "full_scale", "out", "plot", "tail_start",
}


def _read_config_file(path: str) -> dict:
    """Flat key = value file, a TOML-compatible subset: no sections, no nesting."""
    values: dict = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ValidationError(f"cannot read config file {path}: {exc}") from None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip().replace("-", "_")
        val = val.strip()
        if key not in _CONFIG_KEYS:
            raise ValidationError(f"{path}:{lineno}: unknown key {key!r}")
        if val.startswith('"') and val.endswith('"') and len(val) >= 2:
            values[key] = val[1:-1]
        elif val.lower() in ("true", "false"):
            values[key] = val.lower() == "true"
        else:
            try:
                values[key] = int(val)
            except ValueError:
                try:
                    values[key] = float(val)
                except ValueError:
                    values[key] = val
    return values


def _build_argparser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="sgdphaselab",
        description="Mini-batch SGD with momentum on quadratic problems: simulate and analyze.",
    )
    p.add_argument("command", nargs="?", choices=COMMANDS)
    p.add_argument("--config", help="flat key = value config file; flags override it")
    p.add_argument("--nu", type=float)
    p.add_argument("--kappa", type=float)
    p.add_argument("--Lambda", type=float, dest="Lambda")
    p.add_argument("--K", type=float, dest="K")
    p.add_argument("--modes", type=int)
    p.add_argument("--c0-mode", choices=("differenced", "pointwise"), dest="c0_mode")
    p.add_argument("--csv", help="spectrum CSV path (k,lambda,lambda_c)")
    p.add_argument("--torus", type=int, metavar="N", help="1-D torus grid size")
    p.add_argument("--kernel-scale", type=float, dest="kernel_scale")
    p.add_argument("--random-features", metavar="d,N", dest="random_features")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--dataset-size", type=float, dest="dataset_size")
    p.add_argument("--tau1", type=float)
    p.add_argument("--tau2", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--regime", help="comma list of: " + ",".join(REGIMES))
    p.add_argument("--grid-alpha", dest="grid_alpha", metavar="lo:hi:n")
    p.add_argument("--grid-beta", dest="grid_beta", metavar="lo:hi:n")
    p.add_argument("--batch-list", dest="batch_list", metavar="b1,b2,...")
    p.add_argument("--full-scale", action="store_true", dest="full_scale", default=None)
    p.add_argument("--out", help="output directory")
    p.add_argument("--plot", action="store_true", default=None)
    p.add_argument("--tail-start", type=int, dest="tail_start")
    return p


def parse_config(argv: list[str]) -> ExperimentConfig:
    """Merge flags over an optional config file into a validated ExperimentConfig."""
    ns = _build_argparser().parse_args(argv)
    merged: dict = dict(_DEFAULTS)
    if ns.config:
        merged.update(_read_config_file(ns.config))
    for key in _CONFIG_KEYS - {"command"}:
        val = getattr(ns, key, None)
        if val is not None:
            merged[key] = val
    command = ns.command or merged.get("command")
    if command not in COMMANDS:
        raise ValidationError(f"missing or unknown command {command!r}; choose from {COMMANDS}")
    merged.pop("command", None)

    if isinstance(merged.get("grid_alpha"), str):
        merged["grid_alpha"] = _parse_grid(merged["grid_alpha"])
    if isinstance(merged.get("grid_beta"), str):
        merged["grid_beta"] = _parse_grid(merged["grid_beta"])
    if isinstance(merged.get("random_features"), str):
        try:
            d, n = (int(x) for x in merged["random_features"].split(","))
        except ValueError:
            raise ValidationError(
                f"--random-features wants 'd,N', got {merged['random_features']!r}"
            ) from None
        merged["random_features"] = (d, n)
    if isinstance(merged.get("batch_list"), str):
        try:
            merged["batch_list"] = [int(x) for x in merged["batch_list"].split(",")]
        except ValueError:
            raise ValidationError(f"--batch-list wants integers, got {merged['batch_list']!r}") from None

    cfg = ExperimentConfig(command=command, **merged)

    sources = [cfg.nu is not None or cfg.kappa is not None, cfg.csv is not None,
               cfg.torus is not None, cfg.random_features is not None]
    if sum(sources) > 1:
        raise ValidationError("conflicting problem sources: give exactly one of "
                              "power-law (--nu/--kappa), --csv, --torus, --random-features")
    if not (-1.0 < cfg.beta < 1.0):
        raise ValidationError(f"beta = {cfg.beta} out of range: beta must lie in (-1, 1)")
    if cfg.alpha <= 0:
        raise ValidationError(f"alpha = {cfg.alpha} out of range: alpha must be positive")
    if cfg.gamma is not None and not (0.0 <= cfg.gamma <= 1.0):
        raise ValidationError(f"gamma = {cfg.gamma} out of range: gamma must lie in [0, 1]")
    if cfg.steps < 1 or cfg.runs < 1 or cfg.modes < 2:
        raise ValidationError("steps, runs and modes must be positive (modes >= 2)")
    for r in cfg.regime.split(","):
        if r not in REGIMES:
            raise ValidationError(f"unknown regime {r!r}; choose from {REGIMES}")
    return cfg


# ---------------------------------------------------------------------------
# problem construction


def _periodic_kernel(n: int, scale: float) -> np.ndarray:
    """Exponential kernel on the circle; strictly PSD and well conditioned."""
    x = 2.0 * np.pi * np.arange(n) / n
    return np.exp(-np.abs(2.0 * np.sin(x / 2.0)) / scale)


def _spectrum_from_config(cfg: ExperimentConfig) -> Spectrum:
    if cfg.csv is not None:
        return load_spectrum_csv(cfg.csv)
    if cfg.torus is not None:
        return _torus_from_config(cfg).spectrum()
    if cfg.random_features is not None:
        return eigendecompose(_features_from_config(cfg)).spectrum
    if cfg.nu is None or cfg.kappa is None:
        raise ValidationError("power-law source needs both --nu and --kappa")
    return build_power_law(
        PowerLawSpec(cfg.Lambda, cfg.nu, cfg.K, cfg.kappa, cfg.modes, cfg.c0_mode)
    )


def _torus_from_config(cfg: ExperimentConfig):
    n = cfg.torus
    if n is None or n < 1:
        raise ValidationError("--torus needs a positive grid size")
    rng = np.random.default_rng(cfg.seed)
    w0 = rng.normal(size=n)
    return build_torus_problem((n,), _periodic_kernel(n, cfg.kernel_scale), w0=w0)


def _features_from_config(cfg: ExperimentConfig) -> FeatureProblem:
    d, n = cfg.random_features
    if d < 1 or n < 1:
        raise ValidationError("--random-features dimensions must be positive")
    rng = np.random.default_rng(cfg.seed)
    return FeatureProblem.create(rng.normal(size=(d, n)), np.zeros(d), rng.normal(size=d))


def _feature_problem_for(cfg: ExperimentConfig) -> FeatureProblem:
    if cfg.torus is not None:
        return _torus_from_config(cfg).feature_problem
    if cfg.random_features is not None:
        return _features_from_config(cfg)
    raise ValidationError("this command needs an explicit feature problem: --torus or --random-features")


def _resolved_gamma(cfg: ExperimentConfig, spectrum: Spectrum) -> float:
    n = cfg.dataset_size if cfg.dataset_size is not None else spectrum.dataset_size
    return cfg.sgd_params().resolve_gamma(n)


def _thread_count() -> int:
    env = os.environ.get("SGDPHASELAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValidationError(f"SGDPHASELAB_THREADS={env!r} is not an integer") from None
    return min(8, os.cpu_count() or 1)


# ---------------------------------------------------------------------------
# emission helpers


class _Emitter:
    """Tracks written files so failures can clean up and manifests can checksum."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.paths: list[Path] = []
        out_dir.mkdir(parents=True, exist_ok=True)
        if not os.access(out_dir, os.W_OK):
            raise ValidationError(f"output directory {out_dir} is not writable")

    def path(self, name: str) -> Path:
        p = self.out_dir / name
        self.paths.append(p)
        return p

    def write_text(self, name: str, text: str) -> Path:
        p = self.path(name)
        p.write_text(text, encoding="utf-8")
        return p

    def write_json(self, name: str, obj) -> Path:
        return self.write_text(name, json.dumps(json_ready(obj), indent=2, sort_keys=True) + "\n")

    def cleanup(self) -> None:
        for p in self.paths:
            try:
                p.unlink()
            except OSError:
                pass

    def manifest(self, cfg: ExperimentConfig, wall_time: float) -> Path:
        files = []
        for p in self.paths:
            digest = hashlib.sha256(p.read_bytes()).hexdigest()
            files.append({"path": p.name, "sha256": digest, "bytes": p.stat().st_size})
        doc = {
            "tool": "sgdphaselab",
            "version": __version__,
            "command": cfg.command,
            "config": cfg.echo(),
            "seed": cfg.seed,
            "wall_time_s": wall_time,
            "files": files,
        }
        p = self.out_dir / "manifest.json"
        p.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return p


def _trajectory_sidecar(cfg, traj, spectrum=None) -> dict:
    doc = {
        "parameters": traj.metadata,
        "seed": cfg.seed,
        "diverged": traj.diverged_at is not None,
        "diverged_at": traj.diverged_at,
    }
    if spectrum is not None and "tail_estimates" in spectrum.meta:
        doc["truncation_tail_estimate"] = spectrum.meta["tail_estimates"]
    return doc


def _positive_series(losses: np.ndarray):
    t = np.arange(len(losses))
    keep = (t >= 1) & (losses > 0)
    return t[keep], losses[keep]


# ---------------------------------------------------------------------------
# commands


def _cmd_simulate(cfg: ExperimentConfig, em: _Emitter) -> None:
    spectrum = _spectrum_from_config(cfg)
    if cfg.batch_list:
        _simulate_batch_sweep(cfg, em, spectrum)
        return
    regimes = cfg.regime.split(",")
    series = []
    for regime in regimes:
        if regime == "se":
            traj = run_se(spectrum, cfg.sgd_params().with_(
                gamma=_resolved_gamma(cfg, spectrum), batch=None))
        elif regime == "noiseless":
            traj = run_noiseless(spectrum, cfg.sgd_params())
        elif regime == "mc":
            traj = run_mc(_feature_problem_for(cfg), cfg.sgd_params(), cfg.runs, cfg.seed)
        else:
            traj = run_full_moments(_feature_problem_for(cfg), cfg.sgd_params())
        traj.save_csv(em.path(f"trajectory_{regime}.csv"))
        em.write_json(f"trajectory_{regime}.meta.json", _trajectory_sidecar(cfg, traj, spectrum))
        ts, ls = _positive_series(traj.losses)
        if ts.size:
            series.append((regime, ts, ls))
    if cfg.plot and series:
        em.write_text("trajectories.svg", svg.loglog_chart(series, title="loss trajectories"))


def _simulate_batch_sweep(cfg: ExperimentConfig, em: _Emitter, spectrum: Spectrum) -> None:
    """SE trajectories for each batch size, for budget-scaling (b*t) comparisons."""
    n = cfg.dataset_size if cfg.dataset_size is not None else spectrum.dataset_size
    series = []
    for b in cfg.batch_list:
        # each sweep point derives its own gamma from the batch size
        params = cfg.sgd_params().with_(batch=int(b), gamma=None)
        traj = run_se(spectrum, params.with_(gamma=params.resolve_gamma(n), batch=None))
        traj.save_csv(em.path(f"trajectory_se_b{b}.csv"))
        em.write_json(f"trajectory_se_b{b}.meta.json", _trajectory_sidecar(cfg, traj, spectrum))
        ts, ls = _positive_series(traj.losses)
        if ts.size:
            series.append((f"b={b}", b * ts, ls))
    if cfg.plot and series:
        em.write_text("budget_scaling.svg", svg.loglog_chart(
            series, title="loss vs compute budget b*t", xlabel="b*t"))


def _stability_grids(cfg: ExperimentConfig):
    explicit_steps = cfg.steps if cfg.steps != _DEFAULTS["steps"] else None
    if cfg.full_scale:
        ga = cfg.grid_alpha or (0.04, 4.0, 100)
        gb = cfg.grid_beta or (0.0, 0.98, 50)
        steps = explicit_steps or 10_000
    else:
        ga = cfg.grid_alpha or (0.1, 4.0, 40)
        gb = cfg.grid_beta or (0.0, 0.95, 20)
        steps = explicit_steps or 1000
    alphas = np.linspace(ga[0], ga[1], ga[2])
    betas = np.linspace(gb[0], gb[1], gb[2])
    return alphas, betas, steps


def _cmd_stability_map(cfg: ExperimentConfig, em: _Emitter) -> None:
    spectrum = _spectrum_from_config(cfg)
    gamma = _resolved_gamma(cfg, spectrum)
    alphas, betas, steps = _stability_grids(cfg)

    workers = _thread_count()
    chunks = np.array_split(np.arange(alphas.size), min(workers, alphas.size))

    def sweep(idx):
        return run_se_grid(spectrum, alphas[idx], betas, gamma, cfg.tau1, cfg.tau2, steps)

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(sweep, chunks))
    else:
        parts = [sweep(idx) for idx in chunks]
    final = np.concatenate([p["final_loss"] for p in parts], axis=0)
    diverged = np.concatenate([p["diverged_at"] for p in parts], axis=0)

    u1 = np.full((alphas.size, betas.size), math.nan)
    boundary = np.empty(betas.size)
    for j, beta in enumerate(betas):
        rep = stability_report(GenFuncContext(spectrum, float(alphas[0]), float(beta), gamma, cfg.tau2))
        boundary[j] = rep.alpha_eff_critical * (1.0 - beta) if rep.valid else math.nan
        for i, alpha in enumerate(alphas):
            ctx = GenFuncContext(spectrum, float(alpha), float(beta), gamma, cfg.tau2)
            if not ctx.violations():
                u1[i, j] = eval_U1(ctx)

    lines = ["alpha,beta,final_loss,predicted_U1,predicted_boundary"]
    for i, alpha in enumerate(alphas):
        for j, beta in enumerate(betas):
            fl = final[i, j] if diverged[i, j] < 0 else math.inf
            lines.append(
                f"{_csv_float(alpha)},{_csv_float(beta)},{_csv_float(fl)},"
                f"{_csv_float(u1[i, j])},{_csv_float(boundary[j])}"
            )
    em.write_text("stability_map.csv", "\n".join(lines) + "\n")
    if cfg.plot:
        cells = np.where(diverged >= 0, math.nan, final)
        pts = [(boundary[j], betas[j]) for j in range(betas.size) if math.isfinite(boundary[j])]
        em.write_text("stability_map.svg", svg.heatmap_chart(
            alphas, betas, cells, boundary=pts,
            title="final loss over (alpha, beta); dark = diverged",
        ))


def _csv_float(x: float) -> str:
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(float(x))


def _fit_for(cfg: ExperimentConfig, spectrum: Spectrum):
    tail = cfg.tail_start if cfg.tail_start is not None else max(1, len(spectrum) // 4)
    return fit_power_law(spectrum, tail)


def _cmd_divergence(cfg: ExperimentConfig, em: _Emitter) -> None:
    spectrum = _spectrum_from_config(cfg)
    gamma = _resolved_gamma(cfg, spectrum)
    ctx = GenFuncContext(spectrum, cfg.alpha, cfg.beta, gamma, cfg.tau2)
    div = solve_divergence(ctx)
    report = div.as_dict()
    fit = _fit_for(cfg, spectrum)
    report["fit"] = fit.as_dict()
    try:
        blow = blowup_time(ctx, fit)
        report["blowup"] = blow.as_dict()
    except AnalysisDomainError as exc:
        report["blowup"] = {"not_applicable": str(exc)}

    steps = cfg.steps
    traj = run_se(spectrum, cfg.sgd_params(steps).with_(gamma=gamma, batch=None))
    traj.save_csv(em.path("trajectory_se.csv"))
    em.write_json("trajectory_se.meta.json", _trajectory_sidecar(cfg, traj, spectrum))
    em.write_json("divergence_report.json", report)
    if cfg.plot:
        ts, ls = _positive_series(traj.losses)
        markers = []
        if div.t_div < len(traj.losses):
            markers.append(("t_div", div.t_div, float(np.interp(div.t_div, ts, ls))))
        if "t_blowup" in report.get("blowup", {}):
            tb = report["blowup"]["t_blowup"]
            if tb < len(traj.losses):
                markers.append(("t_blowup", tb, float(np.interp(tb, ts, ls))))
        em.write_text("divergence.svg", svg.loglog_chart(
            [("se", ts, ls)],
            guides=[(-fit.zeta, 1.0, traj.losses[0], "early branch slope")],
            markers=markers, title="divergent trajectory",
        ))


def _cmd_asymptotics(cfg: ExperimentConfig, em: _Emitter) -> None:
    spectrum = _spectrum_from_config(cfg)
    gamma = _resolved_gamma(cfg, spectrum)
    ctx = GenFuncContext(spectrum, cfg.alpha, cfg.beta, gamma, cfg.tau2)
    fit = _fit_for(cfg, spectrum)
    report = loss_asymptote(ctx, fit)
    doc = report.as_dict()
    doc["fit"] = fit.as_dict()

    # empirical check of the pointwise power-law form: simulate and fit the
    # last-decade slope rather than asserting the asymptote holds
    traj = run_se(spectrum, cfg.sgd_params().with_(gamma=gamma, batch=None))
    t = np.arange(len(traj.losses))
    window = (t >= max(1, cfg.steps // 10)) & (traj.losses > 0)
    if traj.diverged_at is None and np.count_nonzero(window) >= 8:
        slope, level = np.polyfit(np.log(t[window]), np.log(traj.losses[window]), 1)
        doc["empirical"] = {
            "slope": slope,
            "predicted_exponent": report.exponent,
            "slope_gap": slope - report.exponent,
            "window_start": int(t[window][0]),
            "window_end": int(t[window][-1]),
        }
    else:
        doc["empirical"] = {"note": "trajectory diverged or window too short"}
    em.write_json("asymptote_report.json", doc)
    if cfg.plot:
        ts, ls = _positive_series(traj.losses)
        t_ref = float(ts[-1])
        em.write_text("asymptotics.svg", svg.loglog_chart(
            [("se", ts, ls)],
            guides=[(report.exponent, t_ref, report.constant * t_ref**report.exponent,
                     f"slope {report.exponent:.3g}")],
            title="loss vs analytic asymptote",
        ))


def _cmd_phase_diagram(cfg: ExperimentConfig, em: _Emitter) -> None:
    zetas = np.linspace(0.125, 3.0, 24)
    inv_nus = np.linspace(0.125, 3.0, 24)
    lines = ["nu,zeta,phase,exponent,constant"]
    for inv_nu in inv_nus:
        nu = 1.0 / inv_nu
        for zeta in zetas:
            phase = classify_phase(nu, zeta)
            exponent = math.nan
            constant = math.nan
            if phase is PhaseLabel.SIGNAL_DOMINATED:
                exponent = -zeta
            elif phase is PhaseLabel.NOISE_DOMINATED:
                exponent = 1.0 / nu - 2.0
            if phase in (PhaseLabel.SIGNAL_DOMINATED, PhaseLabel.NOISE_DOMINATED):
                from .spectrum import PowerLawFit

                spec = build_power_law(
                    PowerLawSpec(cfg.Lambda, nu, cfg.K, zeta * nu, cfg.modes, cfg.c0_mode)
                )
                ctx = GenFuncContext(spec, cfg.alpha, cfg.beta, cfg.gamma or 0.1, cfg.tau2)
                if not ctx.violations() and eval_U1(ctx) < 1.0:
                    # the spectrum is an exact power law, so its exponents are known
                    fit = PowerLawFit(cfg.Lambda, nu, cfg.K, zeta * nu, 1, 0.0, 0.0)
                    try:
                        constant = loss_asymptote(ctx, fit).constant
                    except AnalysisDomainError:
                        constant = math.nan
            lines.append(
                f"{_csv_float(nu)},{_csv_float(zeta)},{phase.value},"
                f"{_csv_float(exponent)},{_csv_float(constant)}"
            )
    em.write_text("phase_diagram.csv", "\n".join(lines) + "\n")


def _cmd_fit(cfg: ExperimentConfig, em: _Emitter) -> None:
    spectrum = _spectrum_from_config(cfg)
    fit = _fit_for(cfg, spectrum)
    doc = fit.as_dict()
    doc["modes"] = len(spectrum)
    doc["phase"] = classify_phase(fit.nu, fit.zeta).value
    em.write_json("power_law_fit.json", doc)
    if cfg.plot:
        k = np.arange(1, len(spectrum) + 1, dtype=float)
        em.write_text("spectrum_fit.svg", svg.loglog_chart(
            [("lambda_k", k, spectrum.lambdas),
             ("S_k", k, spectrum.partial_weight_sums())],
            guides=[(-fit.nu, 1.0, fit.Lambda, f"slope -{fit.nu:.3g}"),
                    (-fit.kappa, 1.0, fit.K, f"slope -{fit.kappa:.3g}")],
            title="spectrum power-law fit", xlabel="k", ylabel="value",
        ))


def _cmd_se_error(cfg: ExperimentConfig, em: _Emitter) -> None:
    from .simulate import se_fit_error

    problem = _feature_problem_for(cfg)
    report = se_fit_error(problem, problem.initial_second_moment(), cfg.tau1, cfg.tau2)
    em.write_json("se_error.json", {
        "E2": report.e2, "tau1": report.tau1, "tau2": report.tau2,
        "coefficients": report.coefficients,
        "tau2_opt_on_tau1_eq_1": report.tau2_opt, "E2_opt": report.e2_opt,
    })


_DISPATCH = {
    "simulate": _cmd_simulate,
    "stability-map": _cmd_stability_map,
    "divergence": _cmd_divergence,
    "asymptotics": _cmd_asymptotics,
    "phase-diagram": _cmd_phase_diagram,
    "fit": _cmd_fit,
    "se-error": _cmd_se_error,
}


def run_command(cfg: ExperimentConfig) -> int:
    """Execute the configured command; returns the process exit code."""
    start = time.monotonic()
    em = _Emitter(Path(cfg.out))
    try:
        _DISPATCH[cfg.command](cfg, em)
    except ValidationError as exc:
        em.cleanup()
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except AnalysisDomainError as exc:
        em.cleanup()
        print(f"analysis error: {exc}", file=sys.stderr)
        return 3
    em.manifest(cfg, time.monotonic() - start)
    return 0


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse_config(argv)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return run_command(cfg)


if __name__ == "__main__":
    sys.exit(main())
