"""Loss-trajectory simulators at three fidelity levels, plus the noise operators.

Regimes, from cheapest to most faithful:

* diagonal second-moment recursion under the spectrally-expressible noise
  closure (:func:`run_se`, :func:`run_noiseless`) -- O(M) per step;
* exact full-matrix second-moment dynamics with the true mini-batch noise
  covariance (:func:`run_full_moments`) -- O(d^3) per step;
* Monte-Carlo over sampled batch sequences (:func:`run_mc`).

The SE recursion evolves per-mode 2x2 blocks in output-space normalization
(states are ``lambda_k C_kk`` etc.), which keeps small-eigenvalue modes
well-scaled and matches the spectrum's stored ``lambda_c0`` directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import AnalysisDomainError, ValidationError
from .spectrum import FeatureProblem, Spectrum, gamma_for_batch

__all__ = [
    "SGDParams",
    "LossTrajectory",
    "SeFitReport",
    "run_se",
    "run_se_grid",
    "run_noiseless",
    "run_full_moments",
    "run_mc",
    "run_additive_noise",
    "exact_noise_covariance",
    "se_noise_diagonal",
    "se_fit_error",
    "DIVERGENCE_RATIO",
]

DIVERGENCE_RATIO = 1e12   # L(t) > ratio * L(0) flags divergence
DIVERGENCE_FLOOR = 1e300  # absolute threshold when L(0) = 0
FULL_MOMENT_DIM_LIMIT = 256


@dataclass(frozen=True)
class SGDParams:
    """Hyperparameters of one SGD configuration.

    ``gamma`` may be given directly or left None and derived from
    ``(dataset_size, batch)``; the Monte-Carlo path always needs ``batch``.
    """

    alpha: float
    beta: float = 0.0
    gamma: float | None = None
    batch: int | None = None
    tau1: float = 1.0
    tau2: float = 1.0
    steps: int = 1000

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            raise ValidationError(f"alpha must be positive, got {self.alpha!r}")
        if not (-1.0 < self.beta < 1.0):
            raise ValidationError(f"beta must lie in (-1, 1), got {self.beta!r}")
        if self.gamma is not None and not (0.0 <= self.gamma <= 1.0):
            raise ValidationError(f"gamma must lie in [0, 1], got {self.gamma!r}")
        if self.batch is not None and not (isinstance(self.batch, (int, np.integer)) and self.batch >= 1):
            raise ValidationError(f"batch must be a positive integer, got {self.batch!r}")
        if not (isinstance(self.steps, (int, np.integer)) and self.steps >= 1):
            raise ValidationError(f"steps must be a positive integer, got {self.steps!r}")
        if not (math.isfinite(self.tau1) and math.isfinite(self.tau2)):
            raise ValidationError("tau1 and tau2 must be finite")

    @property
    def alpha_eff(self) -> float:
        return self.alpha / (1.0 - self.beta)

    def resolve_gamma(self, dataset_size: float) -> float:
        if self.gamma is not None:
            return self.gamma
        if self.batch is None:
            raise ValidationError("need either gamma or batch (with a dataset size) to fix the noise amplitude")
        return gamma_for_batch(dataset_size, self.batch)

    def with_(self, **kwargs) -> "SGDParams":
        return replace(self, **kwargs)

    def as_dict(self) -> dict:
        return {
            "alpha": self.alpha, "beta": self.beta, "gamma": self.gamma,
            "batch": self.batch, "tau1": self.tau1, "tau2": self.tau2,
            "steps": self.steps, "alpha_eff": self.alpha_eff,
        }


@dataclass
class LossTrajectory:
    """Recorded losses L(0..T), truncated at the step that crossed the
    divergence threshold (``diverged_at``) if that happened."""

    losses: np.ndarray
    stderr: np.ndarray | None = None
    diverged_at: int | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def final_loss(self) -> float:
        return float(self.losses[-1])

    @property
    def initial_loss(self) -> float:
        return float(self.losses[0])

    def save_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("t,loss,stderr\n")
            for t, loss in enumerate(self.losses):
                err = "" if self.stderr is None else repr(float(self.stderr[t]))
                fh.write(f"{t},{float(loss)!r},{err}\n")


def _divergence_threshold(loss0: float) -> float:
    return DIVERGENCE_RATIO * loss0 if loss0 > 0.0 else DIVERGENCE_FLOOR


def run_se(spectrum: Spectrum, params: SGDParams) -> LossTrajectory:
    """Evolve the per-mode (C, J, V) blocks under the SE noise closure.

    Each step applies the 2x2 congruence with [[1 - a*lam, b], [-a*lam, b]]
    and adds the noise increment
    ``gamma a^2 lam^2 (tau1 * sum_l lam_l C_ll - tau2 * lam_k C_kk)``
    to all four block entries. Divergence is a recorded outcome, not an error.
    """
    gamma = params.resolve_gamma(spectrum.dataset_size)
    lam = spectrum.lambdas
    alpha, beta = params.alpha, params.beta
    a11 = 1.0 - alpha * lam
    a21 = -alpha * lam
    noise_scale = gamma * alpha**2 * lam**2

    c = spectrum.lambda_c0.copy()
    j = np.zeros_like(c)
    v = np.zeros_like(c)
    losses = np.empty(params.steps + 1)
    losses[0] = 0.5 * c.sum()
    threshold = _divergence_threshold(losses[0])
    min_moment = float(c.min(initial=0.0))
    diverged_at = None

    for t in range(1, params.steps + 1):
        c_new = a11 * (a11 * c + 2.0 * beta * j) + beta**2 * v
        j_new = a21 * a11 * c + beta * (a11 + a21) * j + beta**2 * v
        v_new = a21 * (a21 * c + 2.0 * beta * j) + beta**2 * v
        noise = noise_scale * (params.tau1 * c.sum() - params.tau2 * c)
        c = c_new + noise
        j = j_new + noise
        v = v_new + noise
        loss = 0.5 * c.sum()
        losses[t] = loss
        m = float(c.min())
        if m < min_moment:
            min_moment = m
        if not (loss <= threshold):
            diverged_at = t
            losses = losses[: t + 1]
            break

    meta = params.as_dict()
    meta.update(
        regime="se", gamma_resolved=gamma, modes=len(spectrum),
        dataset_size=spectrum.dataset_size, min_output_moment=min_moment,
        negative_moments=min_moment < 0.0, spectrum_meta=dict(spectrum.meta),
    )
    return LossTrajectory(losses, None, diverged_at, meta)


def run_noiseless(spectrum: Spectrum, params: SGDParams) -> LossTrajectory:
    """SE recursion with the noise amplitude forced to zero (plain heavy-ball GD)."""
    traj = run_se(spectrum, params.with_(gamma=0.0, batch=None))
    traj.metadata["regime"] = "noiseless"
    return traj


def run_se_grid(
    spectrum: Spectrum,
    alphas: Sequence[float],
    betas: Sequence[float],
    gamma: float,
    tau1: float,
    tau2: float,
    steps: int,
) -> dict:
    """Batched SE sweep over the (alpha, beta) product grid.

    Per-cell arithmetic is identical to :func:`run_se`; diverged cells are
    frozen at the crossing step. Returns final/min losses and divergence
    steps as (len(alphas), len(betas)) arrays (divergence step -1 = never).
    """
    lam = spectrum.lambdas
    pairs = [(a, b) for a in alphas for b in betas]
    n = len(pairs)
    a_arr = np.array([p[0] for p in pairs])[:, None]
    b_arr = np.array([p[1] for p in pairs])[:, None]
    a11 = 1.0 - a_arr * lam[None, :]
    a21 = -a_arr * lam[None, :]
    noise_scale = gamma * a_arr**2 * lam[None, :] ** 2
    beta2 = b_arr**2

    c = np.broadcast_to(spectrum.lambda_c0, (n, lam.size)).copy()
    j = np.zeros_like(c)
    v = np.zeros_like(c)
    loss0 = 0.5 * spectrum.lambda_c0.sum()
    threshold = _divergence_threshold(loss0)

    final = np.full(n, loss0)
    min_loss = np.full(n, loss0)
    diverged = np.full(n, -1, dtype=int)
    active = np.ones(n, dtype=bool)

    for t in range(1, steps + 1):
        c_new = a11 * (a11 * c + 2.0 * b_arr * j) + beta2 * v
        j_new = a21 * a11 * c + b_arr * (a11 + a21) * j + beta2 * v
        v_new = a21 * (a21 * c + 2.0 * b_arr * j) + beta2 * v
        noise = noise_scale * (tau1 * c.sum(axis=1, keepdims=True) - tau2 * c)
        c = c_new + noise
        j = j_new + noise
        v = v_new + noise
        loss = 0.5 * c.sum(axis=1)
        crossed = active & ~(loss <= threshold)
        if crossed.any():
            final[crossed] = loss[crossed]
            diverged[crossed] = t
            active &= ~crossed
            c[crossed] = 0.0
            j[crossed] = 0.0
            v[crossed] = 0.0
        final[active] = loss[active]
        np.minimum(min_loss, np.where(active, loss, min_loss), out=min_loss)

    shape = (len(alphas), len(betas))
    return {
        "final_loss": final.reshape(shape),
        "min_loss": min_loss.reshape(shape),
        "diverged_at": diverged.reshape(shape),
    }


def exact_noise_covariance(problem: FeatureProblem, c_matrix: np.ndarray) -> np.ndarray:
    """Mini-batch sampling-noise covariance (per unit gamma):

    Sigma(C) = (1/N) sum_i <psi_i, C psi_i> psi_i psi_i^T - H C H.
    """
    psi = problem.features
    c = np.asarray(c_matrix, dtype=float)
    if c.shape != (problem.dim, problem.dim):
        raise ValidationError(f"C must be {problem.dim} x {problem.dim}, got {c.shape}")
    h = problem.hessian
    q = np.einsum("ij,ij->j", psi, c @ psi)
    sigma = (psi * q) @ psi.T / problem.dataset_size - h @ c @ h
    return 0.5 * (sigma + sigma.T)


def se_noise_diagonal(spectrum: Spectrum, c_diag, tau1: float = 1.0, tau2: float = 1.0) -> np.ndarray:
    """Per-mode SE noise: Sigma_kk = tau1 lam_k sum_l lam_l C_ll - tau2 lam_k^2 C_kk."""
    c = np.asarray(c_diag, dtype=float)
    lam = spectrum.lambdas
    if c.shape != lam.shape:
        raise ValidationError("c_diag length must match the spectrum")
    return tau1 * lam * np.sum(lam * c) - tau2 * lam**2 * c


@dataclass(frozen=True)
class SeFitReport:
    """Relative quadratic trace distance between the exact and SE noise terms.

    ``E2(t1, t2) = |Sigma - t1 A + t2 B|_F^2 / |Sigma|_F^2`` with
    A = H Tr(HC) and B = HCH; quadratic in (t1, t2), so six inner products
    determine it everywhere.
    """

    e2: float
    tau1: float
    tau2: float
    coefficients: dict
    tau2_opt: float      # minimizer of E2(1, .) on the tau1 = 1 line
    e2_opt: float

    def evaluate(self, tau1: float, tau2: float) -> float:
        c = self.coefficients
        num = (
            c["ss"] - 2.0 * tau1 * c["sa"] + 2.0 * tau2 * c["sb"]
            + tau1**2 * c["aa"] - 2.0 * tau1 * tau2 * c["ab"] + tau2**2 * c["bb"]
        )
        return num / c["ss"]


def se_fit_error(problem: FeatureProblem, c_matrix: np.ndarray, tau1: float = 1.0, tau2: float = 1.0) -> SeFitReport:
    """Measure how spectrally expressible the exact noise term is for this problem.

    ``e2`` is formed from the difference matrix directly (the coefficient
    expansion cancels catastrophically when the fit is nearly exact); the
    coefficients back the quadratic-form view and the line minimizer.
    """
    sigma = exact_noise_covariance(problem, c_matrix)
    h = problem.hessian
    c = np.asarray(c_matrix, dtype=float)
    a = h * float(np.trace(h @ c))
    b = h @ c @ h
    coef = {
        "ss": float(np.sum(sigma * sigma)),
        "sa": float(np.sum(sigma * a)),
        "sb": float(np.sum(sigma * b)),
        "aa": float(np.sum(a * a)),
        "ab": float(np.sum(a * b)),
        "bb": float(np.sum(b * b)),
    }
    if coef["ss"] <= 0.0:
        raise AnalysisDomainError("exact noise covariance is zero; E2 is undefined")

    def direct(t1: float, t2: float) -> float:
        diff = sigma - t1 * a + t2 * b
        return float(np.sum(diff * diff)) / coef["ss"]

    tau2_opt = (coef["ab"] - coef["sb"]) / coef["bb"] if coef["bb"] > 0 else 0.0
    return SeFitReport(direct(tau1, tau2), tau1, tau2, coef, tau2_opt, direct(1.0, tau2_opt))


def run_full_moments(
    problem: FeatureProblem,
    params: SGDParams,
    noise: str = "exact",
    moment_observer=None,
) -> LossTrajectory:
    """Exact dense dynamics of the combined second-moment matrix.

    ``noise="exact"`` uses the true batch-sampling covariance;
    ``noise="se"`` substitutes the SE-family surrogate
    ``tau1 H Tr(HC) - tau2 HCH`` (useful for invariance checks).
    ``moment_observer(t, M)`` is called with the combined 2d x 2d moment
    matrix after every step, for inspection.
    """
    d = problem.dim
    if d > FULL_MOMENT_DIM_LIMIT:
        raise ValidationError(
            f"dimension {d} exceeds the dense-path limit {FULL_MOMENT_DIM_LIMIT}"
        )
    if noise not in ("exact", "se"):
        raise ValidationError(f"noise must be 'exact' or 'se', got {noise!r}")
    gamma = params.resolve_gamma(problem.dataset_size)
    h = problem.hessian
    psi = problem.features
    n = problem.dataset_size
    alpha, beta = params.alpha, params.beta
    a = np.eye(d) - alpha * h

    c = problem.initial_second_moment()
    j = np.zeros_like(c)
    v = np.zeros_like(c)
    losses = np.empty(params.steps + 1)
    losses[0] = 0.5 * float(np.sum(h * c))
    threshold = _divergence_threshold(losses[0])
    diverged_at = None

    for t in range(1, params.steps + 1):
        if noise == "exact":
            q = np.einsum("ij,ij->j", psi, c @ psi)
            sigma = (psi * q) @ psi.T / n - h @ c @ h
        else:
            sigma = params.tau1 * h * float(np.sum(h * c)) - params.tau2 * h @ c @ h
        sigma = gamma * alpha**2 * 0.5 * (sigma + sigma.T)
        ac = a @ c
        aj = a @ j
        c_new = ac @ a.T + beta * (aj + aj.T) + beta**2 * v
        j_new = -alpha * (h @ (ac.T + beta * j)).T + beta * aj + beta**2 * v
        hc = h @ c
        v_new = alpha**2 * hc @ h.T - alpha * beta * (h @ j + (h @ j).T) + beta**2 * v
        c = c_new + sigma
        j = j_new + sigma
        v = v_new + sigma
        loss = 0.5 * float(np.sum(h * c))
        losses[t] = loss
        if moment_observer is not None:
            moment_observer(t, np.block([[c, j], [j.T, v]]))
        if not (loss <= threshold):
            diverged_at = t
            losses = losses[: t + 1]
            break

    meta = params.as_dict()
    meta.update(
        regime="moments", noise=noise, gamma_resolved=gamma,
        dataset_size=n, dim=d,
    )
    return LossTrajectory(losses, None, diverged_at, meta)


def _philox_stream(seed: int, index: int) -> np.random.Generator:
    # Counter-based substreams: the user seed is the Philox key, the run index
    # sits in the top counter word, so streams never overlap and dispatch
    # order (or thread count) cannot change any run's draws.
    bitgen = np.random.Philox(key=np.uint64(seed), counter=[0, 0, 0, int(index)])
    return np.random.Generator(bitgen)


def run_mc(problem: FeatureProblem, params: SGDParams, runs: int, seed: int) -> LossTrajectory:
    """Monte-Carlo mini-batch SGD: mean population loss and standard error.

    Batches are drawn uniformly without replacement each step (the b smallest
    of N per-run uniforms). Results are a pure function of (inputs, seed).
    """
    if not (isinstance(runs, (int, np.integer)) and runs >= 1):
        raise ValidationError(f"runs must be a positive integer, got {runs!r}")
    if params.batch is None:
        raise ValidationError("Monte-Carlo path needs an explicit batch size")
    n = problem.dataset_size
    b = int(params.batch)
    if b > n:
        raise ValidationError(f"batch size {b} exceeds dataset size {n}")
    d = problem.dim
    steps = params.steps
    psi = problem.features
    h = problem.hessian
    alpha, beta = params.alpha, params.beta

    if b == n:
        idx = np.broadcast_to(np.arange(n), (runs, steps, n))
    else:
        idx = np.empty((runs, steps, b), dtype=np.intp)
        for r in range(runs):
            u = _philox_stream(seed, r).random((steps, n))
            idx[r] = np.argpartition(u, b - 1, axis=1)[:, :b]

    w = np.broadcast_to(problem.deviation, (runs, d)).copy()
    v = np.zeros_like(w)
    mean = np.empty(steps + 1)
    err = np.empty(steps + 1)
    loss_r = 0.5 * np.einsum("rd,de,re->r", w, h, w)
    mean[0], err[0] = loss_r.mean(), 0.0
    threshold = _divergence_threshold(mean[0])
    diverged_at = None

    for t in range(1, steps + 1):
        cols = psi[:, idx[:, t - 1, :]]                   # (d, runs, b)
        proj = np.einsum("drb,rd->rb", cols, w)
        grad = np.einsum("drb,rb->rd", cols, proj) / b    # H(B_t) w per run
        v = beta * v - alpha * grad
        w = w + v
        loss_r = 0.5 * np.einsum("rd,de,re->r", w, h, w)
        mean[t] = loss_r.mean()
        err[t] = loss_r.std(ddof=1) / math.sqrt(runs) if runs > 1 else 0.0
        if not (mean[t] <= threshold):
            diverged_at = t
            mean, err = mean[: t + 1], err[: t + 1]
            break

    meta = params.as_dict()
    meta.update(regime="mc", runs=int(runs), seed=int(seed), dataset_size=n, dim=d,
                gamma_resolved=gamma_for_batch(n, b))
    return LossTrajectory(mean, err, diverged_at, meta)


def run_additive_noise(spectrum: Spectrum, params: SGDParams, g_diag) -> tuple[LossTrajectory, float]:
    """SGD with additive (state-independent) gradient noise of covariance diag(G).

    Restricted to beta = 0, where the stationary moments have the closed form
    ``C_kk = alpha G_kk / (lambda_k (2 - alpha lambda_k))``; returns the
    trajectory and the loss floor ``L_inf = 0.5 sum_k alpha G_kk / (2 - alpha lambda_k)``.
    """
    g = np.asarray(g_diag, dtype=float)
    lam = spectrum.lambdas
    if g.shape != lam.shape:
        raise ValidationError("g_diag length must match the spectrum")
    if np.any(g < 0) or not np.all(np.isfinite(g)):
        raise ValidationError("noise covariance diagonal must be finite and non-negative")
    if params.beta != 0.0:
        raise AnalysisDomainError("additive-noise floor is derived for beta = 0 only")
    alpha = params.alpha
    if alpha * spectrum.lambda_max >= 2.0:
        raise AnalysisDomainError(
            f"alpha * lambda_max = {alpha * spectrum.lambda_max:.4g} >= 2: no stationary state"
        )

    a11 = 1.0 - alpha * lam  # composed as in run_se so the G = 0 case matches it exactly
    c = spectrum.lambda_c0.copy()                  # output normalization lam * C
    inject = alpha**2 * lam * g
    losses = np.empty(params.steps + 1)
    losses[0] = 0.5 * c.sum()
    for t in range(1, params.steps + 1):
        c = a11 * (a11 * c) + inject
        losses[t] = 0.5 * c.sum()

    l_inf = 0.5 * float(np.sum(alpha * g / (2.0 - alpha * lam)))
    meta = params.as_dict()
    meta.update(regime="additive", modes=len(spectrum), loss_floor=l_inf)
    return LossTrajectory(losses, None, None, meta), l_inf
