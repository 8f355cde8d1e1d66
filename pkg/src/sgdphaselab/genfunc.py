"""Closed-form generating functions of the SE loss dynamics and their analysis.

The loss sequence under the SE recursion is generated by
``L~(z) = V~(z) / (2 (1 - z U~(z)))`` where the "noise" and "signal"
generating functions U~, V~ are sums of per-mode rational terms sharing a
cubic denominator S in z. This module evaluates those sums and their
analytic derivatives, locates the stability boundary U~(1) = 1 and the
divergence radius r_L, and reconstructs the loss sequence from the U/V
coefficient recursion as an independent oracle for the simulator.

Analysis assumptions (context invariants): beta in (-1, 1),
0 < alpha < 2 (1 + beta) / lambda_max, gamma in [0, 1], 0 < tau <= 1.
tau1 is fixed to 1 here; the simulator keeps it free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import AnalysisDomainError
from .numerics import bisect_monotone
from .serialize import json_ready
from .simulate import LossTrajectory, _divergence_threshold
from .spectrum import Spectrum

__all__ = [
    "GenFuncContext",
    "StabilityReport",
    "DivergenceReport",
    "UVValues",
    "eval_S",
    "eval_UV",
    "eval_U1",
    "eval_V1",
    "solve_lambda_crit",
    "stability_report",
    "solve_divergence",
    "compute_UV_sequences",
    "reconstruct_loss",
]


@dataclass(frozen=True)
class GenFuncContext:
    """Spectrum plus the (alpha, beta, gamma, tau) point under analysis."""

    spectrum: Spectrum
    alpha: float
    beta: float
    gamma: float
    tau: float = 1.0

    def violations(self) -> list[str]:
        out = []
        if not (-1.0 < self.beta < 1.0):
            out.append(f"beta = {self.beta!r} outside (-1, 1)")
        limit = 2.0 * (1.0 + self.beta) / self.spectrum.lambda_max
        if not (0.0 < self.alpha < limit):
            out.append(f"alpha = {self.alpha!r} outside (0, 2(1+beta)/lambda_max = {limit:.6g})")
        if not (0.0 <= self.gamma <= 1.0):
            out.append(f"gamma = {self.gamma!r} outside [0, 1]")
        if not (0.0 < self.tau <= 1.0):
            out.append(f"tau = {self.tau!r} outside (0, 1]")
        return out

    def require_valid(self) -> None:
        bad = self.violations()
        if bad:
            raise AnalysisDomainError("outside analysis domain: " + "; ".join(bad))

    @property
    def alpha_eff(self) -> float:
        return self.alpha / (1.0 - self.beta)


def _s_coefficients(alpha, beta, gamma_arg, lam):
    """Coefficients of S = 1 + c1 z + c2 z^2 + c3 z^3 (any argument may broadcast)."""
    al = alpha * lam
    c1 = al**2 * (gamma_arg - 1.0) + 2.0 * al * (beta + 1.0) - (beta**2 + beta + 1.0)
    c2 = al**2 * beta * (gamma_arg + 1.0) - 2.0 * al * beta * (beta + 1.0) + beta * (beta**2 + beta + 1.0)
    c3 = -(beta**3)
    return c1, c2, c3


def eval_S(alpha: float, beta: float, gamma_arg, lam, z):
    """The shared cubic denominator S(alpha, beta, g, lambda, z), Horner in z.

    Callers evaluating the generating functions pass ``g = tau * gamma``.
    Arguments broadcast, so ``lam`` and ``z`` may be arrays.
    """
    c1, c2, c3 = _s_coefficients(alpha, beta, gamma_arg, np.asarray(lam, dtype=float))
    z = np.asarray(z, dtype=float)
    return 1.0 + z * (c1 + z * (c2 + z * c3))


class UVValues(NamedTuple):
    u: float
    v: float
    du: float
    dv: float


def eval_UV(ctx: GenFuncContext, z: float) -> UVValues:
    """U~(z), V~(z) and their derivatives at a point z in [0, 1).

    Termwise evaluation over the truncated spectrum; derivatives come from
    the quotient rule on each rational term, never finite differences.
    Summation order is fixed (ascending mode index) for reproducibility.
    """
    ctx.require_valid()
    if not (0.0 <= z < 1.0):
        raise AnalysisDomainError(f"z = {z!r} outside [0, 1)")
    return _eval_uv_unchecked(ctx, z)


def _eval_uv_unchecked(ctx: GenFuncContext, z: float) -> UVValues:
    lam = ctx.spectrum.lambdas
    lc = ctx.spectrum.lambda_c0
    alpha, beta = ctx.alpha, ctx.beta
    g = ctx.tau * ctx.gamma
    c1, c2, c3 = _s_coefficients(alpha, beta, g, lam)
    s = 1.0 + z * (c1 + z * (c2 + z * c3))
    ds = c1 + z * (2.0 * c2 + z * 3.0 * c3)

    nu_u = ctx.gamma * alpha**2 * lam**2 * (beta * z + 1.0)
    dnu_u = ctx.gamma * alpha**2 * lam**2 * beta
    u = float(np.sum(nu_u / s))
    du = float(np.sum((dnu_u * s - nu_u * ds) / s**2))

    v1 = 2.0 * alpha * beta * lam - beta**2 - beta
    nu_v = lc * (1.0 + z * (v1 + z * beta**3))
    dnu_v = lc * (v1 + 2.0 * z * beta**3)
    v = float(np.sum(nu_v / s))
    dv = float(np.sum((dnu_v * s - nu_v * ds) / s**2))
    return UVValues(u, v, du, dv)


def eval_U1(ctx: GenFuncContext) -> float:
    """U~(1) in the direct z = 1 form:

    sum_k lambda_k / (lambda_k (tau - (1-beta)/(gamma(1+beta))) + 2(1-beta)/(alpha gamma)).

    Returns 0 for gamma = 0 (no sampling noise).
    """
    ctx.require_valid()
    if ctx.gamma == 0.0:
        return 0.0
    lam = ctx.spectrum.lambdas
    y = (1.0 - ctx.beta) / (ctx.gamma * (1.0 + ctx.beta))
    denom = lam * (ctx.tau - y) + 2.0 * (1.0 - ctx.beta) / (ctx.alpha * ctx.gamma)
    return float(np.sum(lam / denom))


def eval_V1(ctx: GenFuncContext) -> float:
    """V~(1): the z = 1 value of the signal generating function."""
    ctx.require_valid()
    lam = ctx.spectrum.lambdas
    lc = ctx.spectrum.lambda_c0
    beta = ctx.beta
    s1 = eval_S(ctx.alpha, beta, ctx.tau * ctx.gamma, lam, 1.0)
    num = lc * (2.0 * ctx.alpha * beta * lam + beta**3 - beta**2 - beta + 1.0)
    return float(np.sum(num / s1))


def solve_lambda_crit(spectrum: Spectrum, tau: float) -> float:
    """Unique positive solution of sum_k lambda_k / (tau lambda_k + x) = 1.

    The map is strictly decreasing in x, so plain bisection on
    (0, sum lambda_k] suffices. The single-mode tau = 1 case degenerates to
    the x -> 0 limit and returns 0.
    """
    if not (0.0 <= tau <= 1.0):
        raise AnalysisDomainError(f"tau = {tau!r} outside [0, 1]")
    lam = spectrum.lambdas
    if tau == 0.0:
        return float(np.sum(lam))  # linear equation: x = Tr H exactly
    limit0 = len(spectrum) / tau  # value of the sum as x -> 0+
    if limit0 < 1.0:
        raise AnalysisDomainError(
            f"sum_k 1/tau = {limit0:.4g} < 1 at x -> 0: no positive root (pathological truncation)"
        )
    if limit0 == 1.0:
        return 0.0

    def f(x: float) -> float:
        return float(np.sum(lam / (tau * lam + x))) - 1.0

    hi = float(np.sum(lam))
    root = bisect_monotone(f, 1e-300, hi, xtol=1e-12 * spectrum.lambda_max)
    assert abs(f(root)) <= 1e-10, "lambda_crit residual out of tolerance"
    return root


@dataclass(frozen=True)
class StabilityReport:
    """Convergence verdict and the critical effective learning rates."""

    u1: float
    converges: bool
    lambda_crit: float
    alpha_eff: float
    alpha_eff_bound: float      # 2 / (gamma lambda_crit)
    alpha_eff_critical: float   # exact critical alpha_eff at this (beta, gamma, tau)
    regime_flags: dict
    valid: bool = True
    reason: str = ""
    u1_truncated: float = math.nan  # finite truncated sum even when u1 is flagged inf

    def as_dict(self) -> dict:
        return json_ready({
            "U1": self.u1,
            "converges": self.converges,
            "lambda_crit": self.lambda_crit,
            "alpha_eff": self.alpha_eff,
            "alpha_eff_bound": self.alpha_eff_bound,
            "alpha_eff_critical": self.alpha_eff_critical,
            "regime_flags": self.regime_flags,
            "valid": self.valid,
            "reason": self.reason,
            "U1_truncated": self.u1_truncated,
        })


def stability_report(ctx: GenFuncContext, nu: float | None = None) -> StabilityReport:
    """Full stability analysis at one hyperparameter point.

    Never raises for out-of-window hyperparameters: CLI sweeps must traverse
    unstable regions, so structural violations come back as a non-convergent
    report with a reason. ``nu`` (a fitted tail exponent) raises the
    immediate-/eventual-divergence flags that a truncated sum cannot see.
    """
    flags = {
        "immediate_divergence": bool(nu is not None and nu <= 0.5),
        "eventual_divergence": bool(nu is not None and 0.5 < nu <= 1.0),
    }
    bad = ctx.violations()
    if bad:
        return StabilityReport(
            math.nan, False, math.nan, ctx.alpha / (1.0 - ctx.beta) if ctx.beta != 1.0 else math.inf,
            math.nan, math.nan, flags, valid=False, reason="; ".join(bad),
        )

    u1_trunc = eval_U1(ctx)
    divergent_tail = flags["immediate_divergence"] or flags["eventual_divergence"]
    u1 = math.inf if divergent_tail else u1_trunc
    lam_crit = solve_lambda_crit(ctx.spectrum, ctx.tau)
    bound = math.inf if ctx.gamma * lam_crit == 0.0 else 2.0 / (ctx.gamma * lam_crit)

    alpha_hi = 2.0 * (1.0 + ctx.beta) / ctx.spectrum.lambda_max
    probe = alpha_hi * (1.0 - 1e-12)
    if ctx.gamma == 0.0 or eval_U1(_with_alpha(ctx, probe)) <= 1.0:
        alpha_crit = alpha_hi  # sampling noise never binds before the heavy-ball boundary
    else:
        alpha_crit = bisect_monotone(
            lambda a: eval_U1(_with_alpha(ctx, a)) - 1.0, 1e-300, probe
        )
    return StabilityReport(
        u1=u1,
        converges=u1 < 1.0,
        lambda_crit=lam_crit,
        alpha_eff=ctx.alpha_eff,
        alpha_eff_bound=bound,
        alpha_eff_critical=alpha_crit / (1.0 - ctx.beta),
        regime_flags=flags,
        u1_truncated=u1_trunc,
    )


def _with_alpha(ctx: GenFuncContext, alpha: float) -> GenFuncContext:
    return GenFuncContext(ctx.spectrum, alpha, ctx.beta, ctx.gamma, ctx.tau)


@dataclass(frozen=True)
class DivergenceReport:
    """Exponential-divergence characteristics when U~(1) > 1."""

    r_l: float
    t_div: float       # -1 / ln(r_L)
    prefactor: float   # V~(r_L) / (2 (1 + r_L^2 U~'(r_L)))

    def as_dict(self) -> dict:
        return json_ready({"r_L": self.r_l, "t_div": self.t_div, "prefactor": self.prefactor})

    def asymptote(self, t) -> np.ndarray:
        """The late-time divergent branch ``prefactor * r_L**-t``."""
        return self.prefactor * self.r_l ** -np.asarray(t, dtype=float)


def solve_divergence(ctx: GenFuncContext) -> DivergenceReport:
    """Locate the radius r_L < 1 from z U~(z) = 1 and the divergence rate.

    ``z U~(z)`` is monotone increasing on (0, 1), from 0 to U~(1) > 1, so the
    root is bracketed and bisection runs to float exhaustion.
    """
    ctx.require_valid()
    u1 = eval_U1(ctx)
    if not (u1 > 1.0):
        raise AnalysisDomainError(f"U~(1) = {u1:.6g} <= 1: dynamics is not divergent")

    def g(z: float) -> float:
        return z * _eval_uv_unchecked(ctx, z).u - 1.0

    r = bisect_monotone(g, 1e-300, np.nextafter(1.0, 0.0))
    uv = _eval_uv_unchecked(ctx, r)
    assert abs(r * uv.u - 1.0) <= 1e-12, "r_L residual out of tolerance"
    return DivergenceReport(r, -1.0 / math.log(r), uv.v / (2.0 * (1.0 + r**2 * uv.du)))


def compute_UV_sequences(ctx: GenFuncContext, horizon: int):
    """The coefficient sequences U_1..U_T and V_1..V_T of the generating functions.

    Iterates the per-mode 4x4 evolution operator on the two seed matrices;
    partial sums of ``U_{t+1} z^t`` converge to U~(z) (geometric tail), which
    the tests exploit.
    """
    ctx.require_valid()
    if horizon < 1:
        raise AnalysisDomainError(f"horizon must be >= 1, got {horizon}")
    lam = ctx.spectrum.lambdas
    alpha, beta = ctx.alpha, ctx.beta
    a11 = 1.0 - alpha * lam
    a21 = -alpha * lam
    q = ctx.tau * ctx.gamma * alpha**2 * lam**2

    def advance(c, j, v):
        c2 = a11 * (a11 * c + 2.0 * beta * j) + beta**2 * v - q * c
        j2 = a11 * a21 * c + beta * (a11 + a21) * j + beta**2 * v - q * c
        v2 = a21 * (a21 * c + 2.0 * beta * j) + beta**2 * v - q * c
        return c2, j2, v2

    u_seq = np.empty(horizon)
    v_seq = np.empty(horizon)
    cu = lam**2
    ju, vu = cu.copy(), cu.copy()       # noise seed lambda^2 * ones(2,2)
    cv = ctx.spectrum.lambda_c0.copy()  # signal seed lambda C_0 * E11
    jv = np.zeros_like(cv)
    vv = np.zeros_like(cv)
    scale = ctx.gamma * alpha**2
    for t in range(horizon):
        u_seq[t] = scale * cu.sum()
        v_seq[t] = cv.sum()
        if t + 1 < horizon:
            cu, ju, vu = advance(cu, ju, vu)
            cv, jv, vv = advance(cv, jv, vv)
    return u_seq, v_seq


def reconstruct_loss(ctx: GenFuncContext, horizon: int) -> LossTrajectory:
    """Rebuild L(0..T) from the U/V recursion:

    L(T) = V_{T+1}/2 + sum_{t=1..T} U_{T+1-t} L(t-1).

    O(T^2) overall; an independent oracle for :func:`run_se` on the same
    spectrum and parameters (with tau1 = 1).
    """
    ctx.require_valid()
    if horizon < 0:
        raise AnalysisDomainError(f"horizon must be >= 0, got {horizon}")
    u_seq, v_seq = compute_UV_sequences(ctx, horizon + 1)
    losses = np.empty(horizon + 1)
    losses[0] = 0.5 * v_seq[0]
    threshold = _divergence_threshold(losses[0])
    diverged_at = None
    for n in range(1, horizon + 1):
        losses[n] = 0.5 * v_seq[n] + float(np.dot(u_seq[:n][::-1], losses[:n]))
        if not (losses[n] <= threshold):
            diverged_at = n
            losses = losses[: n + 1]
            break
    meta = {
        "regime": "genfunc", "alpha": ctx.alpha, "beta": ctx.beta,
        "gamma": ctx.gamma, "tau": ctx.tau, "modes": len(ctx.spectrum),
    }
    return LossTrajectory(losses, None, diverged_at, meta)
