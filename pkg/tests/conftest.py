import math

import numpy as np
import pytest

from sgdphaselab import FeatureProblem, Spectrum, build_torus_problem


def exp_kernel(n: int, scale: float = 0.35) -> np.ndarray:
    """Exponential kernel on the circle: strictly PSD, moderate condition number."""
    x = 2.0 * np.pi * np.arange(n) / n
    return np.exp(-np.abs(2.0 * np.sin(x / 2.0)) / scale)


def random_spectrum(rng: np.random.Generator, modes: int = 20, lam_lo: float = 0.05) -> Spectrum:
    lam = np.sort(rng.uniform(lam_lo, 1.0, modes))[::-1]
    c0 = rng.uniform(0.0, 2.0, modes)
    return Spectrum.from_c0(lam, c0)


def random_problem(rng: np.random.Generator, dim: int, n: int) -> FeatureProblem:
    return FeatureProblem.create(
        rng.normal(size=(dim, n)), np.zeros(dim), rng.normal(size=dim)
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)


@pytest.fixture
def torus64():
    gen = np.random.default_rng(7)
    return build_torus_problem((64,), exp_kernel(64), w0=gen.normal(size=64))


def max_rel_err(a, b, floor: float = 1e-300) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / scale))


def loglog_slope(losses, t_lo: int, t_hi: int) -> tuple[float, float]:
    """OLS slope and geometric-midpoint level of a loss tail on log-log axes."""
    t = np.arange(len(losses))
    m = (t >= t_lo) & (t <= t_hi) & (losses > 0)
    slope, intercept = np.polyfit(np.log(t[m]), np.log(np.asarray(losses)[m]), 1)
    t_mid = math.sqrt(t_lo * t_hi)
    return float(slope), math.exp(intercept + slope * math.log(t_mid))
