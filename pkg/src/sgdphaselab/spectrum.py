"""Spectral descriptions of quadratic problems.

A quadratic problem is either given explicitly by a feature matrix
(:class:`FeatureProblem`) or summarized by its spectral data
(:class:`Spectrum`): the Hessian eigenvalues ``lambda_k`` together with
the initial diagonal second moments ``C_kk,0`` of the deviation from the
optimum. Everything downstream (simulators, generating functions,
asymptotics) consumes one of these two descriptions.

All types here are immutable; construction normalizes (sorts) and
validates, and the arrays are flagged read-only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

from .errors import CsvParseError, ValidationError

__all__ = [
    "Spectrum",
    "PowerLawSpec",
    "FeatureProblem",
    "TorusProblem",
    "PowerLawFit",
    "EigenDecomposition",
    "build_power_law",
    "gamma_for_batch",
    "eigendecompose",
    "build_torus_problem",
    "fit_power_law",
    "load_spectrum_csv",
    "save_spectrum_csv",
]

RANK_EPS = 1e-12  # eigenvalues below RANK_EPS * lambda_max count as null modes


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(np.asarray(a, dtype=float))
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Spectrum:
    """Truncated eigenvalue / initial-moment pair ``{lambda_k, C_kk,0}``.

    ``lambda_c0`` stores the products ``lambda_k * C_kk,0`` (the natural
    quantity in output-space normalization and in the CSV format); whichever
    of ``c0`` / ``lambda_c0`` was given at construction is kept verbatim and
    the other derived, so file round-trips are exact.
    """

    lambdas: np.ndarray
    c0: np.ndarray
    lambda_c0: np.ndarray
    dataset_size: float = math.inf
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_c0(cls, lambdas, c0, dataset_size: float = math.inf, meta: dict | None = None) -> "Spectrum":
        lam = np.asarray(lambdas, dtype=float)
        c = np.asarray(c0, dtype=float)
        lam, (c,) = _sorted_desc(lam, c)
        return cls(_readonly(lam), _readonly(c), _readonly(lam * c), float(dataset_size), dict(meta or {}))

    @classmethod
    def from_weighted(cls, lambdas, lambda_c0, dataset_size: float = math.inf, meta: dict | None = None) -> "Spectrum":
        lam = np.asarray(lambdas, dtype=float)
        lc = np.asarray(lambda_c0, dtype=float)
        lam, (lc,) = _sorted_desc(lam, lc)
        return cls(_readonly(lam), _readonly(lc / lam), _readonly(lc), float(dataset_size), dict(meta or {}))

    def __post_init__(self):
        lam, c = self.lambdas, self.c0
        if lam.ndim != 1 or lam.size < 1:
            raise ValidationError("spectrum needs at least one eigenvalue")
        if not np.all(np.isfinite(lam)) or np.any(lam <= 0):
            raise ValidationError("eigenvalues must be finite and strictly positive")
        if np.any(np.diff(lam) > 0):
            raise ValidationError("eigenvalues must be sorted non-increasing")
        if c.shape != lam.shape:
            raise ValidationError("c0 must have the same length as lambdas")
        if not np.all(np.isfinite(c)) or np.any(c < 0):
            raise ValidationError("initial moments must be finite and non-negative")
        if self.lambda_c0.shape != lam.shape or not np.allclose(
            self.lambda_c0, lam * c, rtol=1e-12, atol=0.0
        ):
            raise ValidationError("lambda_c0 must equal lambdas * c0 (use the from_* constructors)")
        n = self.dataset_size
        if not (math.isfinite(n) and n == int(n) and n >= 1) and n != math.inf:
            raise ValidationError("dataset_size must be a positive integer or inf")

    def __len__(self) -> int:
        return self.lambdas.size

    @property
    def lambda_max(self) -> float:
        return float(self.lambdas[0])

    @property
    def trace(self) -> float:
        """Tr H of the truncated operator."""
        return float(np.sum(self.lambdas))

    @property
    def sq_trace(self) -> float:
        """Tr H^2 of the truncated operator."""
        return float(np.sum(self.lambdas**2))

    @property
    def weighted_trace(self) -> float:
        """Tr(H C_0) = sum_k lambda_k C_kk,0."""
        return float(np.sum(self.lambda_c0))

    @property
    def c0_trace(self) -> float:
        """Tr C_0 restricted to the truncated modes."""
        return float(np.sum(self.c0))

    @property
    def initial_loss(self) -> float:
        return 0.5 * self.weighted_trace

    def partial_weight_sums(self) -> np.ndarray:
        """S_k = sum_{l >= k} lambda_l C_ll,0 for k = 1..M (index 0-based)."""
        return np.cumsum(self.lambda_c0[::-1])[::-1]


def _sorted_desc(lam: np.ndarray, *cols: np.ndarray):
    """Sort eigenvalues non-increasing, carrying companion columns along."""
    if np.any(np.diff(lam) > 0):
        order = np.argsort(-lam, kind="stable")
        return lam[order], tuple(col[order] for col in cols)
    return lam, cols


@dataclass(frozen=True)
class PowerLawSpec:
    """Parameters of a synthetic power-law problem.

    Eigenvalues decay as ``Lambda * k**-nu``; the partial sums
    ``S_k = sum_{l>=k} lambda_l C_ll,0`` decay as ``K * k**-kappa``.
    ``mode`` selects how the per-mode moments realize that law:
    ``"differenced"`` makes every partial sum exact, ``"pointwise"`` sets
    ``lambda_k C_kk,0 = K * kappa * k**-(kappa+1)`` (the experimental recipe).
    """

    Lambda: float
    nu: float
    K: float
    kappa: float
    modes: int
    mode: str = "differenced"

    def __post_init__(self):
        for name in ("Lambda", "nu", "K", "kappa"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValidationError(f"{name} must be a positive real, got {v!r}")
        if not (isinstance(self.modes, int) and self.modes >= 2):
            raise ValidationError(f"modes must be an integer >= 2, got {self.modes!r}")
        if self.mode not in ("differenced", "pointwise"):
            raise ValidationError(f"mode must be 'differenced' or 'pointwise', got {self.mode!r}")

    @property
    def zeta(self) -> float:
        return self.kappa / self.nu

    def tail_estimates(self) -> dict:
        """Integral bounds on what the truncation at ``modes`` discards.

        Upper-bounds the dropped parts of Tr H, Tr H^2 and Tr(H C_0) by
        integrating the fitted power laws from ``modes`` to infinity.
        """
        M, L, nu, K, kap = self.modes, self.Lambda, self.nu, self.K, self.kappa
        trace_tail = math.inf if nu <= 1 else L * M ** (1 - nu) / (nu - 1)
        sq_tail = math.inf if nu <= 0.5 else L**2 * M ** (1 - 2 * nu) / (2 * nu - 1)
        # differenced mode telescopes the full weighted trace into M modes
        weighted_tail = 0.0 if self.mode == "differenced" else K * M**-kap
        return {"trace": trace_tail, "sq_trace": sq_tail, "weighted_trace": weighted_tail}


def build_power_law(spec: PowerLawSpec) -> Spectrum:
    """Materialize a truncated power-law spectrum from its parameters."""
    k = np.arange(1, spec.modes + 1, dtype=float)
    lam = spec.Lambda * k**-spec.nu
    if spec.mode == "differenced":
        s = spec.K * k**-spec.kappa
        lc = np.empty_like(s)
        lc[:-1] = s[:-1] - s[1:]
        lc[-1] = s[-1]  # S_{M+1} = 0: the last mode absorbs the remaining mass
    else:
        lc = spec.K * spec.kappa * k ** -(spec.kappa + 1.0)
    meta = {
        "source": "power-law",
        "c0_mode": spec.mode,
        "Lambda": spec.Lambda,
        "nu": spec.nu,
        "K": spec.K,
        "kappa": spec.kappa,
        "modes": spec.modes,
        "tail_estimates": spec.tail_estimates(),
    }
    return Spectrum.from_weighted(lam, lc, dataset_size=math.inf, meta=meta)


def gamma_for_batch(dataset_size: float, batch: int) -> float:
    """Sampling-noise amplitude for batches of size ``batch`` drawn without replacement.

    Finite datasets give (N - b) / ((N - 1) b); infinite datasets give 1 / b.
    A full batch (b = N) has no sampling noise, so gamma is exactly 0 there,
    which also covers the N = 1 case where the finite-N form is 0/0.
    """
    if not (isinstance(batch, (int, np.integer)) and batch >= 1):
        raise ValidationError(f"batch size must be an integer >= 1, got {batch!r}")
    n = float(dataset_size)
    if n == math.inf:
        return 1.0 / batch
    if not (n == int(n) and n >= 1):
        raise ValidationError(f"dataset_size must be a positive integer or inf, got {dataset_size!r}")
    if batch > n:
        raise ValidationError(f"batch size {batch} exceeds dataset size {int(n)}")
    if batch == n:
        return 0.0
    return (n - batch) / ((n - 1.0) * batch)


@dataclass(frozen=True)
class FeatureProblem:
    """Explicit quadratic problem: features ``psi(x_i)`` as columns of a d x N matrix.

    The Hessian is H = (1/N) Psi Psi^T; the deviation ``w0 - w_star`` seeds
    the initial second moments.
    """

    features: np.ndarray  # (d, N), column i = psi(x_i)
    w_star: np.ndarray
    w0: np.ndarray

    @classmethod
    def create(cls, features, w_star, w0) -> "FeatureProblem":
        f = np.asarray(features, dtype=float)
        ws = np.asarray(w_star, dtype=float)
        w0 = np.asarray(w0, dtype=float)
        return cls(_readonly(f), _readonly(ws), _readonly(w0))

    def __post_init__(self):
        f = self.features
        if f.ndim != 2 or f.shape[0] < 1 or f.shape[1] < 1:
            raise ValidationError("features must be a d x N matrix with d, N >= 1")
        d = f.shape[0]
        if self.w_star.shape != (d,) or self.w0.shape != (d,):
            raise ValidationError("w_star and w0 must be d-vectors matching the feature dimension")
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(self.w_star)) and np.all(np.isfinite(self.w0))):
            raise ValidationError("feature problem entries must be finite")

    @property
    def dim(self) -> int:
        return self.features.shape[0]

    @property
    def dataset_size(self) -> int:
        return self.features.shape[1]

    @cached_property
    def hessian(self) -> np.ndarray:
        h = self.features @ self.features.T / self.dataset_size
        return _readonly(0.5 * (h + h.T))

    @property
    def deviation(self) -> np.ndarray:
        return self.w0 - self.w_star

    def initial_second_moment(self) -> np.ndarray:
        dw = self.deviation
        return np.outer(dw, dw)

    def loss(self, w: np.ndarray) -> float:
        dw = np.asarray(w, dtype=float) - self.w_star
        return 0.5 * float(dw @ self.hessian @ dw)


class EigenDecomposition(NamedTuple):
    spectrum: Spectrum
    basis: np.ndarray  # (d, M) orthonormal eigenvectors, columns sorted with the spectrum
    c0: np.ndarray


def eigendecompose(problem: FeatureProblem) -> EigenDecomposition:
    """Symmetric eigendecomposition of H restricted to its numerically nonzero part.

    Modes with ``lambda <= RANK_EPS * lambda_max`` are dropped; the initial
    moments are the rank-one projections ``C_kk,0 = <u_k, w0 - w_star>^2``.
    """
    h = problem.hessian
    eigvals, eigvecs = np.linalg.eigh(h)
    lam_max = float(eigvals[-1]) if eigvals.size else 0.0
    if lam_max <= 0.0:
        raise ValidationError("Hessian has no positive eigenvalues (zero matrix?)")
    keep = eigvals > RANK_EPS * lam_max
    lam = eigvals[keep][::-1]
    basis = eigvecs[:, keep][:, ::-1]
    c0 = (basis.T @ problem.deviation) ** 2
    spectrum = Spectrum.from_c0(
        lam, c0, dataset_size=problem.dataset_size, meta={"source": "eigendecomposition"}
    )
    return EigenDecomposition(spectrum, _readonly(basis), spectrum.c0)


@dataclass(frozen=True)
class TorusProblem:
    """Regular-grid problem with a translation-invariant kernel.

    The Hessian is circulant, so its eigenvalues are the (scaled) DFT of the
    kernel samples and its eigenvectors are the Fourier modes. Degenerate
    eigenvalue pairs (k and -k) make the per-mode diagonal well-defined only
    in the complex Fourier basis, so diagonals are extracted here rather than
    through :func:`eigendecompose`.
    """

    grid: tuple
    kernel_values: np.ndarray       # K_i on the grid
    eigenvalues_grid: np.ndarray    # DFT(K) / sqrt(N), grid-shaped, k-indexed
    feature_problem: FeatureProblem

    @property
    def size(self) -> int:
        return int(np.prod(self.grid))

    @cached_property
    def fourier_matrix(self) -> np.ndarray:
        """Unitary Fourier matrix F[i, k] = exp(+i k.x_i) / sqrt(N), flattened C-order."""
        cols = []
        for n in self.grid:
            idx = np.arange(n)
            cols.append(np.exp(2j * np.pi * np.outer(idx, idx) / n) / math.sqrt(n))
        f = cols[0]
        for c in cols[1:]:
            f = np.kron(f, c)
        f.setflags(write=False)
        return f

    def fourier_diag(self, matrix: np.ndarray) -> np.ndarray:
        """Diagonal <f_k, A f_k> in the complex Fourier eigenbasis (real output)."""
        f = self.fourier_matrix
        return np.real(np.einsum("ik,ij,jk->k", np.conj(f), matrix, f))

    def fourier_c0(self) -> np.ndarray:
        """Initial moments |<f_k, w0 - w_star>|^2 per Fourier mode."""
        coeffs = np.conj(self.fourier_matrix).T @ self.feature_problem.deviation
        return np.abs(coeffs) ** 2

    def spectrum(self) -> Spectrum:
        """Sorted spectrum with Fourier-basis initial moments; null modes dropped."""
        lam = self.eigenvalues_grid.ravel()
        c0 = self.fourier_c0()
        keep = lam > RANK_EPS * float(lam.max())
        return Spectrum.from_c0(
            lam[keep], c0[keep], dataset_size=self.size,
            meta={"source": "torus", "grid": list(self.grid)},
        )


def build_torus_problem(grid: Sequence[int], kernel_values, w0=None, w_star=None) -> TorusProblem:
    """Build the circulant problem for kernel samples ``K(x_i - x_0)`` on a grid.

    Eigenvalues are ``DFT(K)[k] / sqrt(N)``; an explicit real feature matrix
    with exactly this circulant Hessian is synthesized (the circulant square
    root scaled by sqrt(N)) so the exact-noise simulators can run on it.
    """
    grid = tuple(int(n) for n in grid)
    if len(grid) < 1 or any(n < 1 for n in grid):
        raise ValidationError("grid must list positive per-dimension sizes")
    kern = np.asarray(kernel_values, dtype=float)
    if kern.shape != grid:
        raise ValidationError(f"kernel_values shape {kern.shape} does not match grid {grid}")
    if not np.all(np.isfinite(kern)):
        raise ValidationError("kernel values must be finite")
    # symmetry under i -> -i (indexwise modular reflection)
    reflected = kern[tuple(np.meshgrid(*[(-np.arange(n)) % n for n in grid], indexing="ij"))]
    if not np.allclose(kern, reflected, rtol=0.0, atol=1e-12 * max(1.0, float(np.abs(kern).max()))):
        raise ValidationError("kernel must be symmetric under index reflection i -> -i")

    n_total = int(np.prod(grid))
    spec = np.fft.fftn(kern)
    lam = spec.real / math.sqrt(n_total)
    lam_max = float(lam.max())
    if lam_max <= 0.0:
        raise ValidationError("kernel DFT has no positive coefficient")
    if float(lam.min()) < -1e-10 * lam_max:
        raise ValidationError(
            f"kernel is not positive semi-definite: min DFT coefficient {lam.min():.3e}"
        )
    lam_clipped = np.maximum(lam, 0.0)

    # circulant square root: first "column" ifftn(sqrt(lam)), then Psi = sqrt(N) * B
    root_col = np.fft.ifftn(np.sqrt(lam_clipped)).real
    idx = np.meshgrid(*[np.arange(n) for n in grid], indexing="ij")
    flat_rows = []
    for offsets in np.ndindex(*grid):
        shifted = tuple((i - o) % n for i, o, n in zip(idx, offsets, grid))
        flat_rows.append(root_col[shifted].ravel())
    b = np.array(flat_rows)  # B[i, j] = root_col[(i - j) mod grid]
    features = math.sqrt(n_total) * b

    if w_star is None:
        w_star = np.zeros(n_total)
    if w0 is None:
        w0 = np.zeros(n_total)
    problem = FeatureProblem.create(features, w_star, w0)
    return TorusProblem(grid, _readonly(kern), _readonly(lam), problem)


@dataclass(frozen=True)
class PowerLawFit:
    """Least-squares power-law exponents fitted to a spectrum tail."""

    Lambda: float
    nu: float
    K: float
    kappa: float
    tail_start: int
    residual: float           # mean squared log-log residual of the eigenvalue fit
    residual_weights: float   # same for the partial-sum fit

    @property
    def zeta(self) -> float:
        return self.kappa / self.nu

    def as_dict(self) -> dict:
        return {
            "Lambda": self.Lambda, "nu": self.nu, "K": self.K, "kappa": self.kappa,
            "zeta": self.zeta, "tail_start": self.tail_start,
            "residual": self.residual, "residual_weights": self.residual_weights,
        }


def _loglog_line(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """OLS fit log y = a + b log x; returns (exp(a), -b, mean sq residual)."""
    lx, ly = np.log(x), np.log(y)
    b, a = np.polyfit(lx, ly, 1)
    resid = ly - (a + b * lx)
    return math.exp(a), -b, float(np.mean(resid**2))


def fit_power_law(spectrum: Spectrum, tail_start: int) -> PowerLawFit:
    """Fit ``Lambda k**-nu`` to the eigenvalues and ``K k**-kappa`` to the
    partial sums ``S_k``, using modes ``k >= tail_start`` (1-based)."""
    m = len(spectrum)
    if not (1 <= tail_start <= m):
        raise ValidationError(f"tail_start {tail_start} outside 1..{m}")
    if m - tail_start + 1 < 8:
        raise ValidationError(f"tail too short: {m - tail_start + 1} modes, need >= 8")
    k = np.arange(tail_start, m + 1, dtype=float)
    lam = spectrum.lambdas[tail_start - 1 :]
    s = spectrum.partial_weight_sums()[tail_start - 1 :]
    if np.any(lam <= 0) or np.any(s <= 0):
        raise ValidationError("tail contains non-positive eigenvalues or partial sums; cannot take logs")
    big_lambda, nu, res_l = _loglog_line(k, lam)
    big_k, kappa, res_s = _loglog_line(k, s)
    if nu <= 0:
        raise ValidationError(f"fitted nu = {nu:.4g} is not positive; tail is not decaying")
    return PowerLawFit(big_lambda, nu, big_k, kappa, tail_start, res_l, res_s)


# CSV format: optional header "k,lambda,lambda_c"; rows "k, lambda_k, lambda_k*C_kk,0"
# (the k column may be omitted); '#' starts a comment; UTF-8.

def save_spectrum_csv(spectrum: Spectrum, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("k,lambda,lambda_c\n")
        for i, (lam, lc) in enumerate(zip(spectrum.lambdas, spectrum.lambda_c0), start=1):
            fh.write(f"{i},{float(lam)!r},{float(lc)!r}\n")


def load_spectrum_csv(path) -> Spectrum:
    """Parse, validate and sort a spectrum file; bad cells report their line number."""
    lambdas: list[float] = []
    weights: list[float] = []
    first_content = True
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read spectrum file {path}: {exc}") from None
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            cells = [c.strip() for c in line.split(",")]
            if first_content and any(not _is_number(c) for c in cells):
                first_content = False
                expected = {"k", "lambda", "lambda_c"}
                if not set(c.lower() for c in cells) <= expected:
                    raise CsvParseError(f"unrecognized header {cells!r}", lineno)
                continue
            first_content = False
            if len(cells) == 3:
                cells = cells[1:]  # leading mode index is informational
            if len(cells) != 2:
                raise CsvParseError(f"expected 2 or 3 columns, got {len(cells)}", lineno)
            try:
                lam, lc = float(cells[0]), float(cells[1])
            except ValueError:
                raise CsvParseError(f"non-numeric cell in {cells!r}", lineno) from None
            if not (math.isfinite(lam) and math.isfinite(lc)):
                raise CsvParseError(f"non-finite value in {cells!r}", lineno)
            if lam <= 0:
                raise CsvParseError(f"eigenvalue must be positive, got {lam!r}", lineno)
            if lc < 0:
                raise CsvParseError(f"lambda*C must be non-negative, got {lc!r}", lineno)
            lambdas.append(lam)
            weights.append(lc)
    if not lambdas:
        raise ValidationError(f"no spectrum rows found in {path}")
    return Spectrum.from_weighted(np.array(lambdas), np.array(weights), meta={"source": str(path)})


def _is_number(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False
