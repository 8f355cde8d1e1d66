"""Mini-batch SGD with momentum on quadratic problems.

Simulators at three fidelity levels (Monte-Carlo, exact second moments,
spectrally-expressible diagonal recursion) plus the generating-function
analysis that predicts their behavior: stability boundaries, divergence
rates, power-law loss asymptotics with explicit constants, phase structure,
and optimal hyperparameters.
"""

from .asymptotics import (
    AsymptoteReport,
    BlowupReport,
    PhaseLabel,
    XiReport,
    blowup_time,
    classify_phase,
    loss_approx,
    loss_asymptote,
    optimal_alpha,
    transition_time,
    xi_criterion,
)
from .errors import AnalysisDomainError, CsvParseError, ValidationError
from .genfunc import (
    DivergenceReport,
    GenFuncContext,
    StabilityReport,
    compute_UV_sequences,
    eval_S,
    eval_U1,
    eval_UV,
    eval_V1,
    reconstruct_loss,
    solve_divergence,
    solve_lambda_crit,
    stability_report,
)
from .simulate import (
    LossTrajectory,
    SGDParams,
    SeFitReport,
    exact_noise_covariance,
    run_additive_noise,
    run_full_moments,
    run_mc,
    run_noiseless,
    run_se,
    run_se_grid,
    se_fit_error,
    se_noise_diagonal,
)
from .spectrum import (
    FeatureProblem,
    PowerLawFit,
    PowerLawSpec,
    Spectrum,
    TorusProblem,
    build_power_law,
    build_torus_problem,
    eigendecompose,
    fit_power_law,
    gamma_for_batch,
    load_spectrum_csv,
    save_spectrum_csv,
)

__version__ = "0.1.0"
