"""Random balls driven by determinantal point processes.

Kernels and their spectral tools (``kernelspace``), mark laws
(``marks``), exact finite-DPP sampling (``dpp_engine``), test measures and
the mass field (``fields``), the three scaling limits (``limits``), exact
Laplace transforms through Fredholm determinants (``laplace_lab``), and
study orchestration with a CLI (``harness``, ``cli``) and the numbered
acceptance checks (``acceptance``).
"""
from .errors import (
    CertificateFailed,
    CertificateMissing,
    ConfigInvalid,
    DPPBallsError,
    EmptySample,
    GammaOutOfRange,
    MomentDiverges,
    NegativeWeightFunction,
    NonPositiveWeight,
    NumericError,
    OrderingViolated,
    QuadratureNotConverged,
    RegimeParameterMismatch,
    SpectralNormAtLeastOne,
    SpectrumOutOfRange,
    TruncationBudgetExceeded,
)
from .kernelspace import (
    Envelope,
    ScaledKernelSpec,
    SpectralData,
    StationaryKernel,
    WindowSpec,
    check_norm_monotonicity,
    check_uniform_l2_bound,
    discretize,
    fredholm_log_det,
    modify_kernel,
    trace_power,
)
from .marks import (
    ExponentialWeight,
    LogNormalWeight,
    ParetoWeight,
    PointMassWeight,
    RadiusLaw,
    StableLaw,
    WeightLaw,
    sample_radius,
    sample_stable,
    sample_weight,
    sigma_gamma,
    unit_ball_volume,
)
from .dpp_engine import LocationSampler, MarkedConfiguration, sample_dpp, sample_marked
from .fields import (
    BoxMeasure,
    GaussianBump,
    IntervalMeasure,
    ball_mass,
    field_expectation,
    field_value,
    normalization,
    verify_mab,
)
from .limits import (
    LimitMarginal,
    poisson_exponent_intermediate,
    psi,
    sample_poisson_field,
    stable_marginal_large,
    stable_marginal_small,
)
from .laplace_lab import (
    LaplaceQuery,
    exact_laplace_centered,
    laplace_convergence_study,
    reduce_marked_operator,
    regime_rate,
    trace2_bound,
)
from .harness import StudyConfig, StudyReport, empirical_cf, ks_distance, load_preset, run_study

__version__ = "0.1.0"

__all__ = [
    "CertificateFailed", "CertificateMissing", "ConfigInvalid", "DPPBallsError", "EmptySample",
    "GammaOutOfRange", "MomentDiverges", "NegativeWeightFunction", "NonPositiveWeight",
    "NumericError", "OrderingViolated", "QuadratureNotConverged", "RegimeParameterMismatch",
    "SpectralNormAtLeastOne", "SpectrumOutOfRange", "TruncationBudgetExceeded", "Envelope",
    "ScaledKernelSpec", "SpectralData", "StationaryKernel", "WindowSpec",
    "check_norm_monotonicity", "check_uniform_l2_bound", "discretize", "fredholm_log_det",
    "modify_kernel", "trace_power", "ExponentialWeight", "LogNormalWeight", "ParetoWeight",
    "PointMassWeight", "RadiusLaw", "StableLaw", "WeightLaw", "sample_radius", "sample_stable",
    "sample_weight", "sigma_gamma", "unit_ball_volume", "LocationSampler", "MarkedConfiguration",
    "sample_dpp", "sample_marked", "BoxMeasure", "GaussianBump", "IntervalMeasure", "ball_mass",
    "field_expectation", "field_value", "normalization", "verify_mab", "LimitMarginal",
    "poisson_exponent_intermediate", "psi", "sample_poisson_field", "stable_marginal_large",
    "stable_marginal_small", "LaplaceQuery", "exact_laplace_centered", "laplace_convergence_study",
    "reduce_marked_operator", "regime_rate", "trace2_bound", "StudyConfig", "StudyReport",
    "empirical_cf", "ks_distance", "load_preset", "run_study",
]
