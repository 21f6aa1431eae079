"""Power allocation for remote MMSE estimation with an energy-harvesting sensor.

An energy-limited sensor amplifies and forwards noisy observations of a
correlated Gaussian signal; the receiver forms the MMSE estimate of the whole
signal block.  This package builds the signal models, evaluates the estimation
error, solves for the error-optimal transmission powers under energy
causality, and provides the closed-form and low-complexity policies plus a
Monte Carlo harness comparing them.
"""

from .covariance import (
    CovarianceModel,
    SpectrumDecomposition,
    build_circulant,
    build_lowpass_cwss,
    build_rank_one,
    build_static_correlation,
    dft_matrix,
    haar_unitary,
    random_haar_covariance,
    reduced_evd,
)
from .energy import EnergyTrace, FeasibleRegion, check_feasible
from .errors import (
    DelayOutOfRange,
    DimensionMismatch,
    EhAllocateError,
    FlatSpectrumRequired,
    InfeasibleRegion,
    InvalidConfig,
    NotHermitian,
    NotPSD,
    NotUnit,
    PlanInvalid,
    RankError,
    RhoOutOfRange,
    WindowError,
    ZeroVarianceWithEnergy,
)
from .estimator import (
    ChannelTrace,
    NoiseModel,
    PowerAllocation,
    lower_bound_flat,
    mmse_direct,
    mmse_gradient,
    mmse_sampled_lowpass,
    mmse_woodbury,
    upper_bound_uncorrelated,
)
from .experiment import (
    AggregateStats,
    ExperimentConfig,
    ExperimentResult,
    run_experiment,
    sample_bernoulli_arrivals,
    sample_rayleigh_channel,
    timing_benchmark,
)
from .kernels import backend_name
from .policies import (
    PolicyResult,
    SamplingPlan,
    equidistant_policy,
    greedy_policy,
    is_majorized,
    most_majorized,
    parameter_greedy,
    run_policy,
    sliding_window_lower,
    sliding_window_upper,
)
from .solver import SolverDiagnostics, solve_optimal, solve_relaxed
from .validation import run_all as run_validation

__version__ = "0.1.0"
