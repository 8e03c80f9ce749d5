"""Fokker-Planck densities from Euler-Maruyama particles and data-dependent
histograms."""

from .estimator import (
    DensityEstimate,
    HistogramDensity,
    build_estimate,
    evaluate,
    self_integral,
    slice_estimate,
    tail_mass,
)
from .exceptions import (
    ConfigError,
    DegenerateDataError,
    DivisibilityError,
    FPHistError,
    NumericalBlowup,
    PowerOfTwoError,
    ScheduleError,
    UnknownProblemError,
    ZeroVolumeError,
)
from .metrics import (
    ErrorReport,
    consistency_diagnostics,
    error_report,
    mc_l1_error,
    mc_linf_error,
    tau_convergence_probe,
)
from .partition import HyperRect, PartitionTree, build_btc, build_gessaman, locate, partition_stats
from .reference import catalog, get_problem, heat_solution, ou_solution
from .sde import (
    EulerConfig,
    InitialDensity,
    SampleSet,
    SdeProblem,
    euler_step,
    sample_initial,
    simulate,
    simulate_terminal,
)

__version__ = "0.1.0"
