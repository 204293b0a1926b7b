"""
Fleeting modes: detecting out-of-sample regime shifts in the cross-section
of asset returns.

The overlap matrix ``D = E_in^{-1/2} E_out E_in^{-1/2}`` compares an
in-sample and an out-of-sample covariance estimate. Under stationarity its
spectrum is universal (independent of the true correlations) and known in
closed form; eigenvalues beyond the upper edge flag portfolios whose
out-of-sample risk exceeds what estimation noise can explain.
"""
from .analytics import (
    FactorLoadings,
    OverlapCurve,
    conditional_average,
    momentum_factor,
    phi_curve,
    psi_curve,
    psi_null_curve,
    scramble_signs,
    scrambled_factor_null,
)
from .engine import (
    EdgeCalibration,
    ExceedanceReport,
    FleetingModeSet,
    RollingAnalysis,
    calibrate_edge,
    exceedance_threshold,
    flag_exceedances,
    fleeting_modes,
    rolling_analysis,
)
from .errors import *  # noqa: F401,F403
from .linalg import EigenSystem, build_d, eigendecompose, inverse_sqrt, symmetrize
from .null_model import (
    NullParams,
    SpectralSupport,
    finite_n_shift,
    moments,
    sample_d_benchmark,
    sample_white_wishart,
    spectral_density,
    support_edges,
)
from .panel import (
    OhlcPanel,
    RegimeShift,
    ReturnPanel,
    garman_klass_vol,
    normalize_returns,
    rolling_windows,
    sample_covariance,
    synth_market,
)

__version__ = "0.1.0"
