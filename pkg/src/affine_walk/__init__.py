"""Simulation and estimation for affine Markov walks S_n = X_1 + ... + X_n,
X_{n+1} = a_{n+1} X_n + b_{n+1}, killed on leaving the positive half-line."""

__version__ = "0.1.0"

from .asymptotics import (
    ConditionalLawReport,
    TailCurve,
    clt_distance,
    conditional_law,
    ks_statistic,
    loglog_fit,
    rayleigh_cdf,
    tail_curve,
    tau_moment,
)
from .brownian import BmQuery, bm_small_y_expansion, bm_tail, bm_tail_with_position, bm_two_sided_exit
from .conditions import (
    Certificate,
    KSet,
    check_c2,
    check_c2_global,
    check_c3,
    check_cs1,
    check_cs2,
    find_c3_certificate,
    in_dminus,
)
from .errors import (
    AffineWalkError,
    CertificateNotFound,
    DomainError,
    InsufficientSurvivorsError,
    InvalidArgumentError,
    InvalidLawError,
    MissingDrawsError,
    MomentConditionError,
    UnsupportedLawError,
)
from .harmonic import (
    Estimate,
    HarmonicPoint,
    compare_v_w,
    estimate_v,
    estimate_w,
    harmonicity_residual,
    monotonicity_scan,
    one_step_harmonicity,
)
from .model import (
    FIXTURES,
    ConditionReport,
    DerivedConstants,
    Discrete,
    Gaussian,
    Moments,
    PairLaw,
    Uniform,
    check_moment_condition,
    derived_constants,
    law_from_dict,
    load_law,
    moments,
    sample_pair,
)
from .rng import Stream
from .walk import (
    StopRecord,
    WalkPath,
    decompose,
    PathBatch,
    first_crossing,
    path_batch,
    run_to_exit,
    simulate_path,
)

import types as _types

__all__ = sorted(
    name for name, obj in globals().items()
    if not name.startswith("_") and not isinstance(obj, _types.ModuleType)
)
