"""Bootstrap inference for samples clustered in two or more dimensions.

A hybrid of pigeonhole resampling (rows and columns drawn with replacement)
and the wild bootstrap (sign-like multiplicative weights on the interaction
residual), with an estimated shrinkage ratio that adapts between clustered
and unclustered regimes.
"""

__version__ = "0.1.0"

from .core import (
    BootstrapConfig,
    BootstrapResult,
    DyadicArray,
    MaskedPanel,
    MultiwayArray,
    PanelArray,
    UnbalancedPanel,
    validate,
)
from .engine import (
    ReplicatePlan,
    ZBootstrapResult,
    bootstrap_dyadic,
    bootstrap_masked,
    bootstrap_multivariate,
    bootstrap_multiway,
    bootstrap_two_way,
    bootstrap_unbalanced,
    bootstrap_zestimator,
    two_way_replicate_plan,
)
from .inference import TestResult, TestSpec, confidence_interval, run_test
from .projections import (
    decompose_masked,
    decompose_multiway,
    decompose_two_way,
    decompose_unbalanced,
)
from .simulation import (
    DESIGN_NAMES,
    DgpSpec,
    McReport,
    VarianceRule,
    cdf_error_curve,
    degeneracy_diagnostic,
    design_spec,
    generate,
    run_monte_carlo,
)
from .variance import (
    Thresholds,
    VarianceComponents,
    lambda_bar,
    lambda_hat,
    lambda_nonexhaustive,
    lambda_tilde,
    lambda_unbalanced,
    s_hat_selection,
    studentization_scale,
    tau_hat,
    thresholds_for,
    variance_components,
)
from .wild import TwoPointWeights, corrected_moments, sample_weights, solve_two_point

__all__ = [name for name in dir() if not name.startswith("_")]
