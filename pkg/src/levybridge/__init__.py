"""Levy bridges with random length and random pinning point.

Densities and bridge kernels for Brownian motion with drift, the gamma
subordinator and symmetric alpha-stable processes; samplers for random
bridges; conditional laws given observed states; Monte Carlo diagnostics.
"""

from .bridge import GridSpec, PathBatch, sample_fixed_bridge, sample_random_bridge
from .conditional import (
    ConditionalConfig,
    Observation,
    PosteriorLaw,
    markov_gap,
    predictive_law,
    q_density,
    survival_given_state,
    tau_posterior,
    two_time_tau_posterior,
    two_time_z_expectation,
    u_ratio,
    y_transition,
    z_posterior_expectation,
)
from .config import ConfigError, ExperimentConfig, load_config
from .diagnostics import (
    ExperimentReport,
    chapman_kolmogorov_check,
    formula_vs_mc_check,
    markov_mc_test,
    measurability_test,
    stopping_time_test,
)
from .errors import (
    DegeneratePin,
    LevyBridgeError,
    NumericalFailure,
    PreconditionError,
    UnreachableState,
    ZeroEvidence,
)
from .kernels import (
    BrownianDrift,
    GammaSubordinator,
    SymmetricStable,
    bridge_transition_density,
    finite_dim_density,
    marginal_density,
    rn_derivative,
)
from .measures import (
    CantorMeasure,
    ExponentialDensity,
    LengthMeasure,
    NormalDensity,
    PiecewiseLinearDensity,
    PinningMeasure,
    UniformDensity,
    validate_pair,
)
from .stable import stable_density

__version__ = "0.1.0"
