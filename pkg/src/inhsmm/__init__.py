"""Hidden semi-Markov models with periodically varying dwell-time distributions.

States are represented by aggregates of an extended-state HMM, so likelihood
evaluation, decoding and stationary analysis reuse HMM machinery.
"""

from .analysis import (
    DecodedSequence,
    DwellDistributionSummary,
    RunLengthSummary,
    decoding_accuracy,
    entry_weights,
    overall_dwell,
    run_length_encode,
    total_variation,
    viterbi,
)
from .distributions import (
    DwellFamily,
    DwellSpec,
    EmissionSpec,
    TrigPredictor,
    dwell_cdf,
    dwell_pmf,
    dwell_sf,
    emission_logdensity,
    hazard,
    hazard_table_from_means,
    trig_design,
)
from .exceptions import ConfigurationError, DataError, DomainError, NumericalError, UnsupportedOperation
from .inference import (
    FitOptions,
    FittedModel,
    ObservationSeries,
    fit,
    forward_loglik,
    forward_loglik_sequence,
    initial_distribution,
    periodic_stationary,
    stationary,
)
from .model import REFERENCE_TRUTH, Model, ModelSpec, reference_model
from .simulate import SimulationConfig, simulate, simulate_observations, simulate_states
from .statespace import (
    AggregateLayout,
    ConditionalTPMSpec,
    build_gamma_homogeneous,
    build_gamma_t,
    build_structured,
    build_structured_sequence,
    sizes_from_factor,
    sizes_from_quantile,
)

__version__ = "0.1.0"
