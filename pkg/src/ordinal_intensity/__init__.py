"""Ordinal latent-class intensity modeling for coded conflict events."""

from .data import (
    ACTOR_CLASSES,
    ALL_SITES,
    DataError,
    EventArrays,
    EventTuple,
    RawEventRecord,
    UnmappableActorError,
    as_event_arrays,
    goldstein_to_predicate,
    load_raw,
    make_tuple,
    map_actor,
    read_tuples_csv,
    split,
    write_tuples_csv,
)
from .estimator import OrdinalIntensityModel
from .infer import (
    IntensityEstimate,
    IntensityScores,
    PosteriorSamples,
    SamplerConfig,
    SamplerError,
    sample_posterior,
    score_events,
)
from .model import (
    Hyperparams,
    ParamsConstrained,
    constrain,
    event_log_marginal,
    generate,
    log_joint,
    prior_logdensity,
    responsibilities,
    responsibilities_batch,
    sample_prior,
    unconstrain,
)

__version__ = "0.1.0"

__all__ = [
    "ACTOR_CLASSES",
    "ALL_SITES",
    "DataError",
    "EventArrays",
    "EventTuple",
    "Hyperparams",
    "IntensityEstimate",
    "IntensityScores",
    "OrdinalIntensityModel",
    "ParamsConstrained",
    "PosteriorSamples",
    "RawEventRecord",
    "SamplerConfig",
    "SamplerError",
    "UnmappableActorError",
    "sample_posterior",
    "score_events",
    "as_event_arrays",
    "constrain",
    "event_log_marginal",
    "generate",
    "goldstein_to_predicate",
    "load_raw",
    "log_joint",
    "make_tuple",
    "map_actor",
    "prior_logdensity",
    "read_tuples_csv",
    "responsibilities",
    "responsibilities_batch",
    "sample_prior",
    "split",
    "unconstrain",
    "write_tuples_csv",
    "__version__",
]
