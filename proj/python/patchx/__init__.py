"""Patch-based explainable time series classification."""

import json

from ._core import (
    ConfigError,
    DimensionError,
    Error,
    FormatError,
    IndexError,
    Model,
    ParseError,
    StageError,
    TrainingError,
    ValidationError,
    enumerate_patches,
    extract_presence,
    generate_anomaly,
    gradcheck,
    mix_seed,
    resolve_config,
    transform,
)

__all__ = [
    "ConfigError",
    "DimensionError",
    "Error",
    "FormatError",
    "IndexError",
    "Model",
    "ParseError",
    "StageError",
    "TrainingError",
    "ValidationError",
    "enumerate_patches",
    "explain",
    "extract_presence",
    "generate_anomaly",
    "gradcheck",
    "histogram",
    "mix_seed",
    "probe",
    "resolve_config",
    "transform",
]


def explain(model, x):
    """Per-patch explanation records for one [channels, length] sample."""
    return json.loads(model.explain_json(x))


def probe(model, x, channel, position, factors):
    """Scales one value of `x` by each factor and reports every step."""
    return json.loads(model.probe_json(x, channel, position, list(factors)))


def histogram(model, x):
    """Confidence histogram over every patch of a [samples, channels, length] array."""
    return json.loads(model.histogram_json(x))
