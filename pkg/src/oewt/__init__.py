"""Propensity weighting of big non-probability samples with a linked reference sample."""

from .datamodel import (
    BigSample,
    MeanEstimate,
    Population,
    PropensityFit,
    ReferenceSample,
    load_big_sample,
    load_reference_sample,
    tag_overlap,
)
from .inference import VarianceOptions, confidence_interval, ipw_mean, naive_mean, plug_in_variance
from .kernels import BACKEND
from .propensity import FitOptions, fit

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BigSample",
    "FitOptions",
    "MeanEstimate",
    "Population",
    "PropensityFit",
    "ReferenceSample",
    "VarianceOptions",
    "confidence_interval",
    "fit",
    "ipw_mean",
    "load_big_sample",
    "load_reference_sample",
    "naive_mean",
    "plug_in_variance",
    "tag_overlap",
]
