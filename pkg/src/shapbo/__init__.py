"""Bayesian optimization with search bounds tightened by Shapley attributions."""

from .core import (
    Dataset,
    DimensionError,
    EvaluatedSample,
    RngStream,
    SearchDomain,
    clip,
    contains,
    initial_design,
)
from .harness import Protocol, ProtocolConfig, RunTrace, compare_protocols, run_protocol
from .problems import get_objective

__version__ = "0.1.0"
