"""Finite-key secure key rates for decoy-state BB84 with biased basis choice."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover - running from a source tree
    __version__ = "0.1.0"

from .channel import ChannelParams, ObservedStats, expected_observables
from .decoy import BoundEstimates, ProtocolParams, SecurityParams, estimate_bounds
from .keyrate import KeyRateReport, StandardAllocation, evaluate_biased, evaluate_standard
from .montecarlo import AdversaryConfig, SimCounts, counts_to_stats, simulate
from .optimizer import OptResult, SearchSpace, optimize_at_loss, scan_losses
from .phase_error import PhaseErrorBound, SamplingInputs, phase_error_upper, solve_theta

__all__ = [
    "AdversaryConfig", "BoundEstimates", "ChannelParams", "KeyRateReport", "ObservedStats",
    "OptResult", "PhaseErrorBound", "ProtocolParams", "SamplingInputs", "SearchSpace",
    "SecurityParams", "SimCounts", "StandardAllocation", "counts_to_stats", "estimate_bounds",
    "evaluate_biased", "evaluate_standard", "expected_observables", "optimize_at_loss",
    "phase_error_upper", "scan_losses", "simulate", "solve_theta",
]
