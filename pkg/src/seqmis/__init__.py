"""Bayesian evidence and posterior sampling by sequential multiple importance sampling."""

from .model import Normal, PriorSpec, TargetModel, Uniform, benchmark, reference_log_evidence
from .semis import SemisConfig, SemisResult, run_semis
from .sus import SusConfig, SusResult, run_sus

__all__ = [
    "Normal",
    "PriorSpec",
    "SemisConfig",
    "SemisResult",
    "SusConfig",
    "SusResult",
    "TargetModel",
    "Uniform",
    "benchmark",
    "reference_log_evidence",
    "run_semis",
    "run_sus",
]
