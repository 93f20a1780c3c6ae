"""Experiment modules"""

from .harness import CVConfig, ExperimentReport, StructureGrid, permuted_cv, repeatability_study, structure_sweep

__all__ = [
    "CVConfig",
    "ExperimentReport",
    "StructureGrid",
    "permuted_cv",
    "repeatability_study",
    "structure_sweep",
]
