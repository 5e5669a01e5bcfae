"""Controlled deep Q-learning toolkit.

Models the learning dynamics of a shallow wide Q-network as an uncertain
LTI system through the neural tangent kernel, synthesizes stabilizing
cascade controllers (gain-scheduled H2, dynamic H-infinity, fixed-structure
H-infinity) that inject fictitious rewards into the TD loss, and benchmarks
them against DDQN on classic-control environments.
"""

from ctrlq.errors import (
    ConfigurationError,
    CtrlqError,
    SingularFrequencyError,
    SynthesisError,
    TrainingError,
    UnstableSystemError,
)

__all__ = [
    "CtrlqError",
    "ConfigurationError",
    "SynthesisError",
    "UnstableSystemError",
    "SingularFrequencyError",
    "TrainingError",
]

__version__ = "0.1.0"
