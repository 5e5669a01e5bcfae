"""Exception hierarchy shared by all modules."""


class CtrlqError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(CtrlqError):
    """Invalid configuration: unknown ids, bad dimensions, unreadable files."""


class SynthesisError(CtrlqError):
    """Controller synthesis failed (Riccati, gamma iteration, or tuning)."""


class UnstableSystemError(SynthesisError):
    """A computation that requires a Hurwitz system was given an unstable one."""


class SingularFrequencyError(CtrlqError):
    """Frequency response requested exactly at an imaginary-axis pole."""


class TrainingError(CtrlqError):
    """Training aborted: non-finite intermediate quantity or integration failure."""
