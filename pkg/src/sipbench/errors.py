"""Exception types shared across the library."""

from __future__ import annotations


class SipbenchError(Exception):
    """Base class for library errors."""


class ShapeMismatchError(SipbenchError, ValueError):
    """Array arguments whose shapes must agree do not."""


class TimeRangeError(SipbenchError, ValueError):
    """Process time outside the legal range of its schedule."""


class ScheduleError(SipbenchError, ValueError):
    """Invalid schedule parameters."""


class UnknownLossError(SipbenchError, ValueError):
    """Loss head tag not recognised."""


class IncompatibleHeadError(SipbenchError, TypeError):
    """Sampler framework paired with a network trained under another head."""


class RolloutDivergedError(SipbenchError, RuntimeError):
    """Autoregressive rollout produced a non-finite prediction."""

    def __init__(self, step: int, message: str):
        super().__init__(message)
        self.step = step


class TrainingDivergedError(SipbenchError, RuntimeError):
    """Training loss became non-finite or exceeded the divergence bound."""


class ConfigError(SipbenchError, ValueError):
    """Experiment configuration failed validation.

    ``violations`` lists every problem found, not just the first.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class ContainerFormatError(SipbenchError, ValueError):
    """File is not a valid container or is corrupt."""
