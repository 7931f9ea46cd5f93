"""
Exception types shared by the simulator services.
"""

from typing import Any, Dict, List, Optional


class SimulationError(Exception):
    """Base class for simulator failures."""


class ConfigError(SimulationError, ValueError):
    """Configuration failed validation. Every violated invariant is listed in ``errors``."""

    def __init__(self, errors: List[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors) if self.errors else "invalid configuration")

    def __reduce__(self):
        return (type(self), (self.errors,))


class GeometryError(SimulationError, ValueError):
    """Invalid or singular user/BS geometry."""


class DimensionError(SimulationError, ValueError):
    """Array length or shape does not match the frame configuration."""


class EstimationError(SimulationError, RuntimeError):
    """Uplink estimation could not proceed."""


class TrialError(SimulationError):
    """A Monte-Carlo trial failed; ``context`` says where."""

    def __init__(self, message: str, context: Optional[Dict[str, Any]] = None):
        self.message = message
        self.context = dict(context or {})
        detail = ", ".join(f"{k}={v}" for k, v in self.context.items())
        super().__init__(f"{message} ({detail})" if detail else message)

    def __reduce__(self):
        return (type(self), (self.message, self.context))
