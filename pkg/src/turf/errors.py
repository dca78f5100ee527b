"""Domain errors shared across the toolkit.

Every error the CLI maps to exit code 1 derives from TurfError; the error
class name is the stable identifier printed on stderr.
"""


class TurfError(Exception):
    """Base class for all domain errors."""


class UnknownModel(TurfError):
    """Requested reference model name is not recognised."""


class ShapeMismatch(TurfError):
    """Tensor/layer shapes are inconsistent."""


class InvalidReplacement(TurfError):
    """Layer replacement requested at a non-replaceable or already-replaced position."""


class UnsupportedConfig(TurfError):
    """Hardware configuration not supported (e.g. Winograd on K != 3)."""


class PortMismatch(TurfError):
    """Fused design parallelism violates the port-matching constraint."""


class InefficientConfig(TurfError):
    """Buffer too small to store the input or output a computation sequence requires."""


class SimDeadlock(TurfError):
    """Pipeline simulation cannot make progress; carries the partial event trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


class InvalidTiling(TurfError):
    """Tile smaller than the receptive field of the fused block."""


class CalibrationError(TurfError):
    """Resource-model calibration coefficient missing for a module kind."""


class Infeasible(TurfError):
    """No candidate design fits the platform's resource capacities."""


class NoSolution(TurfError):
    """Model search finished without any candidate meeting the requirements."""

    def __init__(self, message, candidates=None):
        super().__init__(message)
        self.candidates = candidates or []
