"""Exception types raised across the package."""


class PGNNError(Exception):
    """Base class for all package errors."""


class InvalidInputError(PGNNError, ValueError):
    """Shapes, lengths or values do not match what an operation expects."""


class DomainError(PGNNError, ValueError):
    """A state lies outside the domain of a function (e.g. log of a non-positive number)."""


class NoInvariantError(PGNNError):
    """The requested system has no known conserved quantity."""


class BlowUpError(PGNNError, ArithmeticError):
    """Integration produced a non-finite state.

    Attributes
    ----------
    t : float
        Time at which the offending stage or state was detected.
    """

    def __init__(self, message: str, t: float):
        super().__init__(f"{message} (t={t!r})")
        self.t = t


class StiffnessError(BlowUpError):
    """Step size underflow or step budget exhausted."""


class OutOfRangeError(PGNNError, ValueError):
    """A requested time lies outside the span covered by solver steps."""


class InsufficientDataError(PGNNError, ValueError):
    """Too few samples, points or members for the requested operation."""


class NumericOverflowError(PGNNError, ArithmeticError):
    """Network activations became non-finite.

    Attributes
    ----------
    layer : int
        1-based index of the layer whose pre-activations overflowed.
    """

    def __init__(self, layer: int):
        super().__init__(f"non-finite activations in layer {layer}")
        self.layer = layer


class DivergedError(PGNNError, ArithmeticError):
    """Optimisation produced non-finite gradients or losses."""


class AllDivergedError(PGNNError):
    """Every entry in a system group diverged, so no normalisation exists."""

    def __init__(self, system: str):
        super().__init__(f"all entries of group {system!r} are non-finite")
        self.system = system


class ConfigError(PGNNError, ValueError):
    """A run configuration is malformed."""
