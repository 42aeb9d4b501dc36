"""Exception types raised by the solvers and experiment drivers."""


class SpikeLabError(Exception):
    """Base class for all package errors."""


class NonConvergence(SpikeLabError):
    """A Newton iteration stalled or ran out of iterations."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class PositivityLost(SpikeLabError):
    """Damping hit its floor without producing a positive iterate."""


class KrylovStall(SpikeLabError):
    """An inner Krylov solve failed to reach its tolerance."""


class InvalidExponents(SpikeLabError):
    """Exponent pair rejected; ``tag`` carries the classification."""

    def __init__(self, message, tag=None):
        super().__init__(message)
        self.tag = tag


class DecayNotResolved(SpikeLabError):
    """Radial tail contributes too much to a moment to be trusted."""


class WindowUnderflow(SpikeLabError):
    """Samples in a decay-fit window are not representable positives."""


class SpikeUnresolved(SpikeLabError):
    """Grid too coarse to resolve a spike of width eps."""


class NoPositiveMax(SpikeLabError):
    """The dual ray has no interior positive maximum."""


class AnnulusEmpty(SpikeLabError):
    """No grid nodes fall inside the decay-fit annulus."""


class InsufficientSpan(SpikeLabError):
    """Too few eps values, or too narrow a range, for an expansion fit."""


class ConfigError(SpikeLabError):
    """Run configuration could not be parsed or failed validation."""
