"""Exception hierarchy shared by every layer of the toolkit."""


class SagError(Exception):
    """Base class for all errors raised by this package."""


class KeyGenerationError(SagError):
    pass


class PlaintextRangeError(SagError, ValueError):
    """A plaintext or randomness value lies outside Z_N."""


class EncodingBudgetError(SagError, ValueError):
    """A fixed-point value (or a pipeline's worst case) does not fit in the signed half of Z_N."""


class ProtocolError(SagError):
    pass


class KeyMismatchError(ProtocolError):
    """Ciphertexts under different public keys were combined, or decrypted with the wrong key."""


class ProtocolOrderError(ProtocolError):
    pass


class ComparisonRangeError(ProtocolError, ValueError):
    pass


class DomainEscapeError(ProtocolError):
    """An input left the domain of a piecewise function whose extension would be invalid."""


class TransportError(SagError):
    pass


class DesyncError(TransportError):
    """A message arrived with an unexpected protocol or step id."""


class NegotiationError(TransportError):
    pass


class ConstructionError(SagError, ValueError):
    """A piecewise bound could not be built (non-convex input, degenerate breakpoints...)."""


class InvariantError(SagError):
    pass


class LabelDomainError(SagError, ValueError):
    pass


class OracleFailure(SagError):
    """The reference solver did not converge; tests relying on it must abort."""
