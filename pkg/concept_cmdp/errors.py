"""Exception taxonomy. Each error carries the CLI exit code it maps to."""


class ConceptCMDPError(Exception):
    exit_code = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class InvalidInputError(ConceptCMDPError, ValueError):
    """Unparseable file, invariant breach, range or shape mismatch."""
    exit_code = 2


class SupportError(InvalidInputError):
    """KL divergence with p > 0 where q = 0."""


class ConvergenceError(ConceptCMDPError, RuntimeError):
    exit_code = 3


class CapabilityError(ConceptCMDPError):
    """Instance too large or method combination not supported."""
    exit_code = 4


class BoundViolationError(ConceptCMDPError):
    exit_code = 5
