"""Exception hierarchy shared by every layer of the package."""


class C3SLError(Exception):
    """Base class for all package errors."""


class InvalidArgument(C3SLError, ValueError):
    """A caller passed arguments that violate an operation's preconditions."""


class ContractViolation(C3SLError, RuntimeError):
    """Internal state was used out of order (stale cache, inconsistent model)."""


class NumericError(C3SLError, ArithmeticError):
    """Non-finite values appeared where finite ones are required."""


class ProtocolError(C3SLError):
    """The peer sent bytes or messages that break the wire contract."""

    def __init__(self, message: str, code: int = 3):
        super().__init__(message)
        self.code = code

