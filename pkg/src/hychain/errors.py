"""Exception types shared across the toolkit."""


class ToolkitError(Exception):
    """Base class for all hychain errors."""


class InputRejectedError(ToolkitError, ValueError):
    """An argument or configuration value violates a documented precondition."""


class EscapeError(ToolkitError, RuntimeError):
    """A trajectory left the ambient safety box during integration."""

    def __init__(self, message, exit_time=None, state=None):
        super().__init__(message)
        self.exit_time = exit_time
        self.state = state


class NewtonStagnationError(ToolkitError, RuntimeError):
    """A Newton iteration failed to reach the requested residual."""

    def __init__(self, message, defect_trace=None):
        super().__init__(message)
        self.defect_trace = list(defect_trace) if defect_trace is not None else []


class CenterDirectionError(ToolkitError, RuntimeError):
    """No usable gap in the finite-time exponents: a near-neutral direction exists."""
