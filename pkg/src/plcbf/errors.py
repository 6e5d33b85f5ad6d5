"""Exception types shared across the package."""

import numpy as np


class PLCBFError(Exception):
    pass


class ConfigError(PLCBFError, ValueError):
    """Invalid scenario, policy, or schedule configuration."""

    def __init__(self, message, *, field=None, line=None):
        self.message = message
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class NumericError(PLCBFError, ArithmeticError):
    """Non-finite values or a model leaving its valid chart."""

    def __init__(self, message, *, time=None, last_state=None):
        self.time = time
        self.last_state = None if last_state is None else np.array(last_state, dtype=float)
        if time is not None:
            message = f"{message} (t={time:.6g} s)"
        super().__init__(message)


class GradientError(NumericError):
    pass


class DegenerateGradientError(PLCBFError, ValueError):
    """Gradient requested where the margin is not differentiable (obstacle center)."""


class InfeasibleQP(PLCBFError):
    """No control satisfies the barrier rows and the input box."""

    def __init__(self, message, *, row=None, violation=None):
        self.row = row
        self.violation = violation
        super().__init__(message)
