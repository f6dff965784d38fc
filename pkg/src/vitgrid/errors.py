"""Exception types shared across the package.

The CLI maps ValidationError to exit code 1 and NumericalError to exit
code 2; everything else is a bug.
"""


class ValidationError(ValueError):
    """A precondition on inputs, shapes, or configuration was violated."""


class NumericalError(RuntimeError):
    """A numerical procedure failed (non-convergence, loss of PSD-ness, ...)."""
