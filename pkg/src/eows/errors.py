"""Error taxonomy shared by the library and the CLI exit codes."""


class EowsError(Exception):
    """Base class for package errors."""

    step: str | None = None


class InputError(EowsError, ValueError):
    """Malformed or out-of-contract input (CLI exit code 1)."""


class NumericError(EowsError, ArithmeticError):
    """Numerical failure such as SVD non-convergence (CLI exit code 2)."""


def with_step(exc: EowsError, step: str) -> EowsError:
    if exc.step is None:
        exc.step = step
    return exc
