"""Exception hierarchy shared across the package.

Three failure classes cover everything the library can reject:
invalid arguments (domain/shape violations), malformed files, and
numeric breakdowns (overflow/underflow/NaN) that carry enough context
to locate the offending step.
"""


class CondistError(Exception):
    """Base class for all package-specific errors."""


class InvalidArgument(CondistError, ValueError):
    """A precondition on arguments was violated."""


class FormatError(CondistError):
    """A binary or delimited file does not match the documented layout."""


class NumericFailure(CondistError):
    """A computation produced non-finite values.

    Attributes carry the location of the failure when known: the
    iteration of an inner solver, the training epoch, and the component
    (e.g. "sinkhorn", "forward") that broke.
    """

    def __init__(self, message: str, *, iteration: int | None = None,
                 epoch: int | None = None, component: str | None = None):
        parts = [message]
        if component is not None:
            parts.append(f"component={component}")
        if epoch is not None:
            parts.append(f"epoch={epoch}")
        if iteration is not None:
            parts.append(f"iteration={iteration}")
        super().__init__(" ".join(parts))
        self.iteration = iteration
        self.epoch = epoch
        self.component = component
