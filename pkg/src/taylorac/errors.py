"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """Raised when an input violates an operation's preconditions."""


class Unsupported(NotImplementedError):
    """Raised for requests outside what is implemented (degree, quadrature, ...)."""


class SolverError(RuntimeError):
    """A linear solve did not reach its tolerance.

    Carries the final residual and iteration count so callers can report them.
    """

    def __init__(self, message, residual=float("nan"), iterations=0, stage=None):
        self.residual = residual
        self.iterations = iterations
        self.stage = stage
        if stage is not None:
            message = f"[{stage}] {message}"
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")

    def with_stage(self, stage):
        """Return a copy labelled with the scheme stage that failed."""
        msg = str(self).split(" (residual=")[0]
        if self.stage is not None:
            msg = msg.split("] ", 1)[-1]
            stage = f"{stage}/{self.stage}"
        return SolverError(msg, self.residual, self.iterations, stage)
