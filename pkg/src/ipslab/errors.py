"""Package exception hierarchy.

Configuration problems and numerical failures are kept distinct so the CLI
can map them to exit codes 1 and 2.
"""


class IpslabError(Exception):
    pass


class ConfigError(IpslabError):
    """Invalid or unknown configuration input (fail-closed)."""


class NumericalError(IpslabError):
    """A computation failed in a way that invalidates the result."""


class BlowUpError(NumericalError):
    """Non-finite positions during time integration."""

    def __init__(self, step, trajectory):
        self.step = int(step)
        self.trajectory = int(trajectory)
        super().__init__(
            f"non-finite positions at step {self.step} (trajectory {self.trajectory})"
        )


class QuadratureError(NumericalError):
    """Panel refinement or an improper integral failed to converge."""


class IllConditionedGramError(NumericalError):
    """Gram matrix condition number too large to trust the eigen-solve."""


class AcceptanceRateError(NumericalError):
    """MCMC proposal scale could not be adapted into a usable range."""


class BasisSupportError(NumericalError):
    """Basis members carry no empirical mass under the data distribution."""

    def __init__(self, members, message=None):
        self.members = list(members)
        super().__init__(
            message
            or "basis members %s have zero empirical mass; shrink the basis support"
            % (self.members,)
        )
