"""Exception types shared across the toolkit."""


class DomainError(ValueError):
    """An argument lies outside the domain where an operation is defined."""


class UseMonteCarlo(RuntimeError):
    """The exact method would be too expensive; rerun with the sampler."""


class NotInUnion(ValueError):
    """A frequency point is not covered by the plank union being partitioned."""


class InfeasibleCaps(ValueError):
    """Density and multiplicity caps cannot be met simultaneously."""


class InsufficientSamples(ValueError):
    """Sample budget below the minimum accepted by an estimator."""


class MergeError(ValueError):
    """Reports cannot be merged (empty input or mixed experiments)."""


class ConfigError(ValueError):
    """Malformed or unknown configuration entry."""
