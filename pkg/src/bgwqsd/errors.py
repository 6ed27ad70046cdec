"""Exception types shared across the package."""


class ModelValidationError(ValueError):
    """Structurally malformed model (e.g. offspring probabilities off by > 1e-12)."""


class DomainError(ValueError):
    """Input outside the declared domain of an operation."""


class ResourceError(RuntimeError):
    """An exact computation would exceed its configured budget.

    Raised instead of silently truncating; callers should fall back to the
    Monte Carlo path.
    """


class ConvergenceError(RuntimeError):
    """An iterative solver ran out of iterations before meeting its tolerance."""


class PeriodicityError(ConvergenceError):
    """Power iteration detected an oscillating (periodic) spectrum.

    The kernel should be analysed per communication class instead.
    """


class DegenerateModelError(RuntimeError):
    """The growth operator vanished along the iteration (M(z) = 0)."""


class DivergenceError(ValueError):
    """A resolvent series was requested at or below the kernel's spectral radius."""


class StatisticsError(RuntimeError):
    """Not enough surviving samples to produce the requested estimate."""


class RangeError(ValueError):
    """A regression or profile window falls outside the numerically usable range."""
