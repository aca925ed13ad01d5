"""Exception types shared across the package."""


class InputError(ValueError):
    """Bad user-supplied data: malformed CSV, invalid node ids, bad thresholds."""


class ConfigurationError(ValueError):
    """Invalid configuration: bad q, non-monotone weights, zero weights where logs are needed."""


class StructuralError(ValueError):
    """Tree violates a structural requirement (e.g. a node covering more than two children)."""


class NumericalError(RuntimeError):
    """Numerical failure: rank deficiency, Cholesky breakdown, fit failures."""


class MonotonicityError(ConfigurationError):
    """A sizing function evaluated as decreasing on a nested pair of sets."""

    def __init__(self, smaller, larger, sigma_smaller, sigma_larger):
        self.smaller = smaller
        self.larger = larger
        self.sigma_smaller = sigma_smaller
        self.sigma_larger = sigma_larger
        super().__init__(
            f"sizing function is not increasing: sigma({set(smaller)})={sigma_smaller} "
            f"> sigma({set(larger)})={sigma_larger} although the first set is contained "
            "in the second"
        )
