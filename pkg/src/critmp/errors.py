"""Exception types shared across the toolkit."""


class InvalidQueryError(ValueError):
    """Start or goal configuration is not collision-free (or malformed)."""


class EnvironmentInfeasibleError(RuntimeError):
    """Rejection sampling could not find free configurations."""


class ConfigError(ValueError):
    """A benchmark or CLI configuration refers to something unresolvable."""
