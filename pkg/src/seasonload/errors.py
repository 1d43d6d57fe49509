"""Exception hierarchy; each class maps to a CLI exit code."""


class SeasonLoadError(Exception):
    exit_code = 2


class ConfigError(SeasonLoadError):
    """Bad user configuration or arguments."""

    exit_code = 1


class DataError(SeasonLoadError):
    """Input data cannot support the requested computation."""

    exit_code = 2


class DegenerateInputError(DataError):
    """Input collapses to a case the method cannot handle (e.g. one distinct pattern)."""


class InvariantError(SeasonLoadError):
    """Internal consistency check failed."""

    exit_code = 3
