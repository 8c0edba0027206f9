"""Exception families, mapped to CLI exit codes in cli.py."""


class RelmuxError(Exception):
    pass


class ConfigError(RelmuxError):
    """Invalid configuration or usage (exit code 2)."""


class DataValidationError(RelmuxError):
    """Corpus or input data failed validation (exit code 3)."""


class NumericsError(RelmuxError):
    """Numerical failure such as NaN loss (exit code 4)."""


class CheckpointError(ConfigError):
    """Checkpoint missing, malformed, or inconsistent with the config."""
