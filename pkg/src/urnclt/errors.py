class ConfigError(ValueError):
    """Invalid model or experiment configuration.

    ``field`` names the offending configuration entry when known, so the CLI
    can report it.
    """

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class LawError(ConfigError):
    """A reinforcement law whose declared moments or support are invalid."""


class InvariantViolation(AssertionError):
    """A pathwise identity or bound that must hold was broken (a bug signal)."""


class UnsupportedModeError(RuntimeError):
    """The operation needs dense per-step storage but got a checkpoint-only path."""


class TruncationError(ValueError):
    """Horizon too short relative to the requested index for a tail statistic."""


class EnumerationTooLarge(RuntimeError):
    """Exact enumeration refused because the path count exceeds the guard."""
