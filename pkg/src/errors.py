"""
Project exceptions
==================

Every failure the toolkit reports on purpose goes through one of these
classes, so the command line can turn it into the right exit code.
"""


class GraphemeCTCError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ConfigError(GraphemeCTCError, ValueError):
    """Invalid or unknown configuration (usage error)."""

    exit_code = 1


class DataError(GraphemeCTCError, ValueError):
    """Malformed input data: characters, units, manifests, files."""

    exit_code = 2


class UnalignableError(DataError):
    """A target sequence cannot be aligned to the available frames."""

    def __init__(self, message: str, utt_id: str = None):
        super().__init__(message)
        self.utt_id = utt_id


class NumericalError(GraphemeCTCError, ArithmeticError):
    """Non-finite activations or losses, or a zero total path probability."""

    exit_code = 3
