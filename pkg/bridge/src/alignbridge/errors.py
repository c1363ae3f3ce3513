class BridgeError(Exception):
    """Base class; `exit_code` drives the CLI's process status."""

    exit_code = 1


class UsageError(BridgeError):
    """Bad flags or settings."""

    exit_code = 2


class DataError(BridgeError):
    """Unusable corpus or gold input."""

    exit_code = 3


class ExportError(BridgeError):
    """Model cannot be loaded or faithfully exported."""

    exit_code = 4
