"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: usage problems exit 2 (argparse),
DataError 3, FormatError 4, ShapeError/NumericError 5.
"""


class AlignkitError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(AlignkitError):
    """Tensor shapes are incompatible for the requested operation."""


class NumericError(AlignkitError):
    """Non-finite values or other numeric breakdown in inputs."""


class DataError(AlignkitError):
    """Malformed or inconsistent corpus/gold/config data."""


class FormatError(AlignkitError):
    """Malformed binary container or unparseable file format."""
