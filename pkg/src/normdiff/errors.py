"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: input-side problems (bad config, bad
files, missing inputs) exit 1, anything unexpected exits 2.
"""

from __future__ import annotations


class NormdiffError(Exception):
    """Base class for all package errors."""


class DimensionError(NormdiffError):
    """Array shapes incompatible with an operation's contract."""


class ConfigError(NormdiffError):
    """Invalid or inconsistent run configuration."""


class FormatError(NormdiffError):
    """Malformed file content (bad magic, version, or truncation)."""


class CalibrationError(NormdiffError):
    """Calibration table missing, mismatched, or built from the wrong model."""


class InputError(NormdiffError):
    """Missing or unusable user-supplied input."""
