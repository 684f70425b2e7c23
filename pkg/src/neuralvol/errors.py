"""Error taxonomy shared across the package.

ConfigError maps to CLI exit code 1 (bad flags, bad config files),
FormatError and other runtime failures map to exit code 2.
"""
from __future__ import annotations


class ConfigError(ValueError):
    """Invalid configuration: unknown enum tag, out-of-range hyperparameter, bad flag."""


class FormatError(RuntimeError):
    """Malformed or truncated file content (raw volumes, model files, JSON sidecars)."""


class MajorantViolation(UserWarning):
    """The field exceeded a cell's majorant; the sample was clamped.

    Signals a stale or underestimated majorant (e.g. ranges not refreshed
    after further training), not a hard failure.
    """
