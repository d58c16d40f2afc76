"""Exception types shared by every module.

Library code raises these; only cli.py turns them into exit codes.
"""

from __future__ import annotations

from typing import Optional


class TNGError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(TNGError):
    pass


class DataValidationError(TNGError, ValueError):
    def __init__(self, message: str, *, file: Optional[str] = None, line: Optional[int] = None):
        self.file = file
        self.line = line
        where = ""
        if file is not None and line is not None:
            where = f"{file}:{line}: "
        elif file is not None:
            where = f"{file}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


class FormatError(DataValidationError):
    """Binary file with wrong magic bytes, version or truncated payload."""


class FingerprintMismatchError(DataValidationError):
    pass


class NumericError(TNGError, ArithmeticError):
    """A kernel produced (or was handed) NaN/Inf."""


class FetchError(TNGError):
    """Embedding service failed after all retries."""
