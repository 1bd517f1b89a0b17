"""Exception hierarchy shared across the toolkit.

ValidationError covers malformed inputs (CLI exit code 2); InfeasibleError
covers well-formed requests that cannot be satisfied (exit code 3).
"""

from __future__ import annotations


class LcpError(Exception):
    pass


class ValidationError(LcpError):
    pass


class ParseError(ValidationError):
    pass


class ShapeError(ValidationError):
    pass


class InfeasibleError(LcpError):
    pass


class OverSplitError(InfeasibleError):
    pass
