"""Exception hierarchy.

Every error carries a stable machine-readable `code` alongside the
human-readable message; CLI and HTTP surfaces report the code verbatim.
"""

from __future__ import annotations


class PamError(Exception):
    """Base class for all package errors."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code

    def __str__(self) -> str:
        return f"{self.code}: {super().__str__()}"


class CanonicalizationError(PamError):
    """Value tree cannot be canonically serialized (NON_FINITE_NUMBER, NON_STRING_KEY, ...)."""


class DecodeError(PamError):
    """Bytes cannot be decoded (UNKNOWN_FORMAT, MALFORMED_JSON, MALFORMED_CBOR, SCHEMA_MISMATCH)."""


class ProvenanceError(PamError):
    """DAG or signing operation failed (UNKNOWN_PARENT, CYCLE_DETECTED, SOURCE_UNVERIFIED, ...)."""


class CapabilityError(PamError):
    """Token issuance or scope construction failed (EMPTY_PERMISSIONS, INVALID_SCOPE, ...)."""


class RehydrationError(PamError):
    """The re-hydration pipeline cannot proceed (BUDGET_TOO_SMALL, ...)."""
