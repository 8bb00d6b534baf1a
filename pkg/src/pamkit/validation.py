"""Report-based validation results shared across modules.

Invariant checks never raise; they enumerate every failed check with a
stable machine-readable code and the path of the offending field.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Violation:
    code: str
    path: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    violations: tuple[Violation, ...] = ()

    def codes(self) -> list[str]:
        return [v.code for v in self.violations]

    def to_record(self) -> dict:
        return {
            "ok": self.ok,
            "violations": [
                {"code": v.code, "path": v.path, "message": v.message} for v in self.violations
            ],
        }


def report_from(violations: list[Violation]) -> ValidationReport:
    return ValidationReport(ok=not violations, violations=tuple(violations))
