"""Diagnostic records and the sink they are collected in.

One diagnostic per line, formatted ``path:line:col: severity: code: message``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

E_SYN = "E-SYN"
E_RES = "E-RES"
E_SUM = "E-SUM"
E_UNIQ = "E-UNIQ"
E_OVR = "E-OVR"
E_SPAN = "E-SPAN"
E_PLAN = "E-PLAN"
E_GEN = "E-GEN"


@dataclass(frozen=True)
class Diagnostic:
    path: str
    line: int
    col: int
    severity: str  # "error" | "warning"
    code: str
    message: str

    def render(self) -> str:
        return f"{self.path}:{self.line}:{self.col}: {self.severity}: {self.code}: {self.message}"


@dataclass
class DiagnosticSink:
    items: list[Diagnostic] = field(default_factory=list)

    def error(self, path: str, line: int, col: int, code: str, message: str) -> None:
        self.items.append(Diagnostic(path, line, col, "error", code, message))

    def extend(self, other: "DiagnosticSink") -> None:
        self.items.extend(other.items)

    @property
    def has_errors(self) -> bool:
        return any(d.severity == "error" for d in self.items)

    def render(self) -> str:
        # Stable output: file, then position, then code.
        ordered = sorted(self.items, key=lambda d: (d.path, d.line, d.col, d.code, d.message))
        return "\n".join(d.render() for d in ordered)
