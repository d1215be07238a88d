"""The plan language: three gripper statements, one per line.

The grammar is published as ``GRAMMAR_EBNF``. ``move_gripper`` takes x, y, z in
meters and yaw in radians. If the text holds a fenced code block (a line of
three backticks, optionally followed by a language tag) only the first fenced
block is parsed.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass
from typing import Union

from .model import (
    MAX_PLAN_LENGTH,
    CloseGripper,
    Command,
    MoveGripper,
    OpenGripper,
    Plan,
    Pose,
    Workspace,
)

GRAMMAR_EBNF = """\
program   = { line } ;
line      = [ statement ] [ comment ] newline ;
statement = "open_gripper" "(" ")"
          | "close_gripper" "(" ")"
          | "move_gripper" "(" number "," number "," number "," number ")" ;
number    = [ "+" | "-" ] ( digits [ "." [ digits ] ] | "." digits )
            [ ( "e" | "E" ) [ "+" | "-" ] digits ] ;
comment   = "#" { any character } ;
"""

_FENCE_OPEN = re.compile(r"^\s*```\s*([A-Za-z0-9_+-]*)\s*$")
_FENCE_CLOSE = re.compile(r"^\s*```\s*$")
_STATEMENT = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*\((.*)\)\s*;?\s*$")
_NUMBER = re.compile(r"^[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?$", re.ASCII)
_ARITY = {"open_gripper": 0, "close_gripper": 0, "move_gripper": 4}


class Severity(str, enum.Enum):
    ERROR = "error"
    WARNING = "warning"


@dataclass(frozen=True)
class ParseDiagnostic:
    line: int
    column: int
    message: str
    severity: Severity = Severity.ERROR
    code: str = "syntax"

    def __str__(self) -> str:
        return f"{self.line}:{self.column}: {self.severity.value}: {self.message}"


class PlanParseError(ValueError):
    """Raised by :func:`parse`; ``diagnostics`` holds every problem found."""

    def __init__(self, diagnostics: list[ParseDiagnostic]):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics))


def _source_lines(source: str) -> list[str]:
    return source.split("\n")


def _fenced_region(lines: list[str]) -> tuple[int, int]:
    """Index range [start, end) of lines to parse."""
    for i, line in enumerate(lines):
        if _FENCE_OPEN.match(line):
            for j in range(i + 1, len(lines)):
                if _FENCE_CLOSE.match(lines[j]):
                    return i + 1, j
            return i + 1, len(lines)
    return 0, len(lines)


def _parse_args(body: str, body_col: int, lineno: int, diags: list) -> list[float]:
    if not body.strip():
        return []
    values = []
    offset = 0
    for raw in body.split(","):
        lead = len(raw) - len(raw.lstrip())
        tok = raw.strip()
        col = body_col + offset + lead
        offset += len(raw) + 1
        if not _NUMBER.match(tok):
            if tok.lower().endswith("deg"):
                msg = f"'{tok}': angles are radians only, unit suffixes are not allowed"
            elif not tok:
                msg = "empty argument"
            else:
                msg = f"'{tok}' is not a decimal number"
            diags.append(ParseDiagnostic(lineno, col, msg, code="literal"))
            values.append(math.nan)
            continue
        v = float(tok)
        if not math.isfinite(v):
            diags.append(ParseDiagnostic(lineno, col, f"'{tok}' overflows to a non-finite value",
                                         code="literal"))
        values.append(v)
    return values


def parse(source: Union[str, bytes]) -> Plan:
    """Parse plan text. Raises :class:`PlanParseError` listing all diagnostics."""
    if isinstance(source, (bytes, bytearray)):
        source = bytes(source).decode("utf-8", errors="replace")
    lines = _source_lines(source)
    start, end = _fenced_region(lines)
    diags: list[ParseDiagnostic] = []
    commands: list[Command] = []
    cmd_lines: list[int] = []
    for idx in range(start, end):
        lineno = idx + 1
        line = lines[idx]
        code = line.split("#", 1)[0]
        stripped = code.strip()
        if not stripped:
            continue
        col0 = len(code) - len(code.lstrip()) + 1
        m = _STATEMENT.match(stripped)
        if m is None:
            diags.append(ParseDiagnostic(lineno, col0, f"expected a statement, got '{stripped[:40]}'"))
            continue
        name = m.group(1).lower()
        if name not in _ARITY:
            diags.append(ParseDiagnostic(lineno, col0, f"unknown statement '{m.group(1)}'",
                                         code="unknown"))
            continue
        body_col = col0 + m.start(2)
        n_before = len(diags)
        args = _parse_args(m.group(2), body_col, lineno, diags)
        if len(args) != _ARITY[name]:
            del diags[n_before:]
            diags.append(ParseDiagnostic(
                lineno, col0, f"{name} takes {_ARITY[name]} arguments, got {len(args)}",
                code="arity"))
            continue
        if len(diags) > n_before:
            continue
        if len(commands) == MAX_PLAN_LENGTH:
            diags.append(ParseDiagnostic(
                lineno, col0, f"plan exceeds the {MAX_PLAN_LENGTH}-command cap", code="length"))
            break
        if name == "open_gripper":
            commands.append(OpenGripper())
        elif name == "close_gripper":
            commands.append(CloseGripper())
        else:
            commands.append(MoveGripper(Pose(*args)))
        cmd_lines.append(lineno)
    if diags:
        raise PlanParseError(diags)
    return Plan(tuple(commands), source, tuple(cmd_lines))


def _fmt(v: float) -> str:
    s = f"{v:.6f}"
    return "0.000000" if s == "-0.000000" else s


def format_command(cmd: Command) -> str:
    if isinstance(cmd, OpenGripper):
        return "open_gripper()"
    if isinstance(cmd, CloseGripper):
        return "close_gripper()"
    t = cmd.target
    return f"move_gripper({_fmt(t.x)}, {_fmt(t.y)}, {_fmt(t.z)}, {_fmt(t.yaw)})"


def pretty_print(plan: Plan) -> str:
    """Canonical text: one lowercase statement per line, six decimals, no comments."""
    return "\n".join(format_command(c) for c in plan.commands)


def validate(plan: Plan, workspace: Workspace) -> list[ParseDiagnostic]:
    """Static warnings; execution stays the arbiter."""
    out: list[ParseDiagnostic] = []
    if not plan.commands:
        return [ParseDiagnostic(1, 1, "plan is empty", Severity.WARNING, "empty-plan")]
    lines = plan.lines if len(plan.lines) == len(plan.commands) else tuple(
        range(1, len(plan.commands) + 1))
    last_aperture = None
    for cmd, lineno in zip(plan.commands, lines):
        if isinstance(cmd, MoveGripper):
            if not workspace.contains(*cmd.target.xyz):
                out.append(ParseDiagnostic(
                    lineno, 1, f"target {cmd.target.xyz} lies outside the workspace",
                    Severity.WARNING, "out-of-workspace"))
            continue
        kind = "open" if isinstance(cmd, OpenGripper) else "close"
        if kind == last_aperture:
            out.append(ParseDiagnostic(
                lineno, 1, f"{kind}_gripper while the gripper is already "
                f"{'open' if kind == 'open' else 'closed'}", Severity.WARNING, "sequencing"))
        last_aperture = kind
    return out
