"""Planner prompts: scene serialization and template filling."""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Union

from .model import EnvState

MARKERS = ("{{TASK}}", "{{EE_POSITION}}", "{{EE_ORIENTATION}}", "{{STATE}}")
_MARKER_RE = re.compile("|".join(re.escape(m) for m in MARKERS))


class PromptError(ValueError):
    pass


class UnresolvedPlaceholder(PromptError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    text: str

    def __post_init__(self) -> None:
        for m in MARKERS:
            n = self.text.count(m)
            if n != 1:
                raise PromptError(f"template must contain {m} exactly once, found {n}")

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "PromptTemplate":
        return cls(Path(path).read_text(encoding="utf-8"))


def default_template() -> PromptTemplate:
    text = resources.files("bootplan").joinpath("templates/default_prompt.txt").read_text(
        encoding="utf-8")
    return PromptTemplate(text)


def serialize_state(state: EnvState) -> str:
    """One line per object, sorted by id, four decimals."""
    lines = []
    for o in sorted(state.objects, key=lambda o: o.id):
        c = o.center
        lines.append(
            f"{o.name}: center=({c.x:.4f}, {c.y:.4f}, {c.z:.4f}), yaw={c.yaw:.4f}, "
            f"size=({o.length:.4f}, {o.width:.4f}, {o.height:.4f})"
        )
    return "\n".join(lines)


def build_prompt(template: PromptTemplate, instance) -> str:
    """Fill the four markers from a task instance.

    ``instance`` needs ``description`` and ``initial_state``; the state it
    carries is what the planner sees (ground truth or a fused estimate).
    """
    state = instance.initial_state
    g = state.gripper_pose
    values = {
        "{{TASK}}": instance.description,
        "{{EE_POSITION}}": f"({g.x:.4f}, {g.y:.4f}, {g.z:.4f})",
        "{{EE_ORIENTATION}}": f"{g.yaw:.4f}",
        "{{STATE}}": serialize_state(state),
    }
    if not instance.description or not instance.description.strip():
        raise UnresolvedPlaceholder("{{TASK}} has no task description to insert")
    if re.search(r"\{[a-z_]+\}", instance.description):
        raise UnresolvedPlaceholder(f"task description still has fields: {instance.description!r}")
    # single pass, so inserted text is never re-scanned for markers
    return _MARKER_RE.sub(lambda m: values[m.group(0)], template.text)
