"""Deterministic kinematic tabletop simulator for open/close/move gripper commands.

Motion is a teleport along a straight segment; only the table plane and the
workspace box are collision-checked. Released objects fall straight down onto
the highest support whose footprint overlaps theirs.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

from . import geometry
from .model import (
    GRIPPER,
    CloseGripper,
    Command,
    EnvState,
    MoveGripper,
    ObjectState,
    OpenGripper,
    Plan,
    Pose,
    Category,
    Workspace,
    state_digest,
)

# square rings are modeled with a fixed wall thickness; the hole is the rest
RING_WALL = 0.01


@dataclass(frozen=True)
class SimConfig:
    max_aperture: float = 0.08
    jaw_depth: float = 0.04
    grasp_xy_tolerance: float = 0.015
    contact_tolerance: float = 0.002
    placement_overlap_tolerance: float = 0.25
    workspace: Workspace = field(default_factory=Workspace)
    max_commands_per_episode: int = 100

    def __post_init__(self) -> None:
        if isinstance(self.workspace, dict):
            object.__setattr__(self, "workspace", Workspace(**self.workspace))
        elif isinstance(self.workspace, (list, tuple)):
            object.__setattr__(self, "workspace", Workspace(*self.workspace))
        tols = (self.max_aperture, self.jaw_depth, self.grasp_xy_tolerance,
                self.contact_tolerance, self.placement_overlap_tolerance)
        if not all(math.isfinite(t) and t > 0 for t in tols):
            raise ValueError(f"simulator tolerances must be positive: {tols}")
        if self.max_aperture <= self.grasp_xy_tolerance:
            raise ValueError("max_aperture must exceed grasp_xy_tolerance")
        if self.max_commands_per_episode < 1:
            raise ValueError("max_commands_per_episode must be >= 1")

    def to_dict(self) -> dict:
        return {
            "max_aperture": self.max_aperture,
            "jaw_depth": self.jaw_depth,
            "grasp_xy_tolerance": self.grasp_xy_tolerance,
            "contact_tolerance": self.contact_tolerance,
            "placement_overlap_tolerance": self.placement_overlap_tolerance,
            "workspace": {"lo": list(self.workspace.lo), "hi": list(self.workspace.hi)},
            "max_commands_per_episode": self.max_commands_per_episode,
        }


class Event(str, enum.Enum):
    MOVED = "moved"
    GRASPED = "grasped"
    GRASP_FAILED_EMPTY = "grasp_failed_empty"
    RELEASED = "released"
    RELEASED_NOTHING = "released_nothing"
    OPENED_ALREADY_OPEN = "opened_already_open"
    CLOSED_ALREADY_CLOSED = "closed_already_closed"


@dataclass(frozen=True)
class StepOutcome:
    new_state: EnvState
    event: Event
    object_id: Optional[str] = None


class SimError(Exception):
    """Execution failure. ``index`` is the failing command's position, when known."""

    def __init__(self, message: str, index: Optional[int] = None):
        super().__init__(message)
        self.index = index


class OutOfWorkspace(SimError):
    pass


class TablePenetration(SimError):
    pass


class AmbiguousGrasp(SimError):
    pass


class NonFiniteTarget(SimError):
    pass


class PlanTooLong(SimError):
    pass


# -- support ----------------------------------------------------------------


def _peg_passes_ring(ring: ObjectState, peg: ObjectState) -> bool:
    hx = 0.5 * ring.length - RING_WALL
    hy = 0.5 * ring.width - RING_WALL
    if hx <= 0 or hy <= 0:
        return False
    for cx, cy in geometry.corners(peg):
        lx, ly = geometry.to_local(cx, cy, ring)
        if abs(lx) > hx or abs(ly) > hy:
            return False
    return True


def support_surface(obj: ObjectState, other: ObjectState, config: SimConfig) -> Optional[float]:
    """Height at which ``other`` would hold ``obj`` up, or None if it cannot."""
    if geometry.overlap_fraction(obj, other) <= config.placement_overlap_tolerance:
        return None
    if obj.category is Category.RING and other.category is Category.PEG:
        if _peg_passes_ring(obj, other):
            return None
    if other.category is Category.CONTAINER:
        if geometry.distance_to_footprint(obj.center.x, obj.center.y, other) == 0.0:
            return other.bottom
    return other.top


def is_supported(obj: ObjectState, objects, config: SimConfig,
                 tol: Optional[float] = None, include_attached: bool = True) -> bool:
    """True if ``obj`` rests on the table or on another object within ``tol``."""
    tol = config.contact_tolerance if tol is None else tol
    b = obj.bottom
    if abs(b) <= tol:
        return True
    for other in objects:
        if other.id == obj.id:
            continue
        if other.attached_to is not None and not include_attached:
            continue
        s = support_surface(obj, other, config)
        if s is not None and abs(b - s) <= tol:
            return True
    return False


def support_check(state: EnvState, config: SimConfig) -> bool:
    """Every non-attached object is supported within the contact tolerance."""
    return all(
        is_supported(o, state.objects, config)
        for o in state.objects
        if o.attached_to is None
    )


def _settle(objects: list[ObjectState], config: SimConfig) -> list[ObjectState]:
    # lowest first, so anything dropped lands on already-settled supports
    order = sorted(
        (i for i, o in enumerate(objects) if o.attached_to is None),
        key=lambda i: (objects[i].bottom, objects[i].id),
    )
    eps = config.contact_tolerance
    for i in order:
        o = objects[i]
        if is_supported(o, objects, config, include_attached=False):
            continue
        b = o.bottom
        best = 0.0
        for other in objects:
            if other.id == o.id or other.attached_to is not None:
                continue
            s = support_surface(o, other, config)
            if s is not None and s <= b + eps and s > best:
                best = s
        c = o.center
        objects[i] = o.moved(Pose(c.x, c.y, best + 0.5 * o.height, c.yaw))
    return objects


# -- stepping ---------------------------------------------------------------


def _grasp_candidates(state: EnvState, config: SimConfig) -> list[ObjectState]:
    g = state.gripper_pose
    out = []
    for o in state.objects:
        if not o.graspable or o.attached_to is not None:
            continue
        if math.hypot(o.center.x - g.x, o.center.y - g.y) > config.grasp_xy_tolerance:
            continue
        gap = g.z - o.top
        if gap < 0.0 or gap > config.jaw_depth:
            continue
        if geometry.grasp_extent(o, g.yaw) > config.max_aperture:
            continue
        out.append(o)
    return out


def _move(state: EnvState, target: Pose, config: SimConfig) -> StepOutcome:
    g = state.gripper_pose
    if not all(math.isfinite(v) for v in (target.x, target.y, target.z, target.yaw)):
        raise NonFiniteTarget(f"non-finite target {target}")
    # the swept segment is linear in z, so checking both endpoints covers it
    if target.z < 0.0 or g.z < 0.0:
        raise TablePenetration(f"gripper path reaches z={min(target.z, g.z):.4f} below the table")
    ws = config.workspace
    if not ws.contains(*target.xyz) or not ws.contains(*g.xyz):
        raise OutOfWorkspace(f"gripper path leaves the workspace at {target.xyz}")
    att = state.attached
    if att is None:
        return StepOutcome(
            EnvState(state.objects, target, state.gripper_open, state.workspace), Event.MOVED
        )
    dyaw = target.yaw - g.yaw
    cs, sn = math.cos(dyaw), math.sin(dyaw)
    ox, oy = att.center.x - g.x, att.center.y - g.y
    new_center = Pose(
        target.x + cs * ox - sn * oy,
        target.y + sn * ox + cs * oy,
        att.center.z + (target.z - g.z),
        att.center.yaw + dyaw,
    )
    floor = -config.contact_tolerance
    if new_center.z - 0.5 * att.height < floor or att.bottom < floor:
        raise TablePenetration(
            f"carried {att.id} would reach bottom z={new_center.z - 0.5 * att.height:.4f}"
        )
    objs = [o.moved(new_center, GRIPPER) if o.id == att.id else o for o in state.objects]
    objs = _settle(objs, config)
    return StepOutcome(EnvState(objs, target, state.gripper_open, state.workspace), Event.MOVED)


def step(state: EnvState, cmd: Command, config: SimConfig) -> StepOutcome:
    """Apply one command. Raises a :class:`SimError` subclass on failure."""
    if isinstance(cmd, MoveGripper):
        return _move(state, cmd.target, config)
    if isinstance(cmd, CloseGripper):
        if not state.gripper_open:
            return StepOutcome(state, Event.CLOSED_ALREADY_CLOSED)
        cands = _grasp_candidates(state, config)
        if len(cands) > 1:
            raise AmbiguousGrasp(
                "grasp is ambiguous between " + ", ".join(o.id for o in cands)
            )
        if not cands:
            return StepOutcome(
                EnvState(state.objects, state.gripper_pose, False, state.workspace),
                Event.GRASP_FAILED_EMPTY,
            )
        picked = cands[0].id
        objs = [o.moved(o.center, GRIPPER) if o.id == picked else o for o in state.objects]
        return StepOutcome(
            EnvState(objs, state.gripper_pose, False, state.workspace), Event.GRASPED, picked
        )
    if isinstance(cmd, OpenGripper):
        if state.gripper_open:
            return StepOutcome(state, Event.OPENED_ALREADY_OPEN)
        att = state.attached
        if att is None:
            return StepOutcome(
                EnvState(state.objects, state.gripper_pose, True, state.workspace),
                Event.RELEASED_NOTHING,
            )
        objs = [o.moved(o.center, None) if o.id == att.id else o for o in state.objects]
        objs = _settle(objs, config)
        return StepOutcome(
            EnvState(objs, state.gripper_pose, True, state.workspace), Event.RELEASED, att.id
        )
    raise TypeError(f"unknown command {cmd!r}")


@dataclass(frozen=True)
class TraceStep:
    index: int
    digest: str
    state: EnvState = field(repr=False, compare=False)
    event: Event = Event.MOVED


@dataclass(frozen=True)
class ExecutionResult:
    final_state: EnvState
    trace: tuple[TraceStep, ...]

    @property
    def digests(self) -> tuple[tuple[int, str], ...]:
        return tuple((t.index, t.digest) for t in self.trace)


def execute(state: EnvState, plan: Plan, config: SimConfig) -> ExecutionResult:
    """Fold :func:`step` over the plan, recording a digest after every command.

    The first :class:`SimError` propagates with ``index`` set and the partial
    trace attached as ``err.trace``.
    """
    if len(plan.commands) > config.max_commands_per_episode:
        raise PlanTooLong(
            f"plan has {len(plan.commands)} commands, limit is "
            f"{config.max_commands_per_episode}",
            index=config.max_commands_per_episode,
        )
    trace: list[TraceStep] = []
    for i, cmd in enumerate(plan.commands):
        try:
            out = step(state, cmd, config)
        except SimError as err:
            err.index = i
            err.trace = tuple(trace)
            raise
        state = out.new_state
        trace.append(TraceStep(i, state_digest(state), state, out.event))
    return ExecutionResult(state, tuple(trace))
