"""Value types shared across the simulator, task library, planners and dataset code.

Every type here is immutable after construction. Constructors reject invalid
input with :class:`ModelError`; the only silent adjustment is yaw
normalization into ``[-pi, pi)`` (and the micron grid applied to
``move_gripper`` targets, see :class:`MoveGripper`).
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field
from typing import Optional, Union

TWO_PI = 2.0 * math.pi
DIGEST_GRID = 1e-6
MAX_PLAN_LENGTH = 100
GRIPPER = "gripper"


class ModelError(ValueError):
    """Raised when a domain value violates its construction invariants."""


def normalize_yaw(angle: float) -> float:
    """Wrap ``angle`` (radians) into ``[-pi, pi)``."""
    if not math.isfinite(angle):
        raise ModelError(f"yaw must be finite, got {angle!r}")
    if -math.pi <= angle < math.pi:
        return float(angle)
    r = math.fmod(angle + math.pi, TWO_PI)
    if r < 0.0:
        r += TWO_PI
    out = r - math.pi
    # float rounding can land exactly on +pi
    if out >= math.pi:
        out -= TWO_PI
    return out


def _require_finite(**values: float) -> None:
    for name, v in values.items():
        if not math.isfinite(v):
            raise ModelError(f"{name} must be finite, got {v!r}")


@dataclass(frozen=True, slots=True)
class Pose:
    x: float
    y: float
    z: float
    yaw: float = 0.0

    def __post_init__(self) -> None:
        _require_finite(x=self.x, y=self.y, z=self.z, yaw=self.yaw)
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))

    @property
    def xyz(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)


class Category(str, enum.Enum):
    BLOCK = "block"
    CONTAINER = "container"
    TARGET_ZONE = "target_zone"
    LID = "lid"
    PEG = "peg"
    RING = "ring"
    FIXTURE = "fixture"


_NEVER_GRASPABLE = (Category.TARGET_ZONE, Category.FIXTURE)


@dataclass(frozen=True, slots=True)
class ObjectState:
    """One object as a yaw-rotated cuboid: center pose plus length/width/height."""

    id: str
    name: str
    center: Pose
    length: float
    width: float
    height: float
    category: Category = Category.BLOCK
    graspable: bool = True
    attached_to: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ModelError("object id must be non-empty")
        _require_finite(length=self.length, width=self.width, height=self.height)
        if min(self.length, self.width, self.height) <= 0.0:
            raise ModelError(
                f"{self.id}: dimensions must be positive, got "
                f"({self.length}, {self.width}, {self.height})"
            )
        object.__setattr__(self, "category", Category(self.category))
        if self.graspable and self.category in _NEVER_GRASPABLE:
            raise ModelError(f"{self.id}: a {self.category.value} cannot be graspable")

    @property
    def bottom(self) -> float:
        return self.center.z - 0.5 * self.height

    @property
    def top(self) -> float:
        return self.center.z + 0.5 * self.height

    def moved(self, center: Pose, attached_to: Optional[str] = None) -> "ObjectState":
        return ObjectState(
            self.id, self.name, center, self.length, self.width, self.height,
            self.category, self.graspable, attached_to,
        )


@dataclass(frozen=True, slots=True)
class Workspace:
    lo: tuple[float, float, float] = (-0.5, -0.5, 0.0)
    hi: tuple[float, float, float] = (0.5, 0.5, 0.6)

    def __post_init__(self) -> None:
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        if len(self.lo) != 3 or len(self.hi) != 3:
            raise ModelError("workspace bounds need three components")
        _require_finite(**{f"lo{i}": v for i, v in enumerate(self.lo)})
        _require_finite(**{f"hi{i}": v for i, v in enumerate(self.hi)})
        if any(a >= b for a, b in zip(self.lo, self.hi)):
            raise ModelError(f"empty workspace {self.lo} .. {self.hi}")

    def contains(self, x: float, y: float, z: float) -> bool:
        lo, hi = self.lo, self.hi
        return lo[0] <= x <= hi[0] and lo[1] <= y <= hi[1] and lo[2] <= z <= hi[2]


@dataclass(frozen=True, slots=True)
class EnvState:
    """The full scene: objects, gripper pose and aperture state.

    Construction enforces unique ids and single attachment. Physical support and
    non-interpenetration are checked by :func:`bootplan.sim.support_check`, so
    that deliberately unphysical states can still be built and inspected.
    """

    objects: tuple[ObjectState, ...]
    gripper_pose: Pose
    gripper_open: bool = True
    workspace: Workspace = field(default_factory=Workspace)

    def __post_init__(self) -> None:
        objs = tuple(self.objects)
        object.__setattr__(self, "objects", objs)
        ids = [o.id for o in objs]
        if len(set(ids)) != len(ids):
            raise ModelError(f"duplicate object ids in {ids}")
        if sum(o.attached_to is not None for o in objs) > 1:
            raise ModelError("more than one object attached to the gripper")

    def get(self, object_id: str) -> ObjectState:
        for o in self.objects:
            if o.id == object_id:
                return o
        raise KeyError(object_id)

    @property
    def attached(self) -> Optional[ObjectState]:
        for o in self.objects:
            if o.attached_to is not None:
                return o
        return None


def _q(v: float) -> int:
    return int(round(v / DIGEST_GRID))


def state_digest(state: EnvState) -> str:
    """SHA-256 hex digest of ``state`` on a 1e-6 grid, independent of object order."""
    parts = []
    for o in sorted(state.objects, key=lambda o: o.id):
        c = o.center
        parts.append(
            f"{o.id}\x1f{o.name}\x1f{o.category.value}\x1f{int(o.graspable)}\x1f"
            f"{o.attached_to or ''}\x1f{_q(c.x)},{_q(c.y)},{_q(c.z)},{_q(c.yaw)}\x1f"
            f"{_q(o.length)},{_q(o.width)},{_q(o.height)}"
        )
    g = state.gripper_pose
    ws = state.workspace
    parts.append(
        f"gripper\x1f{_q(g.x)},{_q(g.y)},{_q(g.z)},{_q(g.yaw)}\x1f{int(state.gripper_open)}"
    )
    parts.append("ws\x1f" + ",".join(str(_q(v)) for v in ws.lo + ws.hi))
    return hashlib.sha256("\x1e".join(parts).encode("utf-8")).hexdigest()


class TaskId(str, enum.Enum):
    """The nine manipulation tasks, in reporting order."""

    BASKETBALL_IN_HOOP = "basketball_in_hoop"
    CLOSE_JAR = "close_jar"
    EMPTY_CONTAINER = "empty_container"
    INSERT_IN_PEG = "insert_in_peg"
    MEAT_OFF_GRILL = "meat_off_grill"
    OPEN_BOTTLE = "open_bottle"
    PUT_BLOCK = "put_block"
    RUBBISH_IN_BIN = "rubbish_in_bin"
    STACK_BLOCKS = "stack_blocks"


@dataclass(frozen=True)
class TaskSpec:
    task_id: TaskId
    description: str
    randomizer_params: dict = field(default_factory=dict, hash=False, compare=True)

    def __post_init__(self) -> None:
        object.__setattr__(self, "task_id", TaskId(self.task_id))
        if not self.description.strip():
            raise ModelError(f"{self.task_id.value}: empty task description")


# -- commands ---------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class OpenGripper:
    pass


@dataclass(frozen=True, slots=True)
class CloseGripper:
    pass


def _grid(v: float) -> float:
    return round(v, 6)


def _grid_yaw(v: float) -> float:
    q = _grid(normalize_yaw(v))
    if not -math.pi <= q < math.pi:
        q = _grid(normalize_yaw(q))
    return q


@dataclass(frozen=True, slots=True)
class MoveGripper:
    """Move the gripper to ``target``.

    Targets live on the 1e-6 m / 1e-6 rad grid used by the canonical text form,
    so a printed plan parses back to the identical command.
    """

    target: Pose

    def __post_init__(self) -> None:
        t = self.target
        object.__setattr__(
            self, "target", Pose(_grid(t.x), _grid(t.y), _grid(t.z), _grid_yaw(t.yaw))
        )


Command = Union[OpenGripper, CloseGripper, MoveGripper]


@dataclass(frozen=True)
class Plan:
    commands: tuple[Command, ...] = ()
    source_text: str = field(default="", compare=False)
    # 1-based source line of each command, when parsed from text
    lines: tuple[int, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "commands", tuple(self.commands))
        if len(self.commands) > MAX_PLAN_LENGTH:
            raise ModelError(
                f"plan has {len(self.commands)} commands, cap is {MAX_PLAN_LENGTH}"
            )
        for c in self.commands:
            if not isinstance(c, (OpenGripper, CloseGripper, MoveGripper)):
                raise ModelError(f"not a command: {c!r}")

    def __len__(self) -> int:
        return len(self.commands)


# -- episodes and records ---------------------------------------------------


class Outcome(str, enum.Enum):
    SUCCESS = "success"
    TASK_FAILURE = "task_failure"
    PARSE_ERROR = "parse_error"
    EXECUTION_ERROR = "execution_error"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class Episode:
    task_id: TaskId
    seed: int
    initial_state: EnvState
    prompt: str
    raw_completion: str
    plan: Optional[Plan]
    trace: tuple[tuple[int, str], ...]
    verdict: Outcome
    reason: str = ""
    planner_error: Optional[str] = None
    final_digest: Optional[str] = None

    def __post_init__(self) -> None:
        if self.verdict is Outcome.SUCCESS:
            if self.plan is None or len(self.trace) != len(self.plan):
                raise ModelError("a successful episode needs a plan and a complete trace")


@dataclass(frozen=True)
class SftRecord:
    prompt: str
    completion: str
    task_id: TaskId
    seed: int
    verifier_digest: str

    def to_json_dict(self) -> dict:
        return {
            "prompt": self.prompt,
            "completion": self.completion,
            "task_id": TaskId(self.task_id).value,
            "seed": self.seed,
            "verifier_digest": self.verifier_digest,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "SftRecord":
        extra = set(d) - {"prompt", "completion", "task_id", "seed", "verifier_digest"}
        if extra:
            raise ModelError(f"unexpected record fields {sorted(extra)}")
        return cls(d["prompt"], d["completion"], TaskId(d["task_id"]), int(d["seed"]),
                   d["verifier_digest"])
