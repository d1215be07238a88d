"""Task catalog: scene randomizers and success verifiers for the nine tasks.

Each task owns a builder (``seed -> objects + goal bindings``) and a verifier
(``instance, final state, trace -> Verdict``). Verifiers are pure geometric
predicates with a single positional tolerance.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

from . import geometry
from .model import (
    Category,
    EnvState,
    ObjectState,
    Pose,
    TaskId,
    TaskSpec,
)
from .sim import SimConfig, TraceStep, is_supported, support_check

VERIFY_TOLERANCE = 0.005
PLACEMENT_ATTEMPTS = 1000
SCENE_ATTEMPTS = 20
GRIPPER_START = Pose(0.0, 0.0, 0.4, 0.0)
COLORS = ("red", "green", "blue", "yellow", "purple", "orange", "cyan", "white")
SPAWN_REGION = ((-0.28, -0.28), (0.28, 0.28))
_SPACING = 0.01


class RandomizeError(RuntimeError):
    pass


class PlacementExhausted(RandomizeError):
    pass


@dataclass(frozen=True)
class TaskInstance:
    spec: TaskSpec
    seed: int
    initial_state: EnvState
    goal_bindings: dict = field(hash=False)
    description: str = ""

    @property
    def task_id(self) -> TaskId:
        return self.spec.task_id


@dataclass(frozen=True)
class Verdict:
    success: bool
    reason: str = "ok"

    def __post_init__(self) -> None:
        if not self.success and not self.reason:
            raise ValueError("a failing verdict needs a reason")

    def __bool__(self) -> bool:
        return self.success


# -- randomization helpers ---------------------------------------------------


def _rng(task_id: TaskId, seed: int) -> random.Random:
    h = hashlib.blake2b(f"{task_id.value}|{int(seed)}".encode(), digest_size=16)
    return random.Random(int.from_bytes(h.digest(), "big"))


class _Placer:
    """Rejection sampler for non-overlapping footprints in a rectangular region."""

    def __init__(self, rng: random.Random, region):
        self.rng = rng
        (self.x0, self.y0), (self.x1, self.y1) = region
        self.discs: list[tuple[float, float, float]] = []

    def place(self, radius: float, what: str) -> tuple[float, float]:
        for _ in range(PLACEMENT_ATTEMPTS):
            x = self.rng.uniform(self.x0 + radius, self.x1 - radius)
            y = self.rng.uniform(self.y0 + radius, self.y1 - radius)
            if all(math.hypot(x - a, y - b) >= radius + r + _SPACING for a, b, r in self.discs):
                self.discs.append((x, y, radius))
                return x, y
        raise PlacementExhausted(f"could not place {what} after {PLACEMENT_ATTEMPTS} attempts")


def _yaw(rng: random.Random) -> float:
    return rng.uniform(-math.pi, math.pi)


def _on_table(obj_id, name, x, y, yaw, l, w, h, category=Category.BLOCK, graspable=True):
    return ObjectState(obj_id, name, Pose(x, y, 0.5 * h, yaw), l, w, h, category, graspable)


def _spawn(rng, placer, obj_id, name, l, w, h, category=Category.BLOCK, graspable=True):
    x, y = placer.place(0.5 * math.hypot(l, w), name)
    return _on_table(obj_id, name, x, y, _yaw(rng), l, w, h, category, graspable)


def _local_to_world(anchor: ObjectState, lx: float, ly: float) -> tuple[float, float]:
    c = anchor.center
    cs, sn = math.cos(c.yaw), math.sin(c.yaw)
    return c.x + cs * lx - sn * ly, c.y + sn * lx + cs * ly


# -- builders: (rng, params) -> (objects, bindings, format args) -------------


def _build_put_block(rng, p):
    zone_color, other = rng.sample(p["colors"], 2)
    placer = _Placer(rng, p["spawn_region"])
    z = p["zone_size"]
    zh = 0.002
    objs = [
        _spawn(rng, placer, "zone_target", f"{zone_color} target area", z, z, zh,
               Category.TARGET_ZONE, False),
        _spawn(rng, placer, "zone_other", f"{other} target area", z, z, zh,
               Category.TARGET_ZONE, False),
    ]
    b = p["block_size"]
    objs.append(_spawn(rng, placer, "block", "block", b, b, b))
    return objs, {"color": zone_color, "block": "block", "zone": "zone_target"}


def _build_stack_blocks(rng, p):
    color, other = rng.sample(p["colors"], 2)
    count = rng.choice(p["stack_count"])
    placer = _Placer(rng, p["spawn_region"])
    b = p["block_size"]
    objs = [_spawn(rng, placer, "target_block", "target block", 0.05, 0.05, b,
                   Category.BLOCK, False)]
    candidates = []
    for i in range(count + 1):
        oid = f"{color}_block_{i + 1}"
        candidates.append(oid)
        objs.append(_spawn(rng, placer, oid, f"{color} block {i + 1}", b, b, b))
    for i in range(p["distractors"]):
        objs.append(_spawn(rng, placer, f"{other}_block_{i + 1}", f"{other} block {i + 1}", b, b, b))
    return objs, {"color": color, "count": count, "target": "target_block",
                  "candidates": tuple(candidates)}


def _build_rubbish_in_bin(rng, p):
    placer = _Placer(rng, p["spawn_region"])
    objs = [
        _spawn(rng, placer, "bin", "bin", 0.14, 0.14, 0.10, Category.CONTAINER, False),
        _spawn(rng, placer, "rubbish", "rubbish", 0.03, 0.03, 0.03),
    ]
    for i in range(p["distractors"]):
        objs.append(_spawn(rng, placer, f"tomato_{i + 1}", f"tomato {i + 1}", 0.035, 0.035, 0.035))
    return objs, {"object": "rubbish", "container": "bin"}


def _build_basketball_in_hoop(rng, p):
    placer = _Placer(rng, p["spawn_region"])
    objs = [
        _spawn(rng, placer, "hoop", "hoop", 0.12, 0.12, p["hoop_height"],
               Category.CONTAINER, False),
        _spawn(rng, placer, "basketball", "basketball", 0.045, 0.045, 0.045),
    ]
    return objs, {"ball": "basketball", "hoop": "hoop", "ring_height": p["ring_height"]}


def _build_close_jar(rng, p):
    color, other = rng.sample(p["colors"], 2)
    placer = _Placer(rng, p["spawn_region"])
    objs = [
        _spawn(rng, placer, "jar_target", f"{color} jar", 0.06, 0.06, 0.08, Category.FIXTURE, False),
        _spawn(rng, placer, "jar_other", f"{other} jar", 0.06, 0.06, 0.08, Category.FIXTURE, False),
        _spawn(rng, placer, "lid", "lid", 0.065, 0.065, 0.015, Category.LID),
    ]
    return objs, {"color": color, "lid": "lid", "jar": "jar_target"}


def _build_insert_in_peg(rng, p):
    colors = rng.sample(p["colors"], p["pegs"])
    placer = _Placer(rng, p["spawn_region"])
    objs = []
    for c in colors:
        x, y = placer.place(p["peg_clearance"], f"{c} peg")
        objs.append(_on_table(f"peg_{c}", f"{c} peg", x, y, _yaw(rng), 0.015, 0.015, 0.10,
                              Category.PEG, False))
    objs.append(_spawn(rng, placer, "ring", "square ring", 0.05, 0.05, 0.015, Category.RING))
    return objs, {"color": colors[0], "ring": "ring", "peg": f"peg_{colors[0]}"}


def _build_meat_off_grill(rng, p):
    placer = _Placer(rng, p["spawn_region"])
    grill = _spawn(rng, placer, "grill", "grill", 0.24, 0.14, 0.06, Category.FIXTURE, False)
    zone = _spawn(rng, placer, "area", "designated area", 0.12, 0.12, 0.002,
                  Category.TARGET_ZONE, False)
    sizes = {"chicken": (0.06, 0.04, 0.025), "steak": (0.07, 0.045, 0.02)}
    kinds = list(sizes)
    rng.shuffle(kinds)
    objs = [grill, zone]
    for kind, lx in zip(kinds, (-0.06, 0.06)):
        x, y = _local_to_world(grill, lx, 0.0)
        l, w, h = sizes[kind]
        yaw = grill.center.yaw + rng.uniform(-0.3, 0.3)
        objs.append(ObjectState(kind, kind, Pose(x, y, grill.top + 0.5 * h, yaw), l, w, h))
    meat = rng.choice(sorted(sizes))
    return objs, {"meat": meat, "object": meat, "container": "area"}


def _build_open_bottle(rng, p):
    placer = _Placer(rng, p["bottle_region"])
    bottle = _spawn(rng, placer, "bottle", "wine bottle", 0.07, 0.07, 0.20, Category.FIXTURE, False)
    ch = 0.025
    c = bottle.center
    cap = ObjectState("cap", "bottle cap", Pose(c.x, c.y, bottle.top + 0.5 * ch, c.yaw),
                      0.03, 0.03, ch, Category.LID)
    return [bottle, cap], {"cap": "cap", "bottle": "bottle",
                           "mount": (cap.center.x, cap.center.y, cap.center.z)}


def _build_empty_container(rng, p):
    color, other = rng.sample(p["colors"], 2)
    placer = _Placer(rng, p["spawn_region"])
    big = _spawn(rng, placer, "large_container", "large container", 0.18, 0.18, 0.06,
                 Category.CONTAINER, False)
    objs = [
        big,
        _spawn(rng, placer, "container_target", f"{color} container", 0.13, 0.13, 0.06,
               Category.CONTAINER, False),
        _spawn(rng, placer, "container_other", f"{other} container", 0.13, 0.13, 0.06,
               Category.CONTAINER, False),
    ]
    lo, hi = p["item_count"]
    n = rng.randint(lo, hi)
    kinds = rng.sample(sorted(p["items"]), n)
    inner = _Placer(rng, ((-0.09, -0.09), (0.09, 0.09)))
    items = []
    for i, kind in enumerate(kinds):
        l, w, h = p["items"][kind]
        lx, ly = inner.place(0.5 * math.hypot(l, w) + 0.005, kind)
        x, y = _local_to_world(big, lx, ly)
        oid = f"item_{i + 1}"
        items.append(oid)
        objs.append(_on_table(oid, kind, x, y, _yaw(rng), l, w, h))
    return objs, {"color": color, "container": "container_target", "source": "large_container",
                  "items": tuple(items)}


# -- verification helpers ----------------------------------------------------


def _fail(msg: str) -> Verdict:
    return Verdict(False, msg)


def _check_contained(obj: ObjectState, region: ObjectState, tol: float) -> Optional[str]:
    if obj.attached_to is not None:
        return f"containment: {obj.name} is still held by the gripper"
    d = geometry.distance_to_footprint(obj.center.x, obj.center.y, region)
    if d > tol:
        return f"containment: {obj.name} center is {d:.4f} m outside the {region.name} footprint"
    if obj.bottom < region.bottom - tol:
        return f"containment: {obj.name} bottom is below the {region.name} bottom"
    if obj.bottom > region.top + tol:
        return f"containment: {obj.name} bottom is above the {region.name} top"
    return None


def _verify_put_block(inst, state, trace, tol, cfg):
    b = state.get(inst.goal_bindings["block"])
    zone = state.get(inst.goal_bindings["zone"])
    if b.attached_to is not None:
        return _fail("containment: block is still held by the gripper")
    d = geometry.distance_to_footprint(b.center.x, b.center.y, zone)
    if d > tol:
        return _fail(f"containment: block center is {d:.4f} m outside the {zone.name}")
    if not is_supported(b, state.objects, cfg, tol=tol):
        return _fail("support: block is not resting on a surface")
    return Verdict(True)


def _verify_stack_blocks(inst, state, trace, tol, cfg):
    gb = inst.goal_bindings
    need = gb["count"]
    color = gb["color"]
    pool = [o for o in state.objects
            if o.id in gb["candidates"] and o.name.startswith(color) and o.attached_to is None]

    def sits_on(o, below):
        if geometry.distance_to_footprint(o.center.x, o.center.y, below) > tol:
            return False
        return abs(o.bottom - below.top) <= tol

    def depth(below, used):
        best = 0
        for o in pool:
            if o.id not in used and sits_on(o, below):
                best = max(best, 1 + depth(o, used | {o.id}))
                if best >= need:
                    break
        return best

    got = depth(state.get(gb["target"]), frozenset())
    if got < need:
        return _fail(f"stacking: {got} of {need} {color} blocks stacked on the target block")
    return Verdict(True)


def _verify_containment(inst, state, trace, tol, cfg):
    gb = inst.goal_bindings
    msg = _check_contained(state.get(gb["object"]), state.get(gb["container"]), tol)
    return _fail(msg) if msg else Verdict(True)


def _verify_basketball(inst, state, trace, tol, cfg):
    gb = inst.goal_bindings
    if trace is None:
        return _fail("pass-through: no execution trace available")
    ring_h = gb["ring_height"]
    passed = False
    for t in trace:
        ball = t.state.get(gb["ball"])
        hoop = t.state.get(gb["hoop"])
        c = ball.center
        if (geometry.distance_to_footprint(c.x, c.y, hoop) <= tol
                and hoop.top - ring_h - tol <= c.z <= hoop.top + tol):
            passed = True
            break
    if not passed:
        return _fail("pass-through: basketball center never entered the hoop ring")
    msg = _check_contained(state.get(gb["ball"]), state.get(gb["hoop"]), tol)
    return _fail(msg) if msg else Verdict(True)


def _verify_close_jar(inst, state, trace, tol, cfg):
    gb = inst.goal_bindings
    lid, jar = state.get(gb["lid"]), state.get(gb["jar"])
    if lid.attached_to is not None:
        return _fail("lid: still held by the gripper")
    d = math.hypot(lid.center.x - jar.center.x, lid.center.y - jar.center.y)
    if d > tol:
        return _fail(f"lid: center is {d:.4f} m from the {jar.name} axis")
    if abs(lid.bottom - jar.top) > tol:
        return _fail(f"lid: not resting on the {jar.name} top")
    return Verdict(True)


def _verify_insert_in_peg(inst, state, trace, tol, cfg):
    gb = inst.goal_bindings
    ring, peg = state.get(gb["ring"]), state.get(gb["peg"])
    if ring.attached_to is not None:
        return _fail("peg: ring is still held by the gripper")
    d = math.hypot(ring.center.x - peg.center.x, ring.center.y - peg.center.y)
    if d > tol:
        return _fail(f"peg: ring center is {d:.4f} m from the {peg.name} axis")
    if not ring.bottom < peg.top + tol:
        return _fail(f"peg: ring sits above the {peg.name} top")
    return Verdict(True)


def _verify_open_bottle(inst, state, trace, tol, cfg):
    cap = state.get(inst.goal_bindings["cap"])
    mx, my, mz = inst.goal_bindings["mount"]
    d = math.dist((cap.center.x, cap.center.y, cap.center.z), (mx, my, mz))
    if d < 2.0 * cap.height - tol:
        return _fail(f"cap: displaced only {d:.4f} m from its mount")
    return Verdict(True)


def _verify_empty_container(inst, state, trace, tol, cfg):
    gb = inst.goal_bindings
    target = state.get(gb["container"])
    for oid in gb["items"]:
        msg = _check_contained(state.get(oid), target, tol)
        if msg:
            return _fail(msg)
    return Verdict(True)


# -- catalog -----------------------------------------------------------------


@dataclass(frozen=True)
class _TaskEntry:
    spec: TaskSpec
    build: Callable
    verify: Callable


def _entry(task_id, description, params, build, verify):
    return _TaskEntry(TaskSpec(task_id, description, params), build, verify)


_BASE = {"spawn_region": SPAWN_REGION, "colors": COLORS}

CATALOG: dict[TaskId, _TaskEntry] = {
    e.spec.task_id: e
    for e in (
        _entry(TaskId.BASKETBALL_IN_HOOP, "Put the basketball in the hoop.",
               {**_BASE, "hoop_height": 0.25, "ring_height": 0.04},
               _build_basketball_in_hoop, _verify_basketball),
        _entry(TaskId.CLOSE_JAR, "Close the {color} jar with the lid.", dict(_BASE),
               _build_close_jar, _verify_close_jar),
        _entry(TaskId.EMPTY_CONTAINER,
               "Pick all the objects from the large container and put them into the "
               "{color} container.",
               {**_BASE, "spawn_region": ((-0.36, -0.36), (0.36, 0.36)), "item_count": (2, 4),
                "items": {"cube": (0.03, 0.03, 0.03), "cylinder": (0.03, 0.03, 0.04),
                          "prism": (0.035, 0.025, 0.03), "sphere": (0.032, 0.032, 0.032)}},
               _build_empty_container, _verify_empty_container),
        _entry(TaskId.INSERT_IN_PEG, "Insert the square ring into the {color} peg.",
               {**_BASE, "pegs": 3, "peg_clearance": 0.06},
               _build_insert_in_peg, _verify_insert_in_peg),
        _entry(TaskId.MEAT_OFF_GRILL,
               "Pick the {meat} from the grill and place it into the designated area.",
               dict(_BASE), _build_meat_off_grill, _verify_containment),
        _entry(TaskId.OPEN_BOTTLE, "Remove the cap of the wine bottle.",
               {**_BASE, "bottle_region": ((-0.2, -0.2), (0.2, 0.2))},
               _build_open_bottle, _verify_open_bottle),
        _entry(TaskId.PUT_BLOCK, "Put the block in the {color} target area.",
               {**_BASE, "zone_size": 0.10, "block_size": 0.04},
               _build_put_block, _verify_put_block),
        _entry(TaskId.RUBBISH_IN_BIN, "Put the rubbish in the bin.",
               {**_BASE, "distractors": 2}, _build_rubbish_in_bin, _verify_containment),
        _entry(TaskId.STACK_BLOCKS, "Stack {count} {color} blocks on the target block.",
               {**_BASE, "stack_count": (2, 3), "block_size": 0.04, "distractors": 2},
               _build_stack_blocks, _verify_stack_blocks),
    )
}

ALL_TASKS: tuple[TaskId, ...] = tuple(CATALOG)


def task_spec(task_id) -> TaskSpec:
    return CATALOG[TaskId(task_id)].spec


def randomize(spec: TaskSpec, seed: int) -> TaskInstance:
    """Sample a scene for ``spec``; deterministic in ``(spec.task_id, seed)``."""
    entry = CATALOG[spec.task_id]
    rng = _rng(spec.task_id, seed)
    # a crowded draw is resampled from the same stream, so the result stays seeded
    for _ in range(SCENE_ATTEMPTS - 1):
        try:
            objs, bindings = entry.build(rng, spec.randomizer_params)
            break
        except PlacementExhausted:
            continue
    else:
        objs, bindings = entry.build(rng, spec.randomizer_params)
    state = EnvState(tuple(objs), GRIPPER_START, True)
    if not support_check(state, SimConfig()):
        raise RandomizeError(f"{spec.task_id.value} seed {seed}: unsupported initial scene")
    description = spec.description.format(**bindings)
    return TaskInstance(spec, int(seed), state, bindings, description)


def verify(instance: TaskInstance, final_state: EnvState,
           trace: Optional[Sequence[TraceStep]] = None,
           tolerance: float = VERIFY_TOLERANCE,
           sim_config: Optional[SimConfig] = None) -> Verdict:
    """Decide whether ``final_state`` solves the instance's task."""
    cfg = sim_config or SimConfig()
    entry = CATALOG[instance.spec.task_id]
    return entry.verify(instance, final_state, trace, tolerance, cfg)


def verifier_name(task_id) -> str:
    return CATALOG[TaskId(task_id)].verify.__name__.lstrip("_")


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    return v


def catalog_manifest(tasks: Iterable = ALL_TASKS) -> list[dict]:
    """Machine-readable task catalog for docs and the command line."""
    out = []
    for t in tasks:
        e = CATALOG[TaskId(t)]
        out.append({
            "task_id": e.spec.task_id.value,
            "description": e.spec.description,
            "randomizer": _jsonable(e.spec.randomizer_params),
            "verifier": verifier_name(t),
        })
    return out
