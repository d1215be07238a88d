"""Plan producers: a chat-completions client and a scripted oracle.

Every planner maps ``(prompt, instance)`` to raw text. The remote planner uses
only the prompt; the oracle reads the scene from ``instance`` (which carries the
state the planner is allowed to see) and ignores the prompt text.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import math
import os
import random
import time
from dataclasses import dataclass
from typing import Optional

import httpx

from .dsl import pretty_print
from .model import (
    CloseGripper,
    Command,
    MoveGripper,
    ObjectState,
    OpenGripper,
    Plan,
    Pose,
    TaskId,
)

log = logging.getLogger(__name__)

SAFE_Z = 0.40
PREGRASP_RISE = 0.10
GRASP_DEPTH = 0.02  # gripper z above the object top at grasp time
RELEASE_GAP = 0.01
DEGRADE_OFFSET = 0.10


class PlannerKind(str, enum.Enum):
    REMOTE = "remote"
    ORACLE = "oracle"
    ORACLE_DEGRADED = "oracle-degraded"


@dataclass(frozen=True)
class PlannerConfig:
    kind: PlannerKind = PlannerKind.ORACLE
    failure_rate: float = 0.0
    endpoint: str = "http://localhost:8000/v1/chat/completions"
    model: str = "meta-llama/Llama-3.3-70B-Instruct"
    temperature: float = 0.7
    max_tokens: int = 1024
    timeout: float = 60.0
    max_attempts: int = 3
    backoff_base: float = 0.5
    concurrency: int = 4
    api_key_env: str = "BOOTPLAN_API_KEY"
    verbose: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", PlannerKind(self.kind))
        if not 0.0 <= self.failure_rate <= 1.0:
            raise ValueError(f"failure_rate must lie in [0, 1], got {self.failure_rate}")
        if not self.timeout > 0:
            raise ValueError("timeout must be positive")
        if self.max_attempts < 1 or self.concurrency < 1:
            raise ValueError("max_attempts and concurrency must be >= 1")
        if self.backoff_base < 0:
            raise ValueError("backoff_base must be >= 0")

    @classmethod
    def from_flag(cls, flag: str, **kw) -> "PlannerConfig":
        """Build from ``remote``, ``oracle`` or ``oracle-degraded:<rate>``."""
        name, _, rate = flag.partition(":")
        kind = PlannerKind(name)
        if kind is PlannerKind.ORACLE_DEGRADED:
            if not rate:
                raise ValueError("oracle-degraded needs a rate, e.g. oracle-degraded:0.3")
            return cls(kind=kind, failure_rate=float(rate), **kw)
        if rate:
            raise ValueError(f"planner {name} takes no parameter")
        return cls(kind=kind, **kw)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["kind"] = self.kind.value
        return d


class PlannerError(Exception):
    pass


class PlannerTimeout(PlannerError):
    pass


class HttpStatusError(PlannerError):
    def __init__(self, code: int, body: str = ""):
        super().__init__(f"HTTP {code}: {body[:200]}")
        self.code = code


class MalformedResponse(PlannerError):
    pass


class RetriesExhausted(PlannerError):
    def __init__(self, attempts: int, last: PlannerError):
        super().__init__(f"gave up after {attempts} attempts: {last}")
        self.attempts = attempts
        self.last = last


# -- oracle ------------------------------------------------------------------


def _grasp_yaw(obj: ObjectState) -> float:
    # close across the narrower side
    yaw = obj.center.yaw
    return yaw if obj.width <= obj.length else yaw + 0.5 * math.pi


def _move(x: float, y: float, z: float, yaw: float) -> MoveGripper:
    return MoveGripper(Pose(x, y, z, yaw))


class _Script:
    def __init__(self):
        self.cmds: list[Command] = []

    def pick(self, obj: ObjectState) -> float:
        c = obj.center
        yaw = _grasp_yaw(obj)
        gz = obj.top + GRASP_DEPTH
        self.cmds += [
            _move(c.x, c.y, gz + PREGRASP_RISE, yaw),
            _move(c.x, c.y, gz, yaw),
            CloseGripper(),
            _move(c.x, c.y, SAFE_Z, yaw),
        ]
        return yaw

    def carry_to(self, x: float, y: float, gripper_z: float, yaw: float) -> None:
        self.cmds += [_move(x, y, SAFE_Z, yaw), _move(x, y, gripper_z, yaw)]

    def release(self, x: float, y: float, yaw: float) -> None:
        self.cmds += [OpenGripper(), _move(x, y, SAFE_Z, yaw)]

    def place(self, obj: ObjectState, x: float, y: float, bottom: float, yaw: float) -> None:
        """Lower ``obj`` (grasped by :meth:`pick`) so its bottom is just above ``bottom``."""
        self.carry_to(x, y, bottom + RELEASE_GAP + obj.height + GRASP_DEPTH, yaw)
        self.release(x, y, yaw)


def _local_to_world(anchor: ObjectState, lx: float, ly: float) -> tuple[float, float]:
    c = anchor.center
    cs, sn = math.cos(c.yaw), math.sin(c.yaw)
    return c.x + cs * lx - sn * ly, c.y + sn * lx + cs * ly


def oracle_commands(instance) -> list[Command]:
    """Scripted pick-and-place solution computed from the instance's visible state."""
    st = instance.initial_state
    gb = instance.goal_bindings
    tid = TaskId(instance.spec.task_id)
    s = _Script()

    def pick_place(obj_id, x, y, bottom):
        obj = st.get(obj_id)
        yaw = s.pick(obj)
        s.place(obj, x, y, bottom, yaw)

    if tid is TaskId.PUT_BLOCK:
        zone = st.get(gb["zone"])
        pick_place(gb["block"], zone.center.x, zone.center.y, zone.top)
    elif tid is TaskId.STACK_BLOCKS:
        base = st.get(gb["target"])
        top = base.top
        for oid in gb["candidates"][: gb["count"]]:
            pick_place(oid, base.center.x, base.center.y, top)
            top += st.get(oid).height
    elif tid in (TaskId.RUBBISH_IN_BIN, TaskId.MEAT_OFF_GRILL):
        region = st.get(gb["container"])
        floor = region.bottom if tid is TaskId.RUBBISH_IN_BIN else region.top
        pick_place(gb["object"], region.center.x, region.center.y, floor)
    elif tid is TaskId.BASKETBALL_IN_HOOP:
        ball, hoop = st.get(gb["ball"]), st.get(gb["hoop"])
        yaw = s.pick(ball)
        ring_mid = hoop.top - 0.5 * gb["ring_height"]
        x, y = hoop.center.x, hoop.center.y
        s.carry_to(x, y, ring_mid + 0.5 * ball.height + GRASP_DEPTH, yaw)
        s.release(x, y, yaw)
    elif tid is TaskId.CLOSE_JAR:
        jar = st.get(gb["jar"])
        pick_place(gb["lid"], jar.center.x, jar.center.y, jar.top)
    elif tid is TaskId.INSERT_IN_PEG:
        peg = st.get(gb["peg"])
        pick_place(gb["ring"], peg.center.x, peg.center.y, peg.top)
    elif tid is TaskId.OPEN_BOTTLE:
        bottle = st.get(gb["bottle"])
        bx, by = bottle.center.x, bottle.center.y
        r = math.hypot(bx, by)
        ux, uy = (-bx / r, -by / r) if r > 1e-3 else (1.0, 0.0)
        pick_place(gb["cap"], bx + 0.15 * ux, by + 0.15 * uy, 0.0)
    elif tid is TaskId.EMPTY_CONTAINER:
        target = st.get(gb["container"])
        slots = [(-0.035, -0.035), (0.035, -0.035), (-0.035, 0.035), (0.035, 0.035)]
        for oid, (lx, ly) in zip(gb["items"], slots):
            x, y = _local_to_world(target, lx, ly)
            pick_place(oid, x, y, target.bottom)
    else:  # pragma: no cover
        raise ValueError(f"no oracle strategy for {tid}")
    return s.cmds


def _instance_rng(tag: str, seed: int) -> random.Random:
    h = hashlib.blake2b(f"{tag}|{int(seed)}".encode(), digest_size=16)
    return random.Random(int.from_bytes(h.digest(), "big"))


def degrade(commands: list[Command], seed: int, failure_rate: float) -> list[Command]:
    """With probability ``failure_rate`` break the first grasp.

    The break is either raising the grasp waypoint by 10 cm or dropping the
    ``close_gripper``; both leave the first object where it was.
    """
    rng = _instance_rng("degrade", seed)
    if rng.random() >= failure_rate:
        return list(commands)
    idx = next((i for i, c in enumerate(commands) if isinstance(c, CloseGripper)), None)
    if idx is None:
        return list(commands)
    out = list(commands)
    if rng.random() < 0.5 and idx > 0 and isinstance(out[idx - 1], MoveGripper):
        t = out[idx - 1].target
        out[idx - 1] = MoveGripper(Pose(t.x, t.y, t.z + DEGRADE_OFFSET, t.yaw))
    else:
        del out[idx]
    return out


class OraclePlanner:
    def __init__(self, config: Optional[PlannerConfig] = None):
        self.config = config or PlannerConfig()

    def commands(self, instance) -> list[Command]:
        return oracle_commands(instance)

    def complete(self, prompt: str, instance=None) -> str:
        if instance is None:
            raise PlannerError("the oracle needs the task instance")
        return pretty_print(Plan(tuple(self.commands(instance)))) + "\n"


class DegradedOraclePlanner(OraclePlanner):
    def commands(self, instance) -> list[Command]:
        return degrade(oracle_commands(instance), instance.seed, self.config.failure_rate)


# -- remote ------------------------------------------------------------------


def _redact(headers: dict) -> dict:
    return {k: ("***" if k.lower() == "authorization" else v) for k, v in headers.items()}


class RemotePlanner:
    """Chat-completions client with bounded retries.

    Wall time per call never exceeds ``timeout * max_attempts``: backoff sleeps
    and request timeouts are both charged against that budget.
    """

    _RETRY_STATUS = {408, 409, 425, 429, 500, 502, 503, 504}

    def __init__(self, config: PlannerConfig, client: Optional[httpx.Client] = None):
        self.config = config
        self._client = client or httpx.Client(
            limits=httpx.Limits(max_connections=config.concurrency)
        )

    def close(self) -> None:
        self._client.close()

    def _headers(self) -> dict:
        h = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env)
        if key:
            h["Authorization"] = f"Bearer {key}"
        return h

    def _once(self, body: dict, timeout: float) -> str:
        cfg = self.config
        headers = self._headers()
        if cfg.verbose:
            log.info("POST %s headers=%s body=%s", cfg.endpoint, _redact(headers), json.dumps(body))
        try:
            resp = self._client.post(cfg.endpoint, json=body, headers=headers, timeout=timeout)
        except httpx.TimeoutException as e:
            raise PlannerTimeout(f"no response within {timeout:.1f}s") from e
        except httpx.HTTPError as e:
            raise PlannerError(f"transport error: {e}") from e
        if cfg.verbose:
            log.info("response %s: %s", resp.status_code, resp.text[:2000])
        if resp.status_code != 200:
            raise HttpStatusError(resp.status_code, resp.text)
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise MalformedResponse(f"unexpected response body: {resp.text[:200]}") from e
        if not isinstance(content, str):
            raise MalformedResponse("message content is not a string")
        return content

    def complete(self, prompt: str, instance=None) -> str:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        cfg = self.config
        body = {
            "model": cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_tokens,
        }
        deadline = time.monotonic() + cfg.timeout * cfg.max_attempts
        last: Optional[PlannerError] = None
        attempts = 0
        for attempt in range(cfg.max_attempts):
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                break
            attempts += 1
            try:
                return self._once(body, min(cfg.timeout, remaining))
            except HttpStatusError as e:
                if e.code not in self._RETRY_STATUS:
                    raise
                last = e
            except MalformedResponse:
                raise
            except PlannerError as e:
                last = e
            if attempt + 1 < cfg.max_attempts:
                pause = cfg.backoff_base * (2 ** attempt)
                if time.monotonic() + pause >= deadline:
                    break
                time.sleep(pause)
        assert last is not None
        if attempts <= 1 and cfg.max_attempts == 1:
            raise last
        raise RetriesExhausted(attempts, last)


def make_planner(config: PlannerConfig):
    if config.kind is PlannerKind.ORACLE:
        return OraclePlanner(config)
    if config.kind is PlannerKind.ORACLE_DEGRADED:
        return DegradedOraclePlanner(config)
    return RemotePlanner(config)


def complete(config: PlannerConfig, prompt: str, instance=None) -> str:
    """One-shot convenience wrapper around :func:`make_planner`."""
    planner = make_planner(config)
    try:
        return planner.complete(prompt, instance)
    finally:
        if isinstance(planner, RemotePlanner):
            planner.close()
