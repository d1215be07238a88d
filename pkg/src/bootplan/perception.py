"""Synthetic multi-view perception: noisy per-view estimates and median fusion."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .model import TWO_PI, Category, EnvState, ObjectState, Pose, Workspace, normalize_yaw

MIN_DIMENSION = 1e-4


@dataclass(frozen=True)
class NoiseModel:
    sigma_pos: float = 0.005
    sigma_dim: float = 0.003
    sigma_yaw: float = 0.035
    outlier_probability: float = 0.1
    outlier_offset: float = 0.2

    def __post_init__(self) -> None:
        if min(self.sigma_pos, self.sigma_dim, self.sigma_yaw, self.outlier_offset) < 0:
            raise ValueError("noise scales must be non-negative")
        if not 0.0 <= self.outlier_probability < 1.0:
            raise ValueError("outlier_probability must lie in [0, 1)")

    @classmethod
    def zero(cls) -> "NoiseModel":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class ObjectEstimate:
    id: str
    name: str
    category: Category
    graspable: bool
    attached_to: Optional[str]
    x: float
    y: float
    z: float
    yaw: float
    length: float
    width: float
    height: float


@dataclass(frozen=True)
class ViewEstimate:
    view: int
    objects: tuple[ObjectEstimate, ...]
    # ground-truth outlier labels, per object; for tests only
    is_outlier: tuple[bool, ...]
    gripper_pose: Pose
    gripper_open: bool
    workspace: Workspace


class FuseError(ValueError):
    pass


class ViewCountMismatch(FuseError):
    pass


def _generator(seed: int) -> np.random.Generator:
    h = hashlib.blake2b(f"observe|{int(seed)}".encode(), digest_size=16).digest()
    return np.random.default_rng(int.from_bytes(h, "big"))


def observe(state: EnvState, model: NoiseModel, views: int, seed: int) -> list[ViewEstimate]:
    """Per-view estimates with Gaussian noise and occasional gross position outliers."""
    if views < 1:
        raise ValueError("need at least one view")
    rng = _generator(seed)
    objs = sorted(state.objects, key=lambda o: o.id)
    k = len(objs)
    pos = np.array([[o.center.x, o.center.y, o.center.z] for o in objs]).reshape(k, 3)
    yaw = np.array([o.center.yaw for o in objs])
    dims = np.array([[o.length, o.width, o.height] for o in objs]).reshape(k, 3)

    noisy_pos = pos + rng.normal(0.0, model.sigma_pos, size=(views, k, 3))
    noisy_yaw = yaw + rng.normal(0.0, model.sigma_yaw, size=(views, k))
    noisy_dims = dims + rng.normal(0.0, model.sigma_dim, size=(views, k, 3))
    outlier = rng.random(size=(views, k)) < model.outlier_probability
    offsets = rng.uniform(-model.outlier_offset, model.outlier_offset, size=(views, k, 3))
    noisy_pos = np.where(outlier[..., None], pos + offsets, noisy_pos)

    out = []
    for v in range(views):
        ests = []
        for i, o in enumerate(objs):
            px, py, pz = (float(c) for c in noisy_pos[v, i])
            l, w, h = (float(c) for c in noisy_dims[v, i])
            ests.append(ObjectEstimate(
                o.id, o.name, o.category, o.graspable, o.attached_to,
                px, py, pz, normalize_yaw(float(noisy_yaw[v, i])), l, w, h,
            ))
        out.append(ViewEstimate(v, tuple(ests), tuple(bool(b) for b in outlier[v]),
                                state.gripper_pose, state.gripper_open, state.workspace))
    return out


def lower_median(values: Sequence[float]) -> float:
    """Median that always returns an observed value (lower middle for even counts)."""
    s = sorted(values)
    return s[(len(s) - 1) // 2]


def circular_lower_median(angles: Sequence[float]) -> float:
    """Lower median of angles after unwrapping each next to their circular mean."""
    mean = math.atan2(sum(math.sin(a) for a in angles), sum(math.cos(a) for a in angles))
    unwrapped = [a + TWO_PI * round((mean - a) / TWO_PI) for a in angles]
    return normalize_yaw(lower_median(unwrapped))


def fuse(estimates: Sequence[ViewEstimate]) -> EnvState:
    """Component-wise median across views; yaw on the circle, dimensions kept positive."""
    if not estimates:
        raise FuseError("no views to fuse")
    first = estimates[0]
    ids = [o.id for o in first.objects]
    for v in estimates[1:]:
        if [o.id for o in v.objects] != ids:
            raise ViewCountMismatch(
                f"view {v.view} reports {len(v.objects)} objects, view {first.view} {len(ids)}"
            )
    n = len(estimates)
    if not ids:
        return EnvState((), first.gripper_pose, first.gripper_open, first.workspace)
    # fields: x, y, z, yaw, l, w, h  -> array (views, objects, 7)
    arr = np.array([[(o.x, o.y, o.z, o.yaw, o.length, o.width, o.height) for o in v.objects]
                    for v in estimates])
    med = np.sort(arr, axis=0)[(n - 1) // 2]
    fused = []
    for i, ref in enumerate(first.objects):
        yaw = circular_lower_median(arr[:, i, 3].tolist())
        x, y, z = (float(c) for c in med[i, :3])
        l, w, h = (max(float(c), MIN_DIMENSION) for c in med[i, 4:])
        fused.append(ObjectState(ref.id, ref.name, Pose(x, y, z, yaw), l, w, h,
                                 ref.category, ref.graspable, ref.attached_to))
    return EnvState(tuple(fused), first.gripper_pose, first.gripper_open, first.workspace)


def estimate_state(state: EnvState, model: NoiseModel, views: int, seed: int) -> EnvState:
    return fuse(observe(state, model, views, seed))
