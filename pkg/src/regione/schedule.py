"""Rectified-flow timestep schedules and the discrete Euler sampler.

Step indices count down: sampling starts at ``t_T = 1`` (pure noise) and
ends at ``t_0 = 0`` (clean latent). A step at index ``i`` moves the latent
from ``t_i`` to ``t_{i-1}``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AlreadyTerminalError, InvalidArgumentError


@dataclass(frozen=True)
class TimestepSchedule:
    points: tuple[float, ...]
    kind: str = "uniform"
    shift: float = 1.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 1 or len(pts) < 2:
            raise InvalidArgumentError("schedule needs at least two points")
        if pts[0] != 0.0 or pts[-1] != 1.0:
            raise InvalidArgumentError("schedule must start at 0 and end at 1")
        if np.any(np.diff(pts) <= 0):
            raise InvalidArgumentError("schedule must be strictly increasing")

    @property
    def T(self) -> int:
        return len(self.points) - 1

    def __len__(self) -> int:
        return len(self.points)

    def __getitem__(self, i: int) -> float:
        return self.points[i]

    def dt(self, i: int, j: int) -> float:
        """``t_i - t_j`` as a float64 scalar."""
        return self.points[i] - self.points[j]


def make_schedule(T: int, kind: str = "uniform", shift: float = 1.0) -> TimestepSchedule:
    """Build ``T + 1`` points ``t_0 = 0 < ... < t_T = 1``.

    The shifted kind warps the uniform grid ``u = i/T`` with
    ``shift * u / (1 + (shift - 1) * u)``; ``shift=1`` gives back uniform.
    """
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise InvalidArgumentError(f"T must be a positive integer, got {T!r}")
    u = np.arange(T + 1, dtype=np.float64) / T
    if kind == "uniform":
        pts = u
    elif kind == "shifted":
        if not shift > 0:
            raise InvalidArgumentError(f"shift must be positive, got {shift}")
        pts = shift * u / (1.0 + (shift - 1.0) * u)
    else:
        raise InvalidArgumentError(f"unknown schedule kind {kind!r}")
    pts[0], pts[-1] = 0.0, 1.0
    return TimestepSchedule(tuple(float(p) for p in pts), kind=kind, shift=float(shift))


@dataclass(frozen=True)
class LatentState:
    data: np.ndarray
    step_index: int

    def __post_init__(self):
        if self.step_index < 0:
            raise InvalidArgumentError("step_index must be non-negative")


def interpolate(x0: np.ndarray, x1: np.ndarray, t: float) -> np.ndarray:
    """Point on the straight path ``(1 - t) * x0 + t * x1``."""
    x0 = np.asarray(x0, dtype=np.float32)
    x1 = np.asarray(x1, dtype=np.float32)
    if x0.shape != x1.shape:
        raise InvalidArgumentError(f"shape mismatch {x0.shape} vs {x1.shape}")
    if not 0.0 <= t <= 1.0:
        raise InvalidArgumentError(f"t must lie in [0, 1], got {t}")
    t32 = np.float32(t)
    return (np.float32(1) - t32) * x0 + t32 * x1


def _jump(data: np.ndarray, v: np.ndarray, dt: float) -> np.ndarray:
    # shared by euler_step and one_step_estimate so both round identically
    return data - np.float32(dt) * v


def euler_step(state: LatentState, v: np.ndarray, schedule: TimestepSchedule) -> LatentState:
    i = state.step_index
    if i == 0:
        raise AlreadyTerminalError("latent is already at t_0")
    if i > schedule.T:
        raise InvalidArgumentError(f"step index {i} outside schedule of length {schedule.T}")
    v = np.asarray(v, dtype=np.float32)
    if v.shape != state.data.shape:
        raise InvalidArgumentError(f"velocity shape {v.shape} != latent shape {state.data.shape}")
    return LatentState(_jump(state.data, v, schedule.dt(i, i - 1)), i - 1)


def one_step_estimate(
    state: LatentState, v: np.ndarray, target_index: int, schedule: TimestepSchedule
) -> np.ndarray:
    """Extrapolate the latent straight to ``t_target`` along ``v``.

    Exact whenever the trajectory is a straight line. ``target_index`` equal
    to the current index is accepted and returns a copy of the data.
    """
    i = state.step_index
    if target_index > i or target_index < 0:
        raise InvalidArgumentError(f"target index {target_index} must lie in [0, {i}]")
    v = np.asarray(v, dtype=np.float32)
    if v.shape != state.data.shape:
        raise InvalidArgumentError(f"velocity shape {v.shape} != latent shape {state.data.shape}")
    return _jump(state.data, v, schedule.dt(i, target_index))
