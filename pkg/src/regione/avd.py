"""Adaptive velocity decay cache for edited-region steps.

Between two model calls the velocity magnitude is modelled as shrinking by
``(1 - dt) * gamma_i`` per step, where ``dt = t_{i+1} - t_i`` comes from the
solver and ``gamma_i`` is a per-timestep correction fitted from vanilla
runs. A cached velocity is reused, rescaled by the running product of those
factors, until ``1 - product`` exceeds the threshold ``delta``.

With ``gamma == 1`` the rescaled velocity is exactly what a residual
("store ``v - x``") cache produces; see :func:`residual_cache_velocity`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np

from .errors import CacheMissError, CalibrationDegenerateError, InvalidArgumentError
from .schedule import TimestepSchedule


def _f32(x: float) -> float:
    return float(np.float32(x))


@dataclass(frozen=True)
class GammaTable:
    """Per-step-index correction factors.

    The unit table stores nothing and answers 1.0 everywhere. A calibrated
    table may be partial; looking up a missing index is an error.
    """

    gamma: Mapping[int, float] = field(default_factory=dict)
    source: str = "unit"
    num_samples: int = 0

    def __post_init__(self):
        clean = {int(k): _f32(v) for k, v in dict(self.gamma).items()}
        bad = [k for k, v in clean.items() if not v > 0 or not math.isfinite(v)]
        if bad:
            raise InvalidArgumentError(f"gamma must be positive and finite at {sorted(bad)}")
        object.__setattr__(self, "gamma", dict(sorted(clean.items())))

    @classmethod
    def unit(cls) -> "GammaTable":
        return cls()

    @property
    def is_unit(self) -> bool:
        return self.source == "unit"

    def __getitem__(self, i: int) -> float:
        if self.is_unit:
            return 1.0
        try:
            return self.gamma[i]
        except KeyError:
            raise InvalidArgumentError(f"gamma table has no entry for step index {i}") from None

    def to_text(self) -> str:
        head = "# source=unit\n" if self.is_unit else f"# source=calibrated({self.num_samples})\n"
        return head + "".join(f"{k}\t{v:.9g}\n" for k, v in self.gamma.items())

    @classmethod
    def from_text(cls, text: str) -> "GammaTable":
        source, n = "calibrated", 0
        entries = {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("# source=unit"):
                    source = "unit"
                elif line.startswith("# source=calibrated("):
                    n = int(line[len("# source=calibrated(") : line.index(")")])
                continue
            idx, val = line.split("\t")
            entries[int(idx)] = float(val)
        if source == "unit" and entries:
            raise InvalidArgumentError("unit gamma table cannot carry entries")
        return cls(entries, source=source, num_samples=n)


def decay_factor(i: int, schedule: TimestepSchedule, gamma: GammaTable) -> float:
    """``(1 - (t_{i+1} - t_i)) * gamma_i``: predicted ``|v_i| / |v_{i+1}|``."""
    if not 0 <= i < schedule.T:
        raise InvalidArgumentError(f"step index {i} has no successor in a {schedule.T}-step schedule")
    return (1.0 - schedule.dt(i + 1, i)) * gamma[i]


@dataclass(frozen=True)
class VelocityCacheState:
    v_cached: np.ndarray | None = None
    cached_at: int = -1
    decay_product: float = 1.0

    @property
    def criterion(self) -> float:
        return 1.0 - self.decay_product

    @property
    def empty(self) -> bool:
        return self.v_cached is None

    @classmethod
    def fresh(cls, v: np.ndarray, step: int) -> "VelocityCacheState":
        return cls(np.asarray(v, dtype=np.float32), int(step), 1.0)


def accumulate_criterion(
    state: VelocityCacheState, i: int, schedule: TimestepSchedule, gamma: GammaTable
) -> VelocityCacheState:
    if state.empty:
        raise CacheMissError("no cached velocity to decay")
    return replace(state, decay_product=state.decay_product * decay_factor(i, schedule, gamma))


def decide_and_velocity(
    state: VelocityCacheState,
    i: int,
    schedule: TimestepSchedule,
    gamma: GammaTable,
    delta: float,
    compute: Callable[[], np.ndarray],
) -> tuple[np.ndarray, VelocityCacheState]:
    """Velocity for step ``i``: either a fresh model call or the decayed cache.

    The current step's factor is folded in before comparing against
    ``delta``; ``compute`` is only called when the tentative criterion
    exceeds it (or nothing is cached yet). A fresh call shows up as
    ``new_state.cached_at == i``.
    """
    if delta < 0:
        raise InvalidArgumentError(f"delta must be non-negative, got {delta}")
    if not state.empty:
        tentative = accumulate_criterion(state, i, schedule, gamma)
        if tentative.criterion <= delta:
            return tentative.v_cached * np.float32(tentative.decay_product), tentative
    v = np.asarray(compute(), dtype=np.float32)
    return v, VelocityCacheState.fresh(v, i)


def residual_cache_velocity(
    v_cached: np.ndarray, i_start: int, i_end: int, schedule: TimestepSchedule
) -> np.ndarray:
    """Velocity implied at ``i_end`` by residual caching from ``i_start``.

    Reusing ``delta = v - x`` across Euler steps multiplies the velocity by
    ``1 - dt`` per step, so ``N = i_start - i_end`` skips give
    ``prod_{k=i_end}^{i_start-1} (1 - (t_{k+1} - t_k)) * v``.
    """
    if i_end > i_start or i_end < 0 or i_start > schedule.T:
        raise InvalidArgumentError(f"need 0 <= i_end <= i_start <= T, got {i_end}, {i_start}")
    coeff = 1.0
    for k in range(i_start - 1, i_end - 1, -1):
        coeff *= 1.0 - schedule.dt(k + 1, k)
    return np.asarray(v_cached, dtype=np.float32) * np.float32(coeff)


def fit_gamma(
    traces,
    schedule: TimestepSchedule,
    aggregate: str = "mean",
    skip_degenerate: bool = False,
) -> GammaTable:
    """Fit per-step corrections from vanilla-run velocity norms.

    Args:
        traces: one sequence per run, holding the velocity norm at step
            indices ``T, T-1, ..., 1`` in that (sampling) order.
        schedule: the schedule the traces were sampled on.
        aggregate: ``"mean"`` or ``"median"`` across traces.
        skip_degenerate: leave indices without any usable ratio out of the
            table instead of raising.

    Returns:
        Calibrated table with ``gamma_i`` for ``i = 1 .. T-1``:
        ``agg(|v_i| / |v_{i+1}|) / (1 - (t_{i+1} - t_i))``.
    """
    T = schedule.T
    arr = [np.asarray(tr, dtype=np.float64) for tr in traces]
    if not arr:
        raise InvalidArgumentError("need at least one trace")
    for tr in arr:
        if tr.shape != (T,):
            raise InvalidArgumentError(f"trace of length {tr.shape} for a {T}-step schedule")
    agg = {"mean": np.mean, "median": np.median}.get(aggregate)
    if agg is None:
        raise InvalidArgumentError(f"unknown aggregate {aggregate!r}")

    table, degenerate = {}, []
    for i in range(1, T):
        # trace position of step index i is T - i
        ratios = [tr[T - i] / tr[T - i - 1] for tr in arr if tr[T - i - 1] != 0]
        if not ratios:
            degenerate.append(i)
            continue
        table[i] = float(agg(ratios)) / (1.0 - schedule.dt(i + 1, i))
    if degenerate and not skip_degenerate:
        raise CalibrationDegenerateError(degenerate)
    return GammaTable(table, source="calibrated", num_samples=len(arr))
