"""Vanilla and region-aware samplers.

The region-aware sampler runs three stages over descending step indices:

1. stabilization: ``t_st`` ordinary full steps, K/V recorded on the last;
2. region-aware generation: the noise tokens are split once into edited and
   unedited sets. Between consecutive boundaries ``prev > next`` of
   ``[T - t_st, *forced_steps, t_sm - 1]`` unedited tokens jump straight to
   ``t_{next+1}`` with the velocity from the last full call, while edited
   tokens take Euler steps ``prev .. next+2`` with region calls (cached K/V
   for everything else) or decayed cached velocities. The two halves are
   then merged and one full call at ``next + 1`` advances everything to
   ``next`` and refreshes the K/V snapshot;
3. smooth: the remaining ``t_sm - 1`` steps run as full calls.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .avd import GammaTable, VelocityCacheState, decide_and_velocity
from .errors import InvalidArgumentError, InvalidConfigError
from .models import cfg_combine
from .partition import RegionMask, adaptive_region_partition
from .rikv import KVStore, snapshot
from .schedule import LatentState, TimestepSchedule, euler_step, make_schedule, one_step_estimate

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RegionEConfig:
    T: int = 28
    t_st: int = 6
    t_sm: int = 2
    forced_steps: tuple[int, ...] = (16,)
    eta: float = 0.88
    delta: float = 0.02
    gamma: GammaTable = field(default_factory=GammaTable.unit)
    cfg_scale: float | None = None
    se_radius: int = 1
    se_iterations: int = 1
    schedule_kind: str = "uniform"
    shift: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "forced_steps", tuple(int(f) for f in self.forced_steps))

    def schedule(self) -> TimestepSchedule:
        return make_schedule(self.T, self.schedule_kind, self.shift)

    def boundaries(self) -> list[int]:
        return [self.T - self.t_st, *self.forced_steps, self.t_sm - 1]

    def validate(self) -> None:
        """Raise :class:`InvalidConfigError` unless the region-aware run is well formed."""
        problems = []
        if self.T < 1:
            problems.append("T must be at least 1")
        if self.t_st < 1 or self.t_sm < 1:
            problems.append("t_st and t_sm must both be at least 1")
        if self.t_st + self.t_sm >= self.T:
            problems.append(f"t_st + t_sm = {self.t_st + self.t_sm} must be below T = {self.T}")
        fs = list(self.forced_steps)
        if fs != sorted(set(fs), reverse=True):
            problems.append(f"forced_steps must be strictly descending, got {fs}")
        lo, hi = self.t_sm, self.T - self.t_st - 1
        outside = [f for f in fs if not lo <= f <= hi]
        if outside:
            problems.append(f"forced steps {outside} outside [{lo}, {hi}]")
        if not self.delta >= 0:
            problems.append("delta must be non-negative")
        if not np.isfinite(self.eta):
            problems.append("eta must be finite")
        if self.se_radius < 0 or self.se_iterations < 0:
            problems.append("morphology parameters must be non-negative")
        if self.cfg_scale is not None and not np.isfinite(self.cfg_scale):
            problems.append("cfg_scale must be finite or None")
        try:
            self.schedule()
        except InvalidArgumentError as exc:
            problems.append(str(exc))
        if problems:
            raise InvalidConfigError("; ".join(problems))

    @property
    def branches(self) -> int:
        return 1 if self.cfg_scale is None else 2


@dataclass(frozen=True)
class StepRecord:
    step: int
    stage: str
    kind: str
    tokens: int

    def to_dict(self) -> dict:
        return {"step": self.step, "stage": self.stage, "kind": self.kind, "tokens": self.tokens}


@dataclass(eq=False)
class RunReport:
    final_latent: np.ndarray
    mask: RegionMask | None
    full_forward_count: int
    region_forward_count: int
    cached_step_count: int
    token_steps_vanilla: int
    token_steps_actual: int
    wall_time: float
    step_log: list[StepRecord] = field(default_factory=list)
    velocity_norms: list[float] | None = None
    snapshot_steps: list[int] = field(default_factory=list)


def gather_scatter(
    full: np.ndarray, edited_part: np.ndarray, unedited_part: np.ndarray, mask: RegionMask
) -> np.ndarray:
    """Write edited and unedited rows back to their token positions."""
    e, u = mask.edited_index, mask.unedited_index
    if full.shape[0] != mask.n_tokens:
        raise InvalidArgumentError(f"{full.shape[0]} rows for a mask of {mask.n_tokens} tokens")
    if edited_part.shape[0] != len(e) or unedited_part.shape[0] != len(u):
        raise InvalidArgumentError(
            f"parts of {edited_part.shape[0]}/{unedited_part.shape[0]} rows for "
            f"{len(e)} edited / {len(u)} unedited tokens"
        )
    out = np.empty_like(full)
    out[e] = edited_part
    out[u] = unedited_part
    return out


class _Runner:
    """Model-call bookkeeping shared by both samplers (CFG, K/V, step log)."""

    def __init__(self, model, seq, cfg: RegionEConfig):
        self.model = model
        self.seq = seq
        self.cfg = cfg
        self.schedule = cfg.schedule()
        self.n_full = seq.n_total
        self.log: list[StepRecord] = []
        self.raw_kv: list | None = None
        self.raw_kv_step = -1
        self.stores: list[KVStore] = [KVStore.empty() for _ in range(cfg.branches)]
        self.snapshot_steps: list[int] = []

    def _combine(self, outs):
        if self.cfg.cfg_scale is None:
            return outs[0].velocity
        return cfg_combine(outs[0].velocity, outs[1].velocity, self.cfg.cfg_scale)

    def full(self, x: np.ndarray, i: int, stage: str, store: bool = False) -> np.ndarray:
        seq = self.seq.with_noise(x)
        t = self.schedule[i]
        mode = "store" if store else "plain"
        outs = [
            self.model.forward(seq, t, mode=mode, uncond=bool(b)) for b in range(self.cfg.branches)
        ]
        if store:
            self.raw_kv = [o.kv_snapshot for o in outs]
            self.raw_kv_step = i
        self.log.append(StepRecord(i, stage, "full", self.n_full * self.cfg.branches))
        return self._combine(outs)

    def region(self, x: np.ndarray, i: int, active: np.ndarray) -> np.ndarray:
        seq = self.seq.with_noise(x)
        t = self.schedule[i]
        outs = [
            self.model.forward(seq, t, mode="inject", store=self.stores[b], active=active, uncond=bool(b))
            for b in range(self.cfg.branches)
        ]
        tokens = (self.seq.n_prompt + len(active)) * self.cfg.branches
        self.log.append(StepRecord(i, "rags", "region", tokens))
        return self._combine(outs)

    def refresh_stores(self, mask: RegionMask) -> None:
        self.stores = [
            snapshot(kv, mask, self.raw_kv_step, self.seq.n_prompt) for kv in self.raw_kv
        ]
        self.snapshot_steps.append(self.raw_kv_step)

    def report(self, x, mask, t0, norms=None) -> RunReport:
        kinds = [r.kind for r in self.log]
        return RunReport(
            final_latent=x,
            mask=mask,
            full_forward_count=kinds.count("full"),
            region_forward_count=kinds.count("region"),
            cached_step_count=kinds.count("cached") + kinds.count("empty"),
            token_steps_vanilla=self.cfg.T * self.n_full * self.cfg.branches,
            token_steps_actual=sum(r.tokens for r in self.log),
            wall_time=time.perf_counter() - t0,
            step_log=list(self.log),
            velocity_norms=norms,
            snapshot_steps=list(self.snapshot_steps),
        )


def vanilla_sample(model, seq, cfg: RegionEConfig, norm_rows=None) -> RunReport:
    """Plain Euler sampling with one full call per step.

    Args:
        norm_rows: optional token ids; when given, the L2 norm of the
            velocity restricted to those rows is recorded at every step
            (sampling order ``T .. 1``), as needed for gamma fitting.
    """
    if cfg.T < 1:
        raise InvalidConfigError("T must be at least 1")
    t0 = time.perf_counter()
    run = _Runner(model, seq, cfg)
    state = LatentState(seq.noise.copy(), cfg.T)
    norms = [] if norm_rows is not None else None
    for i in range(cfg.T, 0, -1):
        v = run.full(state.data, i, "vanilla")
        if norms is not None:
            norms.append(float(np.linalg.norm(v[norm_rows].astype(np.float64))))
        state = euler_step(state, v, run.schedule)
    return run.report(state.data, None, t0, norms)


def _stabilize(run: _Runner, cfg: RegionEConfig):
    state = LatentState(run.seq.noise.copy(), cfg.T)
    last = cfg.T - cfg.t_st + 1
    v = None
    for i in range(cfg.T, last - 1, -1):
        v = run.full(state.data, i, "sts", store=(i == last))
        state = euler_step(state, v, run.schedule)
    mask = adaptive_region_partition(state, v, run.seq.instruction, cfg, run.seq.grid, run.seq.cells)
    return state, v, mask


def find_mask(model, seq, cfg: RegionEConfig) -> RegionMask:
    """Run only the stabilization stage and return the region partition."""
    cfg.validate()
    return _stabilize(_Runner(model, seq, cfg), cfg)[2]


def regione_sample(model, seq, cfg: RegionEConfig) -> RunReport:
    cfg.validate()
    t0 = time.perf_counter()
    run = _Runner(model, seq, cfg)
    sched = run.schedule

    state, v_full, mask = _stabilize(run, cfg)
    run.refresh_stores(mask)
    e_idx, u_idx = mask.edited_index, mask.unedited_index
    log.info(
        "partition: %d edited / %d unedited tokens (eta=%.3f)", len(e_idx), len(u_idx), cfg.eta
    )

    bounds = cfg.boundaries()
    for prev, nxt in zip(bounds[:-1], bounds[1:]):
        x = state.data
        x_u = one_step_estimate(LatentState(x[u_idx], prev), v_full[u_idx], nxt + 1, sched)

        work = x.copy()
        avd = VelocityCacheState.fresh(v_full[e_idx], prev + 1)
        for j in range(prev, nxt + 1, -1):
            if len(e_idx) == 0:
                run.log.append(StepRecord(j, "rags", "empty", 0))
                continue

            def compute(j=j):
                return run.region(work, j, e_idx)

            v_e, avd = decide_and_velocity(avd, j, sched, cfg.gamma, cfg.delta, compute)
            if avd.cached_at != j:
                run.log.append(StepRecord(j, "rags", "cached", 0))
            work[e_idx] = euler_step(LatentState(work[e_idx], j), v_e, sched).data

        merged = gather_scatter(x, work[e_idx], x_u, mask)
        state = LatentState(merged, nxt + 1)
        v_full = run.full(state.data, nxt + 1, "rags", store=True)
        run.refresh_stores(mask)
        state = euler_step(state, v_full, sched)

    for i in range(cfg.t_sm - 1, 0, -1):
        v = run.full(state.data, i, "sms")
        state = euler_step(state, v, sched)

    report = run.report(state.data, mask, t0)
    log.info(
        "regione: %d full, %d region, %d cached; %d/%d token-steps",
        report.full_forward_count,
        report.region_forward_count,
        report.cached_step_count,
        report.token_steps_actual,
        report.token_steps_vanilla,
    )
    return report

