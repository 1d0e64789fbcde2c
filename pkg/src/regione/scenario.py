"""Benchmark scenarios: INI config files, model and token construction.

A config file has one section per concern and only flat ``key = value``
pairs::

    [scenario]
    model = toy-dit          ; or analytic
    seed = 0
    grid = 16x16
    edited_block = 0,0,8,16  ; row, col, height, width
    out = out

    [model]
    dim = 64
    heads = 4
    layers = 4
    prompt_tokens = 8
    weights_seed = 0
    curvature = 0.2

    [schedule]
    steps = 28
    kind = uniform
    shift = 1.0

    [regione]
    t_st = 6
    t_sm = 2
    forced_steps = 16
    cfg_scale = none

    [partition]
    eta = 0.88
    se_radius = 1
    se_iterations = 1

    [cache]
    delta = 0.02
    gamma = unit             ; or a path to a gamma table
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .avd import GammaTable
from .errors import InvalidConfigError
from .models import AnalyticField, AnalyticModel, SegmentedSequence, ToyDiT, ToyDiTWeights
from .pipeline import RegionEConfig

MODEL_KINDS = ("toy-dit", "analytic")


@dataclass(frozen=True)
class BenchScenario:
    model: str = "toy-dit"
    seed: int = 0
    grid: tuple[int, int] = (16, 16)
    edited_block: tuple[int, int, int, int] = (0, 0, 8, 16)
    out_dir: str = "out"
    dim: int = 64
    heads: int = 4
    layers: int = 4
    prompt_tokens: int = 8
    weights_seed: int = 0
    curvature: float = 0.2
    gamma_source: str = "unit"
    config: RegionEConfig = field(default_factory=RegionEConfig)

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise InvalidConfigError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        h, w = self.grid
        r, c, bh, bw = self.edited_block
        if h < 1 or w < 1:
            raise InvalidConfigError(f"bad grid {self.grid}")
        if r < 0 or c < 0 or bh < 0 or bw < 0 or r + bh > h or c + bw > w:
            raise InvalidConfigError(f"edited block {self.edited_block} does not fit grid {self.grid}")
        if self.dim < 2 or (self.model == "toy-dit" and self.dim % self.heads):
            raise InvalidConfigError(f"dim {self.dim} must be divisible by heads {self.heads}")
        if self.config.seed != self.seed:
            object.__setattr__(self, "config", replace(self.config, seed=self.seed))

    def with_seed(self, seed: int) -> "BenchScenario":
        return replace(self, seed=seed, config=replace(self.config, seed=seed))

    def truth_grid(self) -> np.ndarray:
        g = np.zeros(self.grid, dtype=bool)
        r, c, bh, bw = self.edited_block
        g[r : r + bh, c : c + bw] = True
        return g

    # -- serialization -----------------------------------------------------

    def to_sections(self) -> dict[str, dict[str, str]]:
        cfg = self.config
        return {
            "scenario": {
                "model": self.model,
                "seed": str(self.seed),
                "grid": f"{self.grid[0]}x{self.grid[1]}",
                "edited_block": ",".join(str(v) for v in self.edited_block),
                "out": self.out_dir,
            },
            "model": {
                "dim": str(self.dim),
                "heads": str(self.heads),
                "layers": str(self.layers),
                "prompt_tokens": str(self.prompt_tokens),
                "weights_seed": str(self.weights_seed),
                "curvature": repr(float(self.curvature)),
            },
            "schedule": {
                "steps": str(cfg.T),
                "kind": cfg.schedule_kind,
                "shift": repr(float(cfg.shift)),
            },
            "regione": {
                "t_st": str(cfg.t_st),
                "t_sm": str(cfg.t_sm),
                "forced_steps": ",".join(str(f) for f in cfg.forced_steps),
                "cfg_scale": "none" if cfg.cfg_scale is None else repr(float(cfg.cfg_scale)),
            },
            "partition": {
                "eta": repr(float(cfg.eta)),
                "se_radius": str(cfg.se_radius),
                "se_iterations": str(cfg.se_iterations),
            },
            "cache": {
                "delta": repr(float(cfg.delta)),
                "gamma": self.gamma_source,
            },
        }

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.read_dict(self.to_sections())
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def to_dict(self) -> dict:
        """Resolved config for reports, typed, including the gamma entries actually used."""
        cfg = self.config
        return {
            "scenario": {
                "model": self.model,
                "seed": self.seed,
                "grid": list(self.grid),
                "edited_block": list(self.edited_block),
                "out": self.out_dir,
            },
            "model": {
                "dim": self.dim,
                "heads": self.heads,
                "layers": self.layers,
                "prompt_tokens": self.prompt_tokens,
                "weights_seed": self.weights_seed,
                "curvature": float(self.curvature),
            },
            "schedule": {"steps": cfg.T, "kind": cfg.schedule_kind, "shift": float(cfg.shift)},
            "regione": {
                "t_st": cfg.t_st,
                "t_sm": cfg.t_sm,
                "forced_steps": list(cfg.forced_steps),
                "cfg_scale": cfg.cfg_scale,
            },
            "partition": {"eta": float(cfg.eta), "se_radius": cfg.se_radius, "se_iterations": cfg.se_iterations},
            "cache": {
                "delta": float(cfg.delta),
                "gamma": self.gamma_source,
                "gamma_kind": cfg.gamma.source,
                "gamma_table": {str(k): float(v) for k, v in cfg.gamma.gamma.items()},
            },
        }

    @classmethod
    def from_ini(cls, text: str, base_dir=None) -> "BenchScenario":
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise InvalidConfigError(f"unreadable config: {exc}") from exc
        return cls.from_sections({s: dict(cp[s]) for s in cp.sections()}, base_dir)

    @classmethod
    def from_sections(cls, sections: dict, base_dir=None) -> "BenchScenario":
        known = cls().to_sections()
        for sec, items in sections.items():
            if sec not in known:
                raise InvalidConfigError(f"unknown section [{sec}]")
            extra = set(items) - set(known[sec])
            if extra:
                raise InvalidConfigError(f"unknown keys in [{sec}]: {sorted(extra)}")
        merged = {s: {**known[s], **sections.get(s, {})} for s in known}

        def get(sec, key, conv):
            raw = merged[sec][key].strip()
            try:
                return conv(raw)
            except ValueError as exc:
                raise InvalidConfigError(f"[{sec}] {key} = {raw!r}: {exc}") from exc

        def ints(raw):
            return tuple(int(p) for p in raw.replace(" ", "").split(",") if p)

        def grid(raw):
            h, w = raw.lower().split("x")
            return int(h), int(w)

        def opt_float(raw):
            return None if raw.lower() in ("none", "") else float(raw)

        gamma_source = get("cache", "gamma", str)
        if gamma_source == "unit":
            gamma = GammaTable.unit()
        else:
            path = Path(gamma_source)
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            try:
                gamma = GammaTable.from_text(path.read_text())
            except (OSError, ValueError) as exc:
                raise InvalidConfigError(f"cannot read gamma table {path}: {exc}") from exc

        block = get("scenario", "edited_block", ints)
        if len(block) != 4:
            raise InvalidConfigError("edited_block needs four integers: row,col,height,width")
        cfg = RegionEConfig(
            T=get("schedule", "steps", int),
            t_st=get("regione", "t_st", int),
            t_sm=get("regione", "t_sm", int),
            forced_steps=get("regione", "forced_steps", ints),
            eta=get("partition", "eta", float),
            delta=get("cache", "delta", float),
            gamma=gamma,
            cfg_scale=get("regione", "cfg_scale", opt_float),
            se_radius=get("partition", "se_radius", int),
            se_iterations=get("partition", "se_iterations", int),
            schedule_kind=get("schedule", "kind", str),
            shift=get("schedule", "shift", float),
            seed=get("scenario", "seed", int),
        )
        return cls(
            model=get("scenario", "model", str),
            seed=cfg.seed,
            grid=get("scenario", "grid", grid),
            edited_block=block,
            out_dir=get("scenario", "out", str),
            dim=get("model", "dim", int),
            heads=get("model", "heads", int),
            layers=get("model", "layers", int),
            prompt_tokens=get("model", "prompt_tokens", int),
            weights_seed=get("model", "weights_seed", int),
            curvature=get("model", "curvature", float),
            gamma_source=gamma_source,
            config=cfg,
        )

    @classmethod
    def load(cls, path) -> "BenchScenario":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise InvalidConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_ini(text, base_dir=path.parent)

    # -- construction ------------------------------------------------------

    def build(self):
        """Return ``(model, seq)`` for this scenario's seed."""
        if self.model == "toy-dit":
            return self._build_toy()
        return self._build_analytic()

    def _build_toy(self):
        rng = np.random.default_rng(self.seed)
        d, n = self.dim, self.grid[0] * self.grid[1]
        scale = np.sqrt(d)
        u = rng.standard_normal(d)
        u /= np.linalg.norm(u)
        prompt = scale * u + 0.3 * rng.standard_normal((self.prompt_tokens, d))
        p_hat = prompt.mean(axis=0) if self.prompt_tokens else u
        p_hat = p_hat / np.linalg.norm(p_hat)

        r = rng.standard_normal((n, d))
        r -= np.outer(r @ p_hat, p_hat)
        instr = r.copy()
        edited = self.truth_grid().reshape(-1)
        r_hat = r[edited] / np.linalg.norm(r[edited], axis=1, keepdims=True)
        instr[edited] = scale * (0.9 * p_hat + np.sqrt(1 - 0.81) * r_hat)

        noise = rng.standard_normal((n, d))
        seq = SegmentedSequence(prompt, noise, instr, self.grid)
        weights = ToyDiTWeights.generate(self.weights_seed, d, self.heads, self.layers)
        return ToyDiT(weights), seq

    def _build_analytic(self):
        return AnalyticModel(self.analytic_field()), self._analytic_seq()

    def _analytic_parts(self):
        rng = np.random.default_rng(self.seed)
        d, n = self.dim, self.grid[0] * self.grid[1]
        x1 = rng.standard_normal((n, d))
        instr = rng.standard_normal((n, d))
        wobble = rng.uniform(-1.0, 1.0, (n, d))
        other = rng.standard_normal((n, d))
        return x1, instr, wobble, other

    def analytic_field(self) -> AnalyticField:
        """Unedited tokens run straight from noise to their instruction token;
        edited tokens end orthogonal to it along a bent path."""
        x1, instr, wobble, other = self._analytic_parts()
        edited = self.truth_grid().reshape(-1)
        x0 = instr.copy()
        o = other[edited]
        o -= (np.sum(o * instr[edited], axis=1) / np.sum(instr[edited] ** 2, axis=1))[:, None] * instr[edited]
        x0[edited] = o
        control = 0.5 * (x0 + x1)
        control[edited] -= self.curvature * wobble[edited]
        return AnalyticField(x0, x1, control, self.truth_grid())

    def _analytic_seq(self) -> SegmentedSequence:
        x1, instr, _, _ = self._analytic_parts()
        return SegmentedSequence(np.zeros((0, self.dim)), x1, instr, self.grid)
