"""Velocity models with the Instruction-DiT calling convention.

Every model is called on a :class:`SegmentedSequence` (prompt, noise and
instruction tokens) and returns velocities for the active noise rows only.
Three cache directives are understood:

* ``"plain"``  full sequence, nothing recorded;
* ``"store"``  full sequence, per-layer K/V returned for snapshotting;
* ``"inject"`` only the noise rows listed in ``active`` (the edited
  tokens) are processed; unedited and instruction K/V come from a
  populated :class:`~regione.rikv.KVStore`.

:class:`ToyDiT` is a small seeded transformer. It predicts a clean latent
as "instruction token + gated transformer correction" and converts that to
a rectified-flow velocity ``(x_t - x0_hat) / t``. The gate opens for tokens
whose instruction content resembles the prompt, so the prompt decides
where edits happen; elsewhere the trajectory is exactly straight.

:class:`AnalyticModel` wraps a quadratic Bezier field with a closed-form
trajectory, used as an exact oracle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import CacheMissError, InvalidArgumentError
from .rikv import KVStore, attention, region_attention
from .tensorio import read_tensor, write_tensor


@dataclass(frozen=True, eq=False)
class SegmentedSequence:
    prompt: np.ndarray
    noise: np.ndarray
    instruction: np.ndarray
    grid: tuple[int, int]
    cells: np.ndarray | None = None

    def __post_init__(self):
        h, w = self.grid
        n = h * w
        cells = np.arange(n) if self.cells is None else np.asarray(self.cells, dtype=np.int64)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "grid", (int(h), int(w)))
        for name in ("prompt", "noise", "instruction"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float32))
        d = self.noise.shape[1]
        if self.prompt.shape[1:] != (d,) or self.instruction.shape[1:] != (d,):
            raise InvalidArgumentError("prompt, noise and instruction must share the channel dim")
        if self.noise.shape[0] != n:
            raise InvalidArgumentError(f"{self.noise.shape[0]} noise tokens for a {h}x{w} grid")

    @property
    def dim(self) -> int:
        return self.noise.shape[1]

    @property
    def n_prompt(self) -> int:
        return self.prompt.shape[0]

    @property
    def n_noise(self) -> int:
        return self.noise.shape[0]

    @property
    def n_instruction(self) -> int:
        return self.instruction.shape[0]

    @property
    def n_total(self) -> int:
        return self.n_prompt + self.n_noise + self.n_instruction

    def with_noise(self, noise: np.ndarray) -> "SegmentedSequence":
        return SegmentedSequence(self.prompt, noise, self.instruction, self.grid, self.cells)


@dataclass
class ModelOutput:
    velocity: np.ndarray
    kv_snapshot: list[tuple[np.ndarray, np.ndarray]] | None = None


def cfg_combine(v_cond: np.ndarray, v_uncond: np.ndarray, scale: float) -> np.ndarray:
    if v_cond.shape != v_uncond.shape:
        raise InvalidArgumentError(f"shape mismatch {v_cond.shape} vs {v_uncond.shape}")
    s = np.float32(scale)
    return v_uncond + s * (v_cond - v_uncond)


# ---------------------------------------------------------------------------
# Toy Instruction-DiT
# ---------------------------------------------------------------------------


def timestep_embedding(t: float, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half, dtype=np.float64) / half)
    args = 1000.0 * t * freqs
    emb = np.concatenate([np.sin(args), np.cos(args)])
    if dim % 2:
        emb = np.concatenate([emb, [0.0]])
    return emb.astype(np.float32)


def _layernorm(x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + np.float32(eps))


def _gelu(x: np.ndarray) -> np.ndarray:
    c = np.float32(math.sqrt(2.0 / math.pi))
    return np.float32(0.5) * x * (np.float32(1) + np.tanh(c * (x + np.float32(0.044715) * x * x * x)))


_TENSOR_FIELDS = ("wq", "wk", "wv", "wo", "w1", "w2", "temb", "out")


@dataclass(frozen=True, eq=False)
class ToyDiTWeights:
    """Parameters of the toy model, generated deterministically from ``seed``.

    Stacked per layer: ``wq/wk/wv/wo/temb`` are ``[L, d, d]``, the MLP is
    ``w1 [L, d, 4d]`` and ``w2 [L, 4d, d]``; ``out`` is ``[d, d]``.
    """

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    temb: np.ndarray
    out: np.ndarray
    n_heads: int = 4
    seed: int = 0
    out_gain: float = 2.0
    gate_lo: float = 0.3
    gate_hi: float = 0.6
    t_floor: float = 1e-3
    input_scale: float = 0.1

    @classmethod
    def generate(cls, seed: int = 0, dim: int = 64, n_heads: int = 4, n_layers: int = 4, **kw):
        if dim % n_heads:
            raise InvalidArgumentError(f"dim {dim} not divisible by {n_heads} heads")
        rng = np.random.default_rng(seed)

        def mat(*shape, fan_in):
            return (rng.standard_normal(shape) / math.sqrt(fan_in)).astype(np.float32)

        L, d = n_layers, dim
        return cls(
            wq=mat(L, d, d, fan_in=d),
            wk=mat(L, d, d, fan_in=d),
            wv=mat(L, d, d, fan_in=d),
            wo=mat(L, d, d, fan_in=d),
            w1=mat(L, d, 4 * d, fan_in=d),
            w2=mat(L, 4 * d, d, fan_in=4 * d),
            temb=mat(L, d, d, fan_in=d),
            out=mat(d, d, fan_in=d),
            n_heads=n_heads,
            seed=seed,
            **kw,
        )

    @property
    def dim(self) -> int:
        return self.out.shape[0]

    @property
    def n_layers(self) -> int:
        return self.wq.shape[0]

    def save(self, directory) -> None:
        """One tensor file per parameter plus ``manifest.json``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = {"tensors": {}, "scalars": {}}
        for f in fields(self):
            val = getattr(self, f.name)
            if f.name in _TENSOR_FIELDS:
                write_tensor(directory / f"{f.name}.tensor", val)
                manifest["tensors"][f.name] = list(val.shape)
            else:
                manifest["scalars"][f.name] = val
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))

    @classmethod
    def load(cls, directory) -> "ToyDiTWeights":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        kw = dict(manifest["scalars"])
        for name, shape in manifest["tensors"].items():
            arr = read_tensor(directory / f"{name}.tensor")
            if list(arr.shape) != shape:
                raise InvalidArgumentError(f"{name}: manifest says {shape}, file has {arr.shape}")
            kw[name] = arr
        return cls(**kw)

    def same_as(self, other: "ToyDiTWeights") -> bool:
        return all(
            np.array_equal(getattr(self, f.name), getattr(other, f.name))
            if f.name in _TENSOR_FIELDS
            else getattr(self, f.name) == getattr(other, f.name)
            for f in fields(self)
        )


def edit_gate(instr_rows: np.ndarray, prompt: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Per-token edit strength in [0, 1] from instruction/prompt alignment."""
    if prompt.shape[0] == 0:
        return np.zeros(instr_rows.shape[0], dtype=np.float32)
    p = prompt.astype(np.float64).mean(axis=0)
    pn = np.linalg.norm(p)
    if pn == 0:
        return np.zeros(instr_rows.shape[0], dtype=np.float32)
    rn = np.linalg.norm(instr_rows.astype(np.float64), axis=1)
    cos = np.zeros(instr_rows.shape[0])
    np.divide(instr_rows.astype(np.float64) @ p, rn * pn, out=cos, where=rn > 0)
    return np.clip((cos - lo) / (hi - lo), 0.0, 1.0).astype(np.float32)


def _noise_input(weights: ToyDiTWeights, noise: np.ndarray, instr_rows: np.ndarray) -> np.ndarray:
    # noise tokens see their aligned instruction token; this is the only
    # source of spatial identity in the toy model
    return np.float32(weights.input_scale) * noise + instr_rows


def toy_forward(
    weights: ToyDiTWeights,
    seq,
    t: float,
    mode: str = "plain",
    store: KVStore | None = None,
    active=None,
    uncond: bool = False,
) -> ModelOutput:
    if not 0.0 <= t <= 1.0:
        raise InvalidArgumentError(f"t must lie in [0, 1], got {t}")
    if mode not in ("plain", "store", "inject"):
        raise InvalidArgumentError(f"unknown cache directive {mode!r}")
    d = weights.dim
    if seq.dim != d:
        raise InvalidArgumentError(f"sequence dim {seq.dim} != model dim {d}")
    prompt = np.zeros_like(seq.prompt) if uncond else seq.prompt
    n_p = prompt.shape[0]

    if mode == "inject":
        if store is None or not store.populated:
            raise CacheMissError("inject requested without a populated KV store")
        active = np.asarray(active, dtype=np.int64)
        noise = seq.noise[active]
        instr_rows = seq.instruction[active]
        x = np.concatenate([prompt, _noise_input(weights, noise, instr_rows)], axis=0)
    else:
        noise = seq.noise
        instr_rows = seq.instruction
        x = np.concatenate(
            [prompt, _noise_input(weights, noise, instr_rows), seq.instruction], axis=0
        )

    temb = timestep_embedding(t, d)
    kv = [] if mode == "store" else None
    for layer in range(weights.n_layers):
        x = x + temb @ weights.temb[layer]
        h = _layernorm(x)
        q, k, v = h @ weights.wq[layer], h @ weights.wk[layer], h @ weights.wv[layer]
        if mode == "inject":
            a = region_attention(q, k, v, store, layer, weights.n_heads)
        else:
            a = attention(q, k, v, weights.n_heads)
            if kv is not None:
                kv.append((k, v))
        x = x + a @ weights.wo[layer]
        x = x + _gelu(_layernorm(x) @ weights.w1[layer]) @ weights.w2[layer]

    n_active = noise.shape[0]
    correction = _layernorm(x[n_p : n_p + n_active]) @ weights.out * np.float32(weights.out_gain)
    gate = edit_gate(instr_rows, prompt, weights.gate_lo, weights.gate_hi)
    x0_hat = instr_rows + gate[:, None] * correction
    velocity = (noise - x0_hat) / np.float32(max(t, weights.t_floor))
    return ModelOutput(velocity.astype(np.float32), kv)


class ToyDiT:
    def __init__(self, weights: ToyDiTWeights):
        self.weights = weights

    def forward(self, seq, t, mode="plain", store=None, active=None, uncond=False) -> ModelOutput:
        return toy_forward(self.weights, seq, t, mode, store, active, uncond)


# ---------------------------------------------------------------------------
# Analytic Bezier field
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AnalyticField:
    """Per-token quadratic Bezier path ``(1-t)^2 x0 + 2t(1-t) c + t^2 x1``.

    Unedited tokens keep ``c`` at the midpoint, which makes their path a
    straight line walked at constant speed.
    """

    x0: np.ndarray
    x1: np.ndarray
    control: np.ndarray
    edited_truth: np.ndarray

    def __post_init__(self):
        for name in ("x0", "x1", "control"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        truth = np.asarray(self.edited_truth, dtype=bool)
        object.__setattr__(self, "edited_truth", truth)
        if not (self.x0.shape == self.x1.shape == self.control.shape):
            raise InvalidArgumentError("x0, x1 and control must share a shape")
        if truth.size != self.x0.shape[0]:
            raise InvalidArgumentError("edited_truth must have one cell per token")
        flat = truth.reshape(-1)
        mid = 0.5 * (self.x0 + self.x1)
        if not np.allclose(self.control[~flat], mid[~flat], rtol=0, atol=1e-12):
            raise InvalidArgumentError("unedited tokens need a midpoint control")

    @classmethod
    def straight(cls, x0, x1, edited_truth=None) -> "AnalyticField":
        x0 = np.asarray(x0, dtype=np.float64)
        x1 = np.asarray(x1, dtype=np.float64)
        truth = np.zeros((x0.shape[0], 1), bool) if edited_truth is None else edited_truth
        return cls(x0, x1, 0.5 * (x0 + x1), truth)

    def position(self, t: float) -> np.ndarray:
        return (1 - t) ** 2 * self.x0 + 2 * t * (1 - t) * self.control + t**2 * self.x1


def analytic_velocity(field_: AnalyticField, t: float) -> np.ndarray:
    """Bezier tangent ``2(1-t)(c - x0) + 2t(x1 - c)`` as float32."""
    if not 0.0 <= t <= 1.0:
        raise InvalidArgumentError(f"t must lie in [0, 1], got {t}")
    v = 2 * (1 - t) * (field_.control - field_.x0) + 2 * t * (field_.x1 - field_.control)
    return v.astype(np.float32)


class AnalyticModel:
    """Analytic field behind the model interface. It has no attention layers,
    so ``store`` yields an empty per-layer list."""

    def __init__(self, field_: AnalyticField):
        self.field = field_

    def forward(self, seq, t, mode="plain", store=None, active=None, uncond=False) -> ModelOutput:
        if mode not in ("plain", "store", "inject"):
            raise InvalidArgumentError(f"unknown cache directive {mode!r}")
        v = analytic_velocity(self.field, t)
        if mode == "inject" and (store is None or not store.populated):
            raise CacheMissError("inject requested without a populated KV store")
        if v.shape != seq.noise.shape:
            raise InvalidArgumentError(f"field has shape {v.shape}, noise rows {seq.noise.shape}")
        if mode == "inject":
            v = v[np.asarray(active, dtype=np.int64)]
        return ModelOutput(v, [] if mode == "store" else None)
