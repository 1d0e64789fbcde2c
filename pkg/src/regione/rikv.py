"""Region-Instruction KV cache and region-restricted attention.

A full forward over ``[prompt, noise, instruction]`` can hand back its
per-layer keys and values. :func:`snapshot` keeps the rows for unedited
noise tokens and instruction tokens; during region steps only prompt and
edited tokens are recomputed, and :func:`region_attention` attends over
``[K_P, K_E, K^C_U, K^C_I]`` in that order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CacheMissError, InvalidArgumentError


def attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, n_heads: int = 1) -> np.ndarray:
    """Multi-head scaled dot-product attention on ``[tokens, d]`` matrices.

    Scaling uses the per-head dimension ``d / n_heads``.
    """
    m, d = q.shape
    n = k.shape[0]
    if d % n_heads:
        raise InvalidArgumentError(f"model dim {d} not divisible by {n_heads} heads")
    hd = d // n_heads
    qh = (q * np.float32(1.0 / np.sqrt(hd))).reshape(m, n_heads, hd).transpose(1, 0, 2)
    kh = k.reshape(n, n_heads, hd).transpose(1, 2, 0)
    vh = v.reshape(n, n_heads, hd).transpose(1, 0, 2)
    w = qh @ kh
    w -= w.max(axis=-1, keepdims=True)
    np.exp(w, out=w)
    w /= w.sum(axis=-1, keepdims=True)
    return (w @ vh).transpose(1, 0, 2).reshape(m, d)


@dataclass(frozen=True)
class LayerKV:
    k_u: np.ndarray
    v_u: np.ndarray
    k_i: np.ndarray
    v_i: np.ndarray


@dataclass(frozen=True)
class KVStore:
    """Whole-model snapshot; replaced atomically, never patched per layer."""

    layers: tuple[LayerKV, ...] = field(default_factory=tuple)
    snapshot_step: int = -1
    populated: bool = False

    @classmethod
    def empty(cls) -> "KVStore":
        return cls()

    def layer(self, index: int) -> LayerKV:
        if not self.populated:
            raise CacheMissError("KV store is not populated")
        if not 0 <= index < len(self.layers):
            raise InvalidArgumentError(f"layer {index} out of range for {len(self.layers)} layers")
        return self.layers[index]


def snapshot(full_kv, mask, step: int, n_prompt: int) -> KVStore:
    """Slice unedited-noise and instruction rows out of a full forward's KV.

    Args:
        full_kv: sequence of ``(K, V)`` pairs, one per attention layer, each
            ``[n_P + n_N + n_I, d]`` in ``[prompt, noise, instruction]`` order.
        mask: :class:`~regione.partition.RegionMask` over the noise tokens.
        step: step index of the full forward that produced ``full_kv``.
        n_prompt: number of prompt rows at the head of the sequence.
    """
    n_noise = mask.grid.size
    layers = []
    for k, v in full_kv:
        if k.shape != v.shape or k.shape[0] < n_prompt + n_noise:
            raise InvalidArgumentError(
                f"KV of shape {k.shape} does not fit {n_prompt} prompt + {n_noise} noise rows"
            )
        noise_k = k[n_prompt : n_prompt + n_noise]
        noise_v = v[n_prompt : n_prompt + n_noise]
        u = mask.unedited_index
        layers.append(
            LayerKV(
                k_u=noise_k[u].copy(),
                v_u=noise_v[u].copy(),
                k_i=k[n_prompt + n_noise :].copy(),
                v_i=v[n_prompt + n_noise :].copy(),
            )
        )
    return KVStore(tuple(layers), snapshot_step=int(step), populated=True)


def region_attention(
    q_pe: np.ndarray,
    k_pe: np.ndarray,
    v_pe: np.ndarray,
    store: KVStore,
    layer: int,
    n_heads: int = 1,
) -> np.ndarray:
    """Attention of fresh prompt+edited queries over fresh and cached keys."""
    cached = store.layer(layer)
    k = np.concatenate([k_pe, cached.k_u, cached.k_i], axis=0)
    v = np.concatenate([v_pe, cached.v_u, cached.v_i], axis=0)
    return attention(q_pe, k, v, n_heads)
