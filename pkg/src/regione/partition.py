"""Adaptive region partition: edited vs unedited noise tokens.

The clean latent is extrapolated in one step from the last stabilization
velocity and compared token by token with the instruction latent. Tokens
that barely changed (cosine above ``eta``) are unedited; the boolean grid
is then regularized with a binary opening followed by a closing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .schedule import LatentState, one_step_estimate


@dataclass(frozen=True, eq=False)
class RegionMask:
    """Edited/unedited split of the noise tokens.

    ``grid`` is indexed by spatial cell (True = edited). ``cells[k]`` is the
    flat grid cell of noise token ``k``; index lists are sorted token ids.
    """

    grid: np.ndarray
    edited_index: np.ndarray
    unedited_index: np.ndarray
    eta: float
    cells: np.ndarray

    @classmethod
    def from_grid(cls, grid, eta: float = float("nan"), cells=None) -> "RegionMask":
        grid = np.asarray(grid, dtype=bool)
        if grid.ndim != 2:
            raise InvalidArgumentError("mask grid must be 2-D")
        n = grid.size
        cells = np.arange(n) if cells is None else np.asarray(cells, dtype=np.int64)
        if cells.shape != (n,) or not np.array_equal(np.sort(cells), np.arange(n)):
            raise InvalidArgumentError("cells must be a permutation of the grid cells")
        edited_tok = grid.reshape(-1)[cells]
        return cls(
            grid=grid.copy(),
            edited_index=np.flatnonzero(edited_tok),
            unedited_index=np.flatnonzero(~edited_tok),
            eta=float(eta),
            cells=cells,
        )

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    @property
    def n_tokens(self) -> int:
        return self.grid.size

    @property
    def edited_fraction(self) -> float:
        return float(self.grid.mean())

    def __eq__(self, other):
        if not isinstance(other, RegionMask):
            return NotImplemented
        return np.array_equal(self.grid, other.grid) and np.array_equal(self.cells, other.cells)

    def to_pgm(self) -> bytes:
        """Binary PGM (P5): edited cells 255, unedited 0."""
        h, w = self.grid.shape
        return b"P5\n%d %d\n255\n" % (w, h) + (self.grid.astype(np.uint8) * 255).tobytes()


def read_pgm_mask(data: bytes) -> np.ndarray:
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5" or int(parts[3]) != 255:
        raise InvalidArgumentError("not an 8-bit P5 PGM")
    w, h = int(parts[1]), int(parts[2])
    pix = np.frombuffer(parts[4], dtype=np.uint8, count=w * h)
    return pix.reshape(h, w) > 127


def token_cosine(x_hat0: np.ndarray, instr: np.ndarray) -> np.ndarray:
    """Per-token cosine similarity over channels; zero rows score 0."""
    a = np.asarray(x_hat0, dtype=np.float64)
    b = np.asarray(instr, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch {a.shape} vs {b.shape}")
    denom = np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1)
    dot = np.sum(a * b, axis=-1)
    out = np.zeros_like(dot)
    np.divide(dot, denom, out=out, where=denom > 0)
    return out


def threshold_partition(sim, eta: float, grid_shape, cells=None) -> RegionMask:
    """Unedited iff ``sim > eta`` (strict)."""
    if not np.isfinite(eta):
        raise InvalidArgumentError(f"eta must be finite, got {eta}")
    sim = np.asarray(sim, dtype=np.float64)
    h, w = grid_shape
    if sim.shape != (h * w,):
        raise InvalidArgumentError(f"{sim.shape[0]} similarities for a {h}x{w} grid")
    cells = np.arange(h * w) if cells is None else np.asarray(cells)
    flat = np.empty(h * w, dtype=bool)
    flat[cells] = ~(sim > eta)
    return RegionMask.from_grid(flat.reshape(h, w), eta=eta, cells=cells)


def _shifted_windows(padded: np.ndarray, r: int, shape):
    h, w = shape
    for dy in range(2 * r + 1):
        for dx in range(2 * r + 1):
            yield padded[..., dy : dy + h, dx : dx + w]


def binary_erode(grid: np.ndarray, r: int = 1) -> np.ndarray:
    """Square-element erosion over the last two axes.

    Cells outside the grid never erode anything (padding with True), which
    makes this the exact adjoint of :func:`binary_dilate`.
    """
    if r == 0:
        return grid.copy()
    pad = [(0, 0)] * (grid.ndim - 2) + [(r, r), (r, r)]
    padded = np.pad(grid, pad, constant_values=True)
    out = np.ones_like(grid, dtype=bool)
    for win in _shifted_windows(padded, r, grid.shape[-2:]):
        out &= win
    return out


def binary_dilate(grid: np.ndarray, r: int = 1) -> np.ndarray:
    """Square-element dilation over the last two axes; outside counts as unedited."""
    if r == 0:
        return grid.copy()
    pad = [(0, 0)] * (grid.ndim - 2) + [(r, r), (r, r)]
    padded = np.pad(grid, pad, constant_values=False)
    out = np.zeros_like(grid, dtype=bool)
    for win in _shifted_windows(padded, r, grid.shape[-2:]):
        out |= win
    return out


def binary_open(grid: np.ndarray, r: int = 1, iterations: int = 1) -> np.ndarray:
    out = np.asarray(grid, dtype=bool)
    for _ in range(iterations):
        out = binary_erode(out, r)
    for _ in range(iterations):
        out = binary_dilate(out, r)
    return out


def binary_close(grid: np.ndarray, r: int = 1, iterations: int = 1) -> np.ndarray:
    out = np.asarray(grid, dtype=bool)
    for _ in range(iterations):
        out = binary_dilate(out, r)
    for _ in range(iterations):
        out = binary_erode(out, r)
    return out


def open_close(grid: np.ndarray, r: int = 1, iterations: int = 1) -> np.ndarray:
    """Opening then closing; accepts a batch of grids on leading axes."""
    return binary_close(binary_open(grid, r, iterations), r, iterations)


def morphological_clean(mask: RegionMask, se_radius: int = 1, iterations: int = 1) -> RegionMask:
    if se_radius < 0 or iterations < 0:
        raise InvalidArgumentError("se_radius and iterations must be non-negative")
    grid = open_close(mask.grid, se_radius, iterations)
    return RegionMask.from_grid(grid, eta=mask.eta, cells=mask.cells)


def adaptive_region_partition(
    state: LatentState, v_last: np.ndarray, instr: np.ndarray, cfg, grid_shape, cells=None
) -> RegionMask:
    """Partition noise tokens after the stabilization stage.

    Args:
        state: latent at the first region-aware step index.
        v_last: velocity of the final stabilization step.
        instr: instruction tokens aligned with the noise tokens.
        cfg: anything with ``eta``, ``se_radius``, ``se_iterations`` and a
            ``schedule()`` method (normally a ``RegionEConfig``).
        grid_shape: ``(H, W)`` of the noise-token grid.
        cells: token-to-cell map; identity when omitted.
    """
    schedule = cfg.schedule()
    x_hat0 = one_step_estimate(state, v_last, 0, schedule)
    sim = token_cosine(x_hat0, instr)
    raw = threshold_partition(sim, cfg.eta, grid_shape, cells)
    return morphological_clean(raw, cfg.se_radius, cfg.se_iterations)

