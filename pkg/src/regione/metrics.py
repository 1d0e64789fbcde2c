"""Deviation metrics between accelerated and vanilla outputs, and speedups."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float
    token_step_speedup: float
    wall_speedup: float
    lpips: None = None


def psnr(a, b, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch {a.shape} vs {b.shape}")
    if not data_range > 0:
        raise InvalidArgumentError("data_range must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range**2 / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2 * sigma**2))
    g /= g.sum()
    return g


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable 'valid' correlation over the two spatial axes
    k = len(g)
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ g


def ssim(
    a,
    b,
    window: int = 11,
    sigma: float = 1.5,
    k1: float = 0.01,
    k2: float = 0.03,
    data_range: float = 1.0,
) -> float:
    """Mean structural similarity with a Gaussian window.

    Only windows that fit entirely inside the image are used. Inputs are
    ``[H, W]`` or ``[H, W, C]``; channels are scored separately and averaged.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.ndim != 3:
        raise InvalidArgumentError("ssim expects [H, W] or [H, W, C] images")
    if min(a.shape[:2]) < window:
        raise InvalidArgumentError(f"image {a.shape[:2]} smaller than the {window}x{window} window")
    g = gaussian_window(window, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a**2
    var_b = _filter_valid(b * b, g) - mu_b**2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    per_channel = (num / den).reshape(-1, a.shape[2]).mean(axis=0)
    return float(per_channel.mean())


def latent_image(latent: np.ndarray, grid) -> np.ndarray:
    """View ``[n_tokens, d]`` noise tokens as an ``[H, W, d]`` image."""
    h, w = grid
    return np.asarray(latent).reshape(h, w, -1)


def speedup(report_fast, report_base) -> tuple[float, float]:
    """``(token_step_speedup, wall_speedup)`` of ``report_fast`` over ``report_base``."""
    if report_fast.token_steps_actual <= 0 or report_fast.wall_time <= 0:
        raise InvalidArgumentError("fast report has a zero denominator")
    if report_fast.final_latent.shape != report_base.final_latent.shape:
        raise InvalidArgumentError("reports come from different sequence shapes")
    return (
        report_base.token_steps_actual / report_fast.token_steps_actual,
        report_base.wall_time / report_fast.wall_time,
    )
