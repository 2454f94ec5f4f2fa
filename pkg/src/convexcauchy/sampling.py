"""Random admissible fields: smooth bumps, ball rescaling, start generation.

Draws are deterministic under a seeded Generator. Smoothing matters: raw
white noise has huge high-order differences, so each draw is averaged a few
times along every axis before use, keeping H^k norms moderate.
"""

from __future__ import annotations

from itertools import product

import numpy as np

from .errors import ConfigError
from .functional import FunctionalParams, data_extension
from .grid import DomainMask, shift
from .operators import Field


def random_smooth_values(mask: DomainMask, rng: np.random.Generator,
                         passes: int = 8) -> np.ndarray:
    """Smoothed unit-amplitude noise, zero-trace and supported on the mask.

    The constrained layers and the outside are re-zeroed inside the smoothing
    loop, so the draw decays smoothly toward them instead of being cut there;
    this keeps high-order difference norms moderate.
    """
    grid = mask.grid
    vals = rng.standard_normal(grid.shape)
    for _ in range(passes):
        vals[~mask.in_mask] = 0.0
        vals[mask.constrained] = 0.0
        for axis in range(grid.dim):
            off = [0] * grid.dim
            off[axis] = 1
            plus = shift(vals, off, fill=0.0)
            off[axis] = -1
            minus = shift(vals, off, fill=0.0)
            vals = 0.5 * vals + 0.25 * (plus + minus)
    vals[~mask.in_mask] = 0.0
    vals[mask.constrained] = 0.0
    peak = np.max(np.abs(vals))
    if peak > 0:
        vals /= peak
    return vals


def draw_in_ball(params: FunctionalParams, radius: float, rng: np.random.Generator,
                 base: Field | None = None, fraction_range=(0.3, 0.9)) -> Field:
    """Base field plus a smooth zero-trace bump, rescaled inside the H^k ball.

    The target norm is a random fraction of the radius; the base field (a
    smooth extension of the Cauchy data unless given) must itself fit inside
    the ball.
    """
    if base is None:
        base = data_extension(params.space, params.data)
    base_norm = params.space.norm(base)
    if base_norm >= radius:
        raise ConfigError(
            f"ball radius {radius} is smaller than the data extension norm {base_norm:.4g}"
        )
    bump = random_smooth_values(params.mask, rng)
    bump_field = Field(params.mask.grid, bump)
    bump_norm = params.space.norm(bump_field)
    target = rng.uniform(*fraction_range) * radius
    # triangle inequality keeps the draw strictly inside the ball
    amount = min(max(target - base_norm, 0.05 * radius), 0.95 * (radius - base_norm))
    vals = base.values + (amount / max(bump_norm, 1e-30)) * bump
    return params.impose(Field(params.mask.grid, vals))


def random_compact_bump(mask: DomainMask, rng: np.random.Generator,
                        width_cells: float = 1.5) -> Field:
    """Gaussian bump centered at a random deep-core node, cut to compact support."""
    eroded = mask.is_core.copy()
    for off in product((-1, 0, 1), repeat=mask.grid.dim):
        if any(off):
            eroded &= shift(mask.is_core, off, fill=False)
    # keep one more cell of clearance so the Gaussian tail cut stays small
    deep = eroded.copy()
    for off in product((-1, 0, 1), repeat=mask.grid.dim):
        if any(off):
            deep &= shift(eroded, off, fill=False)
    candidates = np.argwhere(deep if np.any(deep) else eroded)
    if candidates.size == 0:
        raise ConfigError("mask has no compactly supported core region for bumps")
    center_idx = candidates[rng.integers(len(candidates))]
    coords = mask.grid.coords()
    center = np.array(
        [mask.grid.origin[j] + center_idx[j] * mask.grid.spacing[j] for j in range(mask.grid.dim)]
    )
    widths = width_cells * np.asarray(mask.grid.spacing)
    dist_sq = np.sum(((coords - center) / widths) ** 2, axis=-1)
    vals = np.exp(-dist_sq)
    vals[~eroded] = 0.0
    return Field(mask.grid, vals)
