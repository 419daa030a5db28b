"""Density-targeted random subsampling of labeled point clouds."""

from __future__ import annotations

__all__ = ["SparsifyConfig", "target_count", "sparsify_indices", "sparsify", "sparsify_series", "series_seed"]

from dataclasses import dataclass
import math
from typing import List, Optional, Tuple

import numpy as np

from ._seeding import check_seed, rng
from .cloud import DegenerateHullError, LabeledPointCloud, hull_area_xy


@dataclass(frozen=True)
class SparsifyConfig:
    target_densities: Tuple[float, ...]
    seed: int = 0

    def __post_init__(self) -> None:
        densities = tuple(float(d) for d in self.target_densities)
        if not densities:
            raise ValueError("at least one target density is required")
        if any(not d > 0 or not math.isfinite(d) for d in densities):
            raise ValueError(f"target densities must be finite and positive, got {densities}")
        object.__setattr__(self, "target_densities", densities)
        object.__setattr__(self, "seed", check_seed(self.seed))


def target_count(target_density: float, area: float, n_points: int) -> int:
    """round-half-up(density * area), clamped to [1, n_points]."""
    count = math.floor(target_density * area + 0.5)
    return int(min(max(count, 1), n_points))


def sparsify_indices(
    cloud: LabeledPointCloud, target_density: float, seed: int, hull_area: Optional[float] = None
) -> np.ndarray:
    """
    Indices of the points kept by :func:`sparsify`, in ascending order.

    Args:
        cloud: Source cloud.
        target_density: Target density in points per m² of the source footprint.
        seed: Unsigned 64-bit seed.
        hull_area: Precomputed XY hull area of ``cloud``. Computed when omitted.

    Raises:
        ValueError: If ``target_density`` is not positive.
        DegenerateHullError: If the footprint of ``cloud`` has zero area.
    """

    if not target_density > 0:
        raise ValueError(f"target density must be positive, got {target_density}")
    area = hull_area_xy(cloud) if hull_area is None else hull_area
    if area <= 0:
        raise DegenerateHullError("cannot sparsify a cloud with a degenerate footprint")
    n = len(cloud)
    k = target_count(target_density, area, n)
    if k >= n:
        return np.arange(n, dtype=np.int64)
    # Shuffle-prefix: the first k entries of a seeded permutation are a uniform k-subset.
    chosen = rng(seed).permutation(n)[:k]
    return np.sort(chosen).astype(np.int64)


def sparsify(
    cloud: LabeledPointCloud, target_density: float, seed: int, hull_area: Optional[float] = None
) -> LabeledPointCloud:
    """
    Randomly subsamples ``cloud`` down to ``target_density`` points per m².

    The sample is uniform without replacement and keeps the relative point order. If the target count is not below
    the current point count, the input cloud is returned unchanged.
    """

    indices = sparsify_indices(cloud, target_density, seed, hull_area)
    if len(indices) == len(cloud):
        return cloud
    return cloud.subset(indices)


def series_seed(seed: int, index: int) -> int:
    """Seed of the ``index``-th entry of a series: ``seed XOR index``."""
    return check_seed(seed) ^ int(index)


def sparsify_series(cloud: LabeledPointCloud, config: SparsifyConfig) -> List[Tuple[float, LabeledPointCloud]]:
    """One independently sampled cloud per configured density, in config order.

    The hull area is taken once from the source cloud and reused for every density.
    """
    area = hull_area_xy(cloud)
    if area <= 0:
        raise DegenerateHullError("cannot sparsify a cloud with a degenerate footprint")
    return [
        (density, sparsify(cloud, density, series_seed(config.seed, i), hull_area=area))
        for i, density in enumerate(config.target_densities)
    ]
