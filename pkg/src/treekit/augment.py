"""Seeded geometric augmentations: Gaussian jitter, rotation about Z, anisotropic scaling, and XY reflection."""

from __future__ import annotations

__all__ = ["AugmentConfig", "jitter", "rotate_z", "scale_aniso", "reflect", "augment", "stage_seeds"]

from dataclasses import asdict, dataclass
import math
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from ._seeding import check_seed, derive_seed, rng
from .cloud import LabeledPointCloud

# Order in which augment() applies the stages; the index is also the seed-derivation key.
STAGES = ("reflect", "scale", "rotate", "jitter")


@dataclass(frozen=True)
class AugmentConfig:
    """
    Parameters of the augmentation chain.

    Args:
        noise_sigma: Standard deviation of the per-coordinate Gaussian jitter (m).
        rotation_max_degrees: Rotation angles about Z are drawn from ``[-max, +max]`` degrees.
        scale_range: Per-axis scale factors are drawn uniformly from ``[low, high]``.
        symmetry_axes: Probability of reflecting X and of reflecting Y. Z is never reflected.
        seed: Unsigned 64-bit seed from which per-stage seeds are derived.
    """

    noise_sigma: float = 0.01
    rotation_max_degrees: float = 180.0
    scale_range: Tuple[float, float] = (0.9, 1.1)
    symmetry_axes: Tuple[float, float] = (0.5, 0.5)
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "scale_range", tuple(float(v) for v in self.scale_range))
        object.__setattr__(self, "symmetry_axes", tuple(float(v) for v in self.symmetry_axes))
        object.__setattr__(self, "seed", check_seed(self.seed))
        _check_sigma(self.noise_sigma)
        _check_degrees(self.rotation_max_degrees)
        _check_scale_range(self.scale_range)
        _check_probabilities(self.symmetry_axes)

    @classmethod
    def identity(cls, seed: int = 0) -> "AugmentConfig":
        return cls(0.0, 0.0, (1.0, 1.0), (0.0, 0.0), seed)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], seed: Optional[int] = None) -> "AugmentConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        unknown = set(data) - set(known)
        if unknown:
            raise ValueError(f"unknown augmentation fields: {sorted(unknown)}")
        if seed is not None:
            known["seed"] = seed
        return cls(**known)

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["scale_range"] = list(self.scale_range)
        out["symmetry_axes"] = list(self.symmetry_axes)
        return out


def _check_sigma(sigma: float) -> None:
    if not sigma >= 0:
        raise ValueError(f"noise sigma must be non-negative, got {sigma}")


def _check_degrees(max_degrees: float) -> None:
    if not 0 <= max_degrees <= 180:
        raise ValueError(f"rotation_max_degrees must lie in [0, 180], got {max_degrees}")


def _check_scale_range(scale_range: Sequence[float]) -> None:
    if len(scale_range) != 2 or not 0 < scale_range[0] <= scale_range[1]:
        raise ValueError(f"scale range must satisfy 0 < low <= high, got {tuple(scale_range)}")


def _check_probabilities(probabilities: Sequence[float]) -> None:
    if len(probabilities) != 2:
        raise ValueError("symmetry_axes takes two probabilities (X, Y); Z is never reflected")
    if not all(0 <= p <= 1 for p in probabilities):
        raise ValueError(f"reflection probabilities must lie in [0, 1], got {tuple(probabilities)}")


def jitter(cloud: LabeledPointCloud, sigma: float, seed: int) -> LabeledPointCloud:
    """Adds independent N(0, sigma²) noise to every coordinate."""
    _check_sigma(sigma)
    if sigma == 0:
        return cloud
    noise = rng(seed).normal(0.0, sigma, size=cloud.xyz.shape)
    return cloud.with_xyz(cloud.xyz + noise)


def rotate_z(
    cloud: LabeledPointCloud,
    max_degrees: float,
    seed: int,
    angle_degrees: Optional[float] = None,
    center: Optional[Sequence[float]] = None,
) -> LabeledPointCloud:
    """
    Rotates the cloud about a vertical axis by an angle drawn uniformly from ``[-max_degrees, max_degrees]``.

    Args:
        cloud: Input cloud.
        max_degrees: Maximum absolute rotation angle in degrees, at most 180.
        seed: Seed of the angle draw.
        angle_degrees: Use this angle instead of drawing one.
        center: XY rotation center. Defaults to the XY centroid of the cloud.
    """

    _check_degrees(max_degrees)
    if angle_degrees is None:
        angle_degrees = rng(seed).uniform(-max_degrees, max_degrees) if max_degrees > 0 else 0.0
    if angle_degrees == 0 or len(cloud) == 0:
        return cloud
    theta = math.radians(angle_degrees)
    cos, sin = math.cos(theta), math.sin(theta)
    cx, cy = (cloud.xyz[:, :2].mean(axis=0) if center is None else np.asarray(center, dtype=np.float64)[:2])
    dx = cloud.xyz[:, 0] - cx
    dy = cloud.xyz[:, 1] - cy
    xyz = np.column_stack([cx + cos * dx - sin * dy, cy + sin * dx + cos * dy, cloud.xyz[:, 2]])
    return cloud.with_xyz(xyz)


def scale_aniso(
    cloud: LabeledPointCloud,
    scale_range: Sequence[float],
    seed: int,
    factors: Optional[Sequence[float]] = None,
) -> LabeledPointCloud:
    """Scales each axis about the cloud centroid by a factor drawn independently from ``scale_range``."""
    _check_scale_range(scale_range)
    if factors is None:
        low, high = scale_range
        factors = rng(seed).uniform(low, high, size=3) if low < high else np.full(3, low)
    factors = np.asarray(factors, dtype=np.float64)
    if np.all(factors == 1.0) or len(cloud) == 0:
        return cloud
    center = cloud.xyz.mean(axis=0)
    return cloud.with_xyz((cloud.xyz - center) * factors + center)


def reflect(
    cloud: LabeledPointCloud,
    symmetry_axes: Sequence[float],
    seed: int,
    flips: Optional[Sequence[bool]] = None,
) -> LabeledPointCloud:
    """Mirrors X and/or Y through the cloud centroid, each with its configured probability."""
    _check_probabilities(symmetry_axes)
    if flips is None:
        flips = rng(seed).random(2) < np.asarray(symmetry_axes)
    flips = np.asarray(flips, dtype=bool)
    if not flips.any() or len(cloud) == 0:
        return cloud
    center = cloud.xyz.mean(axis=0)
    xyz = cloud.xyz.copy()
    for axis in np.flatnonzero(flips):
        xyz[:, axis] = 2.0 * center[axis] - xyz[:, axis]
    return cloud.with_xyz(xyz)


def stage_seeds(seed: int) -> Dict[str, int]:
    """Per-stage seeds used by :func:`augment`."""
    return {name: derive_seed(seed, index) for index, name in enumerate(STAGES)}


def augment(cloud: LabeledPointCloud, config: AugmentConfig) -> LabeledPointCloud:
    """Applies reflect, scale_aniso, rotate_z, and jitter in that order, with seeds from :func:`stage_seeds`."""
    seeds = stage_seeds(config.seed)
    out = reflect(cloud, config.symmetry_axes, seeds["reflect"])
    out = scale_aniso(out, config.scale_range, seeds["scale"])
    out = rotate_z(out, config.rotation_max_degrees, seeds["rotate"])
    return jitter(out, config.noise_sigma, seeds["jitter"])
