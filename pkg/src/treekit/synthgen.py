"""Synthetic forest plots with exact labels, and oracle predictions derived from those labels."""

from __future__ import annotations

__all__ = [
    "ForestConfig",
    "OracleNoise",
    "PlacementError",
    "place_trees",
    "generate_forest",
    "embedding_code",
    "instance_centroids",
    "oracle_predictions",
]

from dataclasses import asdict, dataclass
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np

from ._seeding import check_seed, derive_seed, rng
from .cloud import NON_TREE, TREE, LabeledPointCloud
from .grouping import PointPredictions

MAX_PLACEMENT_ATTEMPTS = 10_000
EMBEDDING_RADIUS = 10.0
EMBEDDING_DIM = 5
_EMBEDDING_SALT = 0x7EE5

STEM_FRACTION = 0.2
STEM_RADIUS = 0.15
GROUND_Z_SIGMA = 0.02


class PlacementError(ValueError):
    """Trees could not be placed at the requested minimum spacing."""


@dataclass(frozen=True)
class ForestConfig:
    """
    Synthetic plot layout.

    Args:
        plot_size: Side length of the square plot (m).
        n_trees: Number of trees.
        min_spacing: Minimum XY distance between stem positions (m).
        height_range: Tree heights are uniform in this range (m).
        crown_radius_range: Horizontal crown radii are uniform in this range (m).
        points_per_tree: Points sampled per tree (stem plus crown).
        ground_points: Points sampled on the terrain.
        seed: Default seed, used when :func:`generate_forest` is not given one.
    """

    plot_size: float = 40.0
    n_trees: int = 25
    min_spacing: float = 6.0
    height_range: Tuple[float, float] = (8.0, 25.0)
    crown_radius_range: Tuple[float, float] = (1.0, 2.0)
    points_per_tree: int = 200
    ground_points: int = 2000
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "height_range", tuple(float(v) for v in self.height_range))
        object.__setattr__(self, "crown_radius_range", tuple(float(v) for v in self.crown_radius_range))
        object.__setattr__(self, "seed", check_seed(self.seed))
        if not self.plot_size > 0 or not self.min_spacing > 0:
            raise ValueError("plot_size and min_spacing must be positive")
        if not (self.n_trees > 0 and self.points_per_tree > 0 and self.ground_points > 0):
            raise ValueError("n_trees, points_per_tree, and ground_points must be positive")
        for name in ("height_range", "crown_radius_range"):
            low, high = getattr(self, name)
            if not 0 < low <= high:
                raise ValueError(f"{name} must satisfy 0 < min <= max, got {(low, high)}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ForestConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown forest fields: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["height_range"] = list(self.height_range)
        out["crown_radius_range"] = list(self.crown_radius_range)
        return out


@dataclass(frozen=True)
class OracleNoise:
    offset_sigma: float = 0.0
    embedding_sigma: float = 0.0
    semantic_flip_prob: float = 0.0

    def __post_init__(self) -> None:
        if not (self.offset_sigma >= 0 and self.embedding_sigma >= 0):
            raise ValueError("noise sigmas must be non-negative")
        if not 0 <= self.semantic_flip_prob <= 1:
            raise ValueError(f"semantic_flip_prob must lie in [0, 1], got {self.semantic_flip_prob}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "OracleNoise":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown oracle noise fields: {sorted(unknown)}")
        return cls(**data)


def place_trees(config: ForestConfig, generator: np.random.Generator) -> np.ndarray:
    """Stem positions by rejection sampling, at least ``min_spacing`` apart."""
    positions: list = []
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        candidate = generator.uniform(0.0, config.plot_size, size=2)
        if all(np.hypot(*(candidate - p)) >= config.min_spacing for p in positions):
            positions.append(candidate)
            if len(positions) == config.n_trees:
                return np.array(positions)
    raise PlacementError(
        f"placed only {len(positions)} of {config.n_trees} trees at spacing {config.min_spacing} m "
        f"in a {config.plot_size} m plot after {MAX_PLACEMENT_ATTEMPTS} attempts"
    )


def _sample_tree(
    position: np.ndarray, height: float, crown_radius: float, n_points: int, generator: np.random.Generator
) -> np.ndarray:
    # Crown: ellipsoid volume over the upper half of the tree; stem: thin vertical cylinder from the ground to the top.
    n_stem = max(1, int(round(STEM_FRACTION * n_points)))
    n_crown = n_points - n_stem
    crown_half_height = 0.25 * height
    crown_center_z = height - crown_half_height

    stem_z = generator.uniform(0.0, height, size=n_stem)
    stem_z[0] = 0.0  # stem base on the ground
    angle = generator.uniform(0.0, 2 * np.pi, size=n_stem)
    stem = np.column_stack(
        [position[0] + STEM_RADIUS * np.cos(angle), position[1] + STEM_RADIUS * np.sin(angle), stem_z]
    )

    direction = generator.normal(size=(n_crown, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radius = generator.uniform(size=(n_crown, 1)) ** (1.0 / 3.0)
    unit = direction * radius
    crown = np.column_stack(
        [
            position[0] + crown_radius * unit[:, 0],
            position[1] + crown_radius * unit[:, 1],
            crown_center_z + crown_half_height * unit[:, 2],
        ]
    )
    return np.vstack([stem, crown])


def generate_forest(config: ForestConfig, seed: Optional[int] = None) -> LabeledPointCloud:
    """
    Samples a plot of stem-and-ellipsoid trees over flat ground.

    Tree ``i`` (1-based, in placement order) gets instance id ``i``. Ground points are non-tree with instance 0.

    Raises:
        PlacementError: If the trees do not fit at the requested spacing.
    """

    generator = rng(config.seed if seed is None else seed)
    positions = place_trees(config, generator)
    heights = generator.uniform(*config.height_range, size=config.n_trees)
    radii = generator.uniform(*config.crown_radius_range, size=config.n_trees)

    parts = [
        _sample_tree(positions[i], heights[i], radii[i], config.points_per_tree, generator)
        for i in range(config.n_trees)
    ]
    ground = np.column_stack(
        [
            generator.uniform(0.0, config.plot_size, size=(config.ground_points, 2)),
            generator.normal(0.0, GROUND_Z_SIGMA, size=config.ground_points),
        ]
    )
    xyz = np.vstack(parts + [ground])
    semantic = np.concatenate([np.full(config.n_trees * config.points_per_tree, TREE), np.full(len(ground), NON_TREE)])
    instance = np.concatenate([np.repeat(np.arange(1, config.n_trees + 1), config.points_per_tree), np.zeros(len(ground))])
    return LabeledPointCloud(xyz, semantic, instance, source_tag="synthetic")


def embedding_code(instance_id: int) -> np.ndarray:
    """Fixed pseudo-random point on the radius-10 sphere in 5-D, determined by the instance id alone."""
    generator = np.random.default_rng([_EMBEDDING_SALT, int(instance_id)])
    v = generator.normal(size=EMBEDDING_DIM)
    return EMBEDDING_RADIUS * v / np.linalg.norm(v)


def instance_centroids(cloud: LabeledPointCloud) -> Dict[int, np.ndarray]:
    ids = cloud.instance
    unique, inverse = np.unique(ids[ids > 0], return_inverse=True)
    sums = np.zeros((len(unique), 3))
    np.add.at(sums, inverse, cloud.xyz[ids > 0])
    counts = np.bincount(inverse, minlength=len(unique))
    return {int(i): sums[k] / counts[k] for k, i in enumerate(unique)}


def oracle_predictions(cloud: LabeledPointCloud, noise: OracleNoise = OracleNoise(), seed: int = 0) -> PointPredictions:
    """
    Predictions that a perfect network would emit, optionally degraded.

    Tree points get probability 1, an offset onto their instance centroid, and the instance's embedding code. Non-tree
    points get probability 0 and zero offset and embedding. Noise: each probability is flipped with
    ``semantic_flip_prob``; tree offsets and embeddings receive Gaussian noise of the configured sigmas.
    """

    n = len(cloud)
    tree = cloud.instance > 0
    centroids = instance_centroids(cloud)

    prob = tree.astype(np.float64)
    offset = np.zeros((n, 3))
    embedding = np.zeros((n, EMBEDDING_DIM))
    for instance_id, centroid in centroids.items():
        members = cloud.instance == instance_id
        offset[members] = centroid - cloud.xyz[members]
        embedding[members] = embedding_code(instance_id)

    # Independent streams per noise kind, so enabling one does not change the others.
    flip_rng, offset_rng, embed_rng = (rng(derive_seed(seed, k)) for k in range(3))
    flips = flip_rng.random(n) < noise.semantic_flip_prob
    prob[flips] = 1.0 - prob[flips]
    if noise.offset_sigma > 0:
        offset[tree] += offset_rng.normal(0.0, noise.offset_sigma, size=(int(tree.sum()), 3))
    if noise.embedding_sigma > 0:
        embedding[tree] += embed_rng.normal(0.0, noise.embedding_sigma, size=(int(tree.sum()), EMBEDDING_DIM))
    return PointPredictions(prob, offset, embedding)
