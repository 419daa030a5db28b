"""Labeled point-cloud data model, validation, and XY footprint geometry."""

from __future__ import annotations

__all__ = [
    "NON_TREE",
    "TREE",
    "LabeledPointCloud",
    "Violation",
    "DensityStats",
    "DegenerateHullError",
    "validate",
    "convex_hull_xy",
    "hull_area_xy",
    "footprint_area",
    "point_density",
]

from dataclasses import dataclass, field
from typing import List, Literal, Optional

import numpy as np
import numpy.typing as npt

NON_TREE = 0
TREE = 1

AreaMode = Literal["hull", "bbox"]


class DegenerateHullError(ValueError):
    """Raised when the XY footprint of a cloud has zero area."""


def _frozen(array: npt.ArrayLike, dtype) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class LabeledPointCloud:
    """
    Ordered, immutable set of labeled points.

    Point order is the identity of a point: every index set used by grouping and evaluation refers to positions in
    this order.

    Args:
        xyz: Point coordinates in meters.
        semantic: Binary semantic label per point (0 = non-tree, 1 = tree).
        instance: Tree instance id per point (0 = unassigned).
        source_tag: Free-text provenance, e.g. platform or dataset name.
        crs_note: Free-text note on the coordinate reference system.

    Shape:
        - :code:`xyz`: :math:`(N, 3)`
        - :code:`semantic`: :math:`(N)`
        - :code:`instance`: :math:`(N)`
    """

    xyz: np.ndarray
    semantic: np.ndarray
    instance: np.ndarray
    source_tag: str = ""
    crs_note: str = ""

    def __post_init__(self) -> None:
        xyz = _frozen(self.xyz, np.float64).reshape(-1, 3)
        semantic = _frozen(self.semantic, np.int64).reshape(-1)
        instance = _frozen(self.instance, np.int64).reshape(-1)
        if not len(xyz) == len(semantic) == len(instance):
            raise ValueError(
                f"misaligned point arrays: xyz={len(xyz)}, semantic={len(semantic)}, instance={len(instance)}"
            )
        object.__setattr__(self, "xyz", xyz)
        object.__setattr__(self, "semantic", semantic)
        object.__setattr__(self, "instance", instance)

    def __len__(self) -> int:
        return len(self.xyz)

    @classmethod
    def empty(cls, source_tag: str = "", crs_note: str = "") -> "LabeledPointCloud":
        return cls(np.zeros((0, 3)), np.zeros(0), np.zeros(0), source_tag, crs_note)

    def subset(self, indices: npt.ArrayLike) -> "LabeledPointCloud":
        """Returns the points at ``indices`` (in the given order) with metadata carried over."""
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledPointCloud(self.xyz[idx], self.semantic[idx], self.instance[idx], self.source_tag, self.crs_note)

    def with_xyz(self, xyz: npt.ArrayLike) -> "LabeledPointCloud":
        return LabeledPointCloud(xyz, self.semantic, self.instance, self.source_tag, self.crs_note)

    def with_instance(self, instance: npt.ArrayLike, semantic: Optional[npt.ArrayLike] = None) -> "LabeledPointCloud":
        sem = self.semantic if semantic is None else semantic
        return LabeledPointCloud(self.xyz, sem, instance, self.source_tag, self.crs_note)

    def instance_ids(self) -> np.ndarray:
        """Sorted unique nonzero instance ids."""
        ids = np.unique(self.instance)
        return ids[ids != 0]

    def equals(self, other: "LabeledPointCloud") -> bool:
        """Bitwise equality of all point records (metadata is ignored)."""
        return (
            self.xyz.shape == other.xyz.shape
            and self.xyz.tobytes() == other.xyz.tobytes()
            and np.array_equal(self.semantic, other.semantic)
            and np.array_equal(self.instance, other.instance)
        )


@dataclass(frozen=True)
class Violation:
    index: int
    message: str

    def __str__(self) -> str:
        return f"point {self.index}: {self.message}"


def validate(cloud: LabeledPointCloud) -> List[Violation]:
    """
    Checks the per-point invariants of a cloud.

    Returns:
        One :class:`Violation` per offending point and rule, ordered by point index. An empty list means the cloud is
        valid.
    """

    violations: List[Violation] = []
    bad_coords = ~np.isfinite(cloud.xyz).all(axis=1)
    bad_semantic = ~np.isin(cloud.semantic, (NON_TREE, TREE))
    bad_instance = cloud.instance < 0
    orphan = (cloud.instance > 0) & (cloud.semantic != TREE)

    for i in np.flatnonzero(bad_coords):
        violations.append(Violation(int(i), f"non-finite coordinate {cloud.xyz[i].tolist()}"))
    for i in np.flatnonzero(bad_semantic):
        violations.append(Violation(int(i), f"semantic label {cloud.semantic[i]} not in {{0, 1}}"))
    for i in np.flatnonzero(bad_instance):
        violations.append(Violation(int(i), f"negative instance id {cloud.instance[i]}"))
    for i in np.flatnonzero(orphan & ~bad_semantic):
        violations.append(Violation(int(i), f"instance id {cloud.instance[i]} on non_tree point"))
    violations.sort(key=lambda v: v.index)
    return violations


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull_xy(xy: npt.ArrayLike) -> np.ndarray:
    """
    Convex hull of 2-D points by Andrew's monotone chain.

    Returns:
        Hull vertices in counter-clockwise order without repetition of the first vertex. Collinear boundary points are
        dropped, so fewer than three vertices means the hull is degenerate.
    """

    pts = np.unique(np.asarray(xy, dtype=np.float64).reshape(-1, 2), axis=0)  # lexicographic sort
    if len(pts) <= 2:
        return pts

    def chain(points: np.ndarray) -> list:
        out: list = []
        for p in points:
            while len(out) >= 2 and _cross(out[-2], out[-1], p) <= 0:
                out.pop()
            out.append(p)
        return out

    as_list = pts.tolist()
    lower = chain(as_list)
    upper = chain(as_list[::-1])
    return np.array(lower[:-1] + upper[:-1], dtype=np.float64).reshape(-1, 2)


def _shoelace(vertices: np.ndarray) -> float:
    if len(vertices) < 3:
        return 0.0
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def hull_area_xy(cloud: LabeledPointCloud) -> float:
    """Area (m²) of the convex hull of the XY projection; 0 for degenerate hulls."""
    if len(cloud) == 0:
        raise ValueError("hull area of an empty cloud is undefined")
    return _shoelace(convex_hull_xy(cloud.xyz[:, :2]))


def footprint_area(cloud: LabeledPointCloud, mode: AreaMode = "hull") -> float:
    """Plot area used as the density reference: XY convex hull (default) or axis-aligned XY bounding box."""
    if mode == "hull":
        return hull_area_xy(cloud)
    if mode == "bbox":
        if len(cloud) == 0:
            raise ValueError("bounding box of an empty cloud is undefined")
        extent = cloud.xyz[:, :2].max(axis=0) - cloud.xyz[:, :2].min(axis=0)
        return float(extent[0] * extent[1])
    raise ValueError(f"unknown area mode {mode!r}")


@dataclass(frozen=True)
class DensityStats:
    n_points: int
    hull_area_m2: float
    density_pts_m2: float = field(init=False)

    def __post_init__(self) -> None:
        if self.hull_area_m2 <= 0:
            raise DegenerateHullError(f"footprint area is {self.hull_area_m2}; density is undefined")
        object.__setattr__(self, "density_pts_m2", self.n_points / self.hull_area_m2)


def point_density(cloud: LabeledPointCloud, mode: AreaMode = "hull") -> DensityStats:
    """Points per square meter of the cloud's XY footprint."""
    area = footprint_area(cloud, mode)
    if area <= 0:
        raise DegenerateHullError("cloud footprint is degenerate (collinear or coincident points)")
    return DensityStats(len(cloud), area)
