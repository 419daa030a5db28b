"""
Instance grouping over per-point predictions.

Tree points (semantic gate) are clustered twice: region growing on offset-shifted coordinates and Gaussian mean shift
in the 5-D embedding space. The pooled candidates are scored and reduced to a per-point instance map by greedy
non-maximum suppression.
"""

from __future__ import annotations

__all__ = [
    "PointPredictions",
    "ClusterCandidate",
    "GroupingConfig",
    "AlignmentError",
    "semantic_mask",
    "shift_points",
    "radius_pairs",
    "region_grow",
    "mean_shift_step",
    "mean_shift",
    "mean_probability_score",
    "score_candidates",
    "candidate_iou_matrix",
    "nms",
    "nms_accept",
    "segment",
    "predicted_semantic",
]

from dataclasses import asdict, dataclass, replace
from typing import Any, Callable, Dict, Iterable, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .cloud import LabeledPointCloud

CandidateSource = Literal["offset_rg", "embedding_ms"]

# Cell offsets that cover each unordered pair of distinct neighboring cells exactly once.
_FORWARD_OFFSETS = np.array(
    [
        (dx, dy, dz)
        for dx in (-1, 0, 1)
        for dy in (-1, 0, 1)
        for dz in (-1, 0, 1)
        if (dx, dy, dz) > (0, 0, 0)
    ],
    dtype=np.int64,
)
_MAX_PAIRS_PER_BLOCK = 1 << 22
_MS_CHUNK = 1024


class AlignmentError(ValueError):
    """Predictions and cloud (or two labelings) do not have the same number of points."""


@dataclass(frozen=True, eq=False)
class PointPredictions:
    """
    Per-point network outputs, aligned with cloud order.

    Args:
        semantic_prob: Probability that the point belongs to a tree.
        offset: Predicted displacement from the point towards its tree center (m).
        embedding: Instance embedding; points of the same tree are close.

    Shape:
        - :code:`semantic_prob`: :math:`(N)`
        - :code:`offset`: :math:`(N, 3)`
        - :code:`embedding`: :math:`(N, 5)`
    """

    semantic_prob: np.ndarray
    offset: np.ndarray
    embedding: np.ndarray

    def __post_init__(self) -> None:
        prob = np.array(self.semantic_prob, dtype=np.float64).reshape(-1)
        offset = np.array(self.offset, dtype=np.float64).reshape(-1, 3)
        embedding = np.array(self.embedding, dtype=np.float64).reshape(-1, 5)
        if not len(prob) == len(offset) == len(embedding):
            raise AlignmentError(
                f"misaligned predictions: prob={len(prob)}, offset={len(offset)}, embedding={len(embedding)}"
            )
        if not (np.isfinite(prob).all() and np.isfinite(offset).all() and np.isfinite(embedding).all()):
            raise ValueError("predictions contain non-finite values")
        if len(prob) and (prob.min() < 0 or prob.max() > 1):
            raise ValueError("semantic probabilities must lie in [0, 1]")
        for name, value in (("semantic_prob", prob), ("offset", offset), ("embedding", embedding)):
            value.flags.writeable = False
            object.__setattr__(self, name, value)

    def __len__(self) -> int:
        return len(self.semantic_prob)

    def subset(self, indices: npt.ArrayLike) -> "PointPredictions":
        idx = np.asarray(indices, dtype=np.int64)
        return PointPredictions(self.semantic_prob[idx], self.offset[idx], self.embedding[idx])


@dataclass(frozen=True, eq=False)
class ClusterCandidate:
    """A candidate tree: sorted point indices into the cloud, a confidence score, and the clustering that found it."""

    members: np.ndarray
    source: CandidateSource
    score: float = 0.0

    def __post_init__(self) -> None:
        members = np.unique(np.asarray(self.members, dtype=np.int64))
        if len(members) == 0:
            raise ValueError("a cluster candidate needs at least one member")
        if members[0] < 0:
            raise ValueError("member indices must be non-negative")
        members.flags.writeable = False
        object.__setattr__(self, "members", members)

    def __len__(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class GroupingConfig:
    """
    Parameters of the grouping stages. The defaults assume tree spacing of a few meters.

    Args:
        semantic_threshold: Points with ``semantic_prob`` strictly above this value are treated as tree points.
        rg_radius: Linking distance for region growing on shifted coordinates (m).
        rg_min_points: Region-growing components with fewer points are discarded.
        ms_bandwidth: Gaussian kernel bandwidth of the embedding mean shift.
        ms_max_iter: Iteration cap per mean-shift seed.
        ms_tol: A seed has converged once its next shift would be shorter than this.
        ms_seed_stride: Every ``ms_seed_stride``-th gated point seeds a mean-shift trajectory.
        nms_iou: A candidate is suppressed if its IoU with an accepted candidate exceeds this value.
    """

    semantic_threshold: float = 0.5
    rg_radius: float = 0.5
    rg_min_points: int = 10
    ms_bandwidth: float = 0.6
    ms_max_iter: int = 100
    ms_tol: float = 1e-4
    ms_seed_stride: int = 1
    nms_iou: float = 0.3

    def __post_init__(self) -> None:
        if not 0 <= self.semantic_threshold < 1:
            raise ValueError(f"semantic_threshold must lie in [0, 1), got {self.semantic_threshold}")
        for name in ("rg_radius", "rg_min_points", "ms_bandwidth", "ms_max_iter", "ms_tol", "ms_seed_stride", "nms_iou"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "GroupingConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown grouping fields: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _check_aligned(cloud: LabeledPointCloud, preds: PointPredictions) -> None:
    if len(cloud) != len(preds):
        raise AlignmentError(f"cloud has {len(cloud)} points but predictions have {len(preds)}")


def semantic_mask(preds: PointPredictions, threshold: float = 0.5) -> np.ndarray:
    """Sorted indices of points whose tree probability is strictly greater than ``threshold``."""
    return np.flatnonzero(preds.semantic_prob > threshold).astype(np.int64)


def shift_points(cloud: LabeledPointCloud, preds: PointPredictions, mask: npt.ArrayLike) -> np.ndarray:
    """Coordinates of the masked points moved by their predicted offsets, in mask order."""
    _check_aligned(cloud, preds)
    idx = np.asarray(mask, dtype=np.int64)
    return cloud.xyz[idx] + preds.offset[idx]


def radius_pairs(coords: npt.ArrayLike, radius: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    All index pairs ``(i, j)``, ``i < j``, whose Euclidean distance is at most ``radius``.

    Points are hashed into a uniform grid with cell size ``radius``, so only the 27 cells around each point need to be
    searched. Expected cost is linear in the number of points times the mean neighbor count.
    """

    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    n = len(coords)
    if n < 2:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty

    cells = np.floor(coords / radius).astype(np.int64)
    cells -= cells.min(axis=0) - 1  # one empty layer on each side keeps neighbor keys from wrapping
    dims = cells.max(axis=0) + 2
    if float(dims[0]) * float(dims[1]) * float(dims[2]) >= 2.0**62:
        raise ValueError("point extent is too large relative to the radius for grid hashing")
    strides = np.array([dims[1] * dims[2], dims[2], 1], dtype=np.int64)
    keys = cells @ strides

    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    sorted_coords = coords[order]
    positions = np.arange(n, dtype=np.int64)
    r2 = radius * radius

    rows: List[np.ndarray] = []
    cols: List[np.ndarray] = []
    for delta in [0] + [int(o @ strides) for o in _FORWARD_OFFSETS]:
        target = sorted_keys + delta
        start = np.searchsorted(sorted_keys, target, side="left")
        stop = np.searchsorted(sorted_keys, target, side="right")
        if delta == 0:
            start = np.maximum(start, positions + 1)
        counts = np.maximum(stop - start, 0)
        if not counts.any():
            continue
        # Expand the (point, neighbor-range) table in blocks to bound memory.
        cumulative = np.cumsum(counts)
        block_start = 0
        while block_start < n:
            base = cumulative[block_start - 1] if block_start else 0
            block_stop = int(np.searchsorted(cumulative, base + _MAX_PAIRS_PER_BLOCK, side="right"))
            block_stop = max(block_stop, block_start + 1)
            block = slice(block_start, block_stop)
            block_counts = counts[block]
            total = int(block_counts.sum())
            if total:
                i = np.repeat(positions[block], block_counts)
                first = np.repeat(start[block] - (np.cumsum(block_counts) - block_counts), block_counts)
                j = first + np.arange(total, dtype=np.int64)
                diff = sorted_coords[i] - sorted_coords[j]
                close = np.einsum("ij,ij->i", diff, diff) <= r2
                a, b = order[i[close]], order[j[close]]
                rows.append(np.minimum(a, b))
                cols.append(np.maximum(a, b))
            block_start = block_stop

    if not rows:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty
    return np.concatenate(rows), np.concatenate(cols)


def _components(n: int, rows: np.ndarray, cols: np.ndarray) -> List[np.ndarray]:
    graph = sparse.coo_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    order = np.argsort(labels, kind="stable")
    boundaries = np.flatnonzero(np.diff(labels[order])) + 1
    groups = np.split(order, boundaries)
    groups.sort(key=lambda g: int(g[0]))  # components ordered by their lowest point index
    return groups


def region_grow(
    coords: npt.ArrayLike, radius: float, min_points: int, indices: Optional[npt.ArrayLike] = None
) -> List[ClusterCandidate]:
    """
    Connected components of the graph that links points closer than ``radius``.

    Args:
        coords: Point coordinates, usually offset-shifted tree points.
        radius: Linking distance (m).
        min_points: Components with fewer points are dropped.
        indices: Cloud index of each row of ``coords``; candidate members are reported in these indices. Defaults to
            the row numbers.

    Returns:
        Candidates with source ``offset_rg`` ordered by their lowest member index.
    """

    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    n = len(coords)
    if n == 0:
        return []
    index_map = np.arange(n) if indices is None else np.asarray(indices, dtype=np.int64)
    rows, cols = radius_pairs(coords, radius)
    return [
        ClusterCandidate(index_map[group], "offset_rg")
        for group in _components(n, rows, cols)
        if len(group) >= min_points
    ]


def _squared_distances(a: np.ndarray, b: np.ndarray, b_sq: np.ndarray) -> np.ndarray:
    d2 = np.einsum("ij,ij->i", a, a)[:, None] + b_sq[None, :] - 2.0 * (a @ b.T)
    return np.maximum(d2, 0.0)


def mean_shift_step(
    seeds: npt.ArrayLike, points: npt.ArrayLike, bandwidth: float, weights: Optional[npt.ArrayLike] = None
) -> np.ndarray:
    """One Gaussian-kernel mean-shift update: the kernel-weighted mean of ``points`` around each seed."""
    seeds = np.atleast_2d(np.asarray(seeds, dtype=np.float64))
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    w_points = np.ones(len(points)) if weights is None else np.asarray(weights, dtype=np.float64)
    p_sq = np.einsum("ij,ij->i", points, points)
    out = np.empty_like(seeds)
    for begin in range(0, len(seeds), _MS_CHUNK):
        chunk = seeds[begin : begin + _MS_CHUNK]
        w = np.exp(-_squared_distances(chunk, points, p_sq) / (2.0 * bandwidth * bandwidth)) * w_points
        total = w.sum(axis=1)
        stuck = total <= 0  # every kernel weight underflowed; the seed stays put
        total[stuck] = 1.0
        shifted = (w @ points) / total[:, None]
        shifted[stuck] = chunk[stuck]
        out[begin : begin + len(chunk)] = shifted
    return out


def _converge(
    seeds: np.ndarray, points: np.ndarray, weights: np.ndarray, bandwidth: float, max_iter: int, tol: float
) -> np.ndarray:
    modes = seeds.copy()
    active = np.arange(len(modes))
    for _ in range(max_iter):
        if len(active) == 0:
            break
        current = modes[active]
        proposed = mean_shift_step(current, points, bandwidth, weights)
        moving = np.linalg.norm(proposed - current, axis=1) >= tol
        # Converged seeds keep their pre-step position, so a further step from a reported mode is below tol.
        modes[active[moving]] = proposed[moving]
        active = active[moving]
    return modes


def mean_shift(
    embeddings: npt.ArrayLike,
    bandwidth: float = 0.6,
    max_iter: int = 100,
    tol: float = 1e-4,
    seed_stride: int = 1,
    indices: Optional[npt.ArrayLike] = None,
    return_modes: bool = False,
):
    """
    Gaussian-kernel mean-shift clustering.

    Every ``seed_stride``-th point starts a trajectory that follows the kernel-weighted mean (kernel
    ``exp(-|d|² / (2 b²))``) until the next step would be shorter than ``tol`` or ``max_iter`` steps were taken. Modes
    closer than ``bandwidth / 2`` to an earlier mode are merged into it, and each point joins its nearest mode.
    Duplicate embeddings are collapsed into weighted points first; this does not change any trajectory.

    Args:
        embeddings: Points to cluster.
        bandwidth: Kernel bandwidth ``b``.
        max_iter: Iteration cap per trajectory.
        tol: Convergence tolerance on the step length.
        seed_stride: Seed subsampling stride.
        indices: Cloud index of each row of ``embeddings``, used for candidate members. Defaults to row numbers.
        return_modes: Also return the merged mode positions, one per candidate.

    Returns:
        Candidates with source ``embedding_ms``, ordered by mode; with ``return_modes``, a tuple
        ``(candidates, modes)``.

    Shape:
        - :code:`embeddings`: :math:`(M, D)`
    """

    if not bandwidth > 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    x = np.asarray(embeddings, dtype=np.float64)
    x = x.reshape(len(x), -1) if x.size else x.reshape(0, 5)
    index_map = np.arange(len(x)) if indices is None else np.asarray(indices, dtype=np.int64)
    if len(x) == 0:
        return ([], np.zeros((0, x.shape[1]))) if return_modes else []

    unique_points, counts = np.unique(x, axis=0, return_counts=True)
    seeds = np.unique(x[:: int(seed_stride)], axis=0)
    converged = _converge(seeds, unique_points, counts.astype(np.float64), bandwidth, max_iter, tol)

    merge_radius = bandwidth / 2.0
    representatives: List[np.ndarray] = []
    for mode in converged:
        if representatives:
            reps = np.asarray(representatives)
            if (np.linalg.norm(reps - mode, axis=1) <= merge_radius).any():
                continue
        representatives.append(mode)
    modes = np.asarray(representatives)

    m_sq = np.einsum("ij,ij->i", modes, modes)
    nearest = np.empty(len(x), dtype=np.int64)
    for begin in range(0, len(x), _MS_CHUNK):
        nearest[begin : begin + _MS_CHUNK] = np.argmin(_squared_distances(x[begin : begin + _MS_CHUNK], modes, m_sq), axis=1)

    candidates: List[ClusterCandidate] = []
    kept_modes: List[np.ndarray] = []
    for label in range(len(modes)):
        members = np.flatnonzero(nearest == label)
        if len(members):
            candidates.append(ClusterCandidate(index_map[members], "embedding_ms"))
            kept_modes.append(modes[label])
    if return_modes:
        return candidates, np.asarray(kept_modes)
    return candidates


Scorer = Callable[[ClusterCandidate, PointPredictions], float]


def mean_probability_score(candidate: ClusterCandidate, preds: PointPredictions) -> float:
    """Mean tree probability over the candidate's members."""
    return float(np.mean(preds.semantic_prob[candidate.members]))


def score_candidates(
    candidates: Iterable[ClusterCandidate], preds: PointPredictions, scorer: Optional[Scorer] = None
) -> List[ClusterCandidate]:
    """Attaches a score to every candidate. ``scorer`` can be swapped for a learned model; it must return [0, 1]."""
    scorer = scorer or mean_probability_score
    scored = []
    for candidate in candidates:
        score = float(scorer(candidate, preds))
        if not 0.0 <= score <= 1.0:
            raise ValueError(f"scorer returned {score}, expected a value in [0, 1]")
        scored.append(replace(candidate, score=score))
    return scored


def _membership(candidates: Sequence[ClusterCandidate], n_points: int) -> sparse.csr_matrix:
    sizes = [len(c) for c in candidates]
    rows = np.repeat(np.arange(len(candidates)), sizes)
    cols = np.concatenate([c.members for c in candidates])
    return sparse.csr_matrix(
        (np.ones(len(cols), dtype=np.int64), (rows, cols)), shape=(len(candidates), n_points)
    )


def candidate_iou_matrix(candidates: Sequence[ClusterCandidate], n_points: int) -> np.ndarray:
    """Dense pairwise point-set IoU between candidates."""
    if not candidates:
        return np.zeros((0, 0))
    membership = _membership(candidates, n_points)
    sizes = np.array([len(c) for c in candidates], dtype=np.int64)
    intersection = (membership @ membership.T).toarray()
    return intersection / (sizes[:, None] + sizes[None, :] - intersection)


def _nms_order(candidates: Sequence[ClusterCandidate]) -> List[int]:
    source_rank = {"offset_rg": 0, "embedding_ms": 1}
    return sorted(
        range(len(candidates)),
        key=lambda i: (
            -candidates[i].score,
            -len(candidates[i]),
            int(candidates[i].members[0]),
            source_rank[candidates[i].source],
            i,
        ),
    )


def nms_accept(candidates: Sequence[ClusterCandidate], nms_iou: float, n_points: int) -> List[int]:
    """
    Greedy non-maximum suppression: indices of the accepted candidates, in acceptance order.

    Candidates are visited by descending score, then descending size, then ascending lowest member index. A candidate
    is accepted if its IoU with every accepted candidate is at most ``nms_iou``.
    """

    if not candidates:
        return []
    if max(int(c.members[-1]) for c in candidates) >= n_points:
        raise ValueError("candidate member index out of range")
    membership = _membership(candidates, n_points)
    intersection = (membership @ membership.T).tocsr()
    sizes = np.array([len(c) for c in candidates], dtype=np.int64)
    is_accepted = np.zeros(len(candidates), dtype=bool)
    accepted: List[int] = []
    for i in _nms_order(candidates):
        row = slice(intersection.indptr[i], intersection.indptr[i + 1])
        others = intersection.indices[row]
        overlap = intersection.data[row]
        hit = is_accepted[others]
        iou = overlap[hit] / (sizes[i] + sizes[others[hit]] - overlap[hit])
        if not (iou > nms_iou).any():
            accepted.append(i)
            is_accepted[i] = True
    return accepted


def nms(candidates: Sequence[ClusterCandidate], nms_iou: float, n_points: int) -> np.ndarray:
    """
    Per-point instance map from the candidates that survive :func:`nms_accept`.

    Accepted candidates are numbered from 1 in acceptance order, and a point covered by several of them goes to the
    one accepted first.

    Returns:
        Instance id per point, 0 for points outside all accepted candidates.
    """

    ids = np.zeros(n_points, dtype=np.int64)
    for instance_id, i in enumerate(nms_accept(candidates, nms_iou, n_points), start=1):
        members = candidates[i].members
        free = members[ids[members] == 0]
        ids[free] = instance_id
    return ids


def segment(
    cloud: LabeledPointCloud,
    preds: PointPredictions,
    config: Optional[GroupingConfig] = None,
    scorer: Optional[Scorer] = None,
) -> np.ndarray:
    """
    Full grouping pipeline: semantic gate, offset region growing and embedding mean shift on the gated points,
    scoring of the pooled candidates, and NMS.

    Returns:
        Predicted instance id per point of ``cloud``; points outside the semantic gate are always 0.

    Raises:
        AlignmentError: If ``preds`` does not have one entry per point of ``cloud``.
    """

    config = config or GroupingConfig()
    _check_aligned(cloud, preds)
    mask = semantic_mask(preds, config.semantic_threshold)
    if len(mask) == 0:
        return np.zeros(len(cloud), dtype=np.int64)

    shifted = shift_points(cloud, preds, mask)
    candidates = region_grow(shifted, config.rg_radius, config.rg_min_points, indices=mask)
    candidates += mean_shift(
        preds.embedding[mask],
        bandwidth=config.ms_bandwidth,
        max_iter=config.ms_max_iter,
        tol=config.ms_tol,
        seed_stride=config.ms_seed_stride,
        indices=mask,
    )
    scored = score_candidates(candidates, preds, scorer)
    return nms(scored, config.nms_iou, len(cloud))


def predicted_semantic(preds: PointPredictions, threshold: float = 0.5) -> np.ndarray:
    """Binary semantic labels implied by the gate (1 where ``semantic_prob > threshold``)."""
    return (preds.semantic_prob > threshold).astype(np.int64)
