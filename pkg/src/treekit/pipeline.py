"""Scenario dataset preparation, end-to-end segmentation runs, and density sweeps."""

from __future__ import annotations

__all__ = [
    "SCENARIO_PRESETS",
    "SCENARIO5_DENSITIES",
    "PipelineError",
    "ScenarioConfig",
    "Artifact",
    "RunManifest",
    "expand_scenario",
    "prepare_scenario",
    "run_pipeline",
    "sweep_densities",
    "write_sweep_csv",
    "prediction_subset_provider",
    "oracle_provider",
]

from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
import csv
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
import json
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import __version__
from ._seeding import check_seed, derive_seed
from .augment import AugmentConfig, augment
from .cloud import DegenerateHullError, LabeledPointCloud, hull_area_xy
from .evaluate import evaluate
from .formats import CloudFormatError, load_cloud, load_predictions, save_cloud
from .grouping import AlignmentError, GroupingConfig, PointPredictions, predicted_semantic, segment
from .sparsify import series_seed, sparsify_indices
from .synthgen import OracleNoise, oracle_predictions

PathLike = Union[str, Path]

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_ALIGNMENT = 3
EXIT_IO = 4

SCENARIO5_DENSITIES: Tuple[float, ...] = (1000.0, 500.0, 100.0, 75.0, 50.0, 25.0, 10.0)

# name -> (platforms drawn from the sources, sparsification densities)
SCENARIO_PRESETS: Dict[str, Tuple[Tuple[str, ...], Tuple[float, ...]]] = {
    "scenario1": (("ULS",), ()),
    "scenario2": (("MLS",), ()),
    "scenario3": (("ULS", "MLS"), ()),
    "scenario4": (("ULS", "MLS"), (1000.0,)),
    "scenario5": (("ULS", "MLS"), SCENARIO5_DENSITIES),
}
PLATFORMS = ("ULS", "MLS")


class PipelineError(RuntimeError):
    """A pipeline stage failed. ``exit_code`` is the process status the CLI reports."""

    def __init__(self, stage: str, message: str, exit_code: int):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.exit_code = exit_code


@contextmanager
def stage(name: str) -> Iterator[None]:
    """Maps failures inside a pipeline stage to :class:`PipelineError` with the matching exit code."""
    try:
        yield
    except PipelineError:
        raise
    except AlignmentError as error:
        raise PipelineError(name, str(error), EXIT_ALIGNMENT) from error
    except (CloudFormatError, DegenerateHullError, ValueError) as error:
        raise PipelineError(name, str(error), EXIT_VALIDATION) from error
    except OSError as error:
        raise PipelineError(name, str(error), EXIT_IO) from error


@dataclass(frozen=True)
class ScenarioConfig:
    """
    Composition of a training dataset.

    Args:
        name: ``scenario1`` ... ``scenario5`` or any other name for a custom composition.
        sources: ``(path, platform)`` pairs; platform is ``ULS`` or ``MLS``.
        densities: Sparsification densities (points/m²) for custom scenarios. Presets define their own; a preset may
            only repeat its own list here.
        augment: Optional augmentation applied to every emitted cloud.
        seed: Root seed.
    """

    name: str
    sources: Tuple[Tuple[str, str], ...]
    densities: Tuple[float, ...] = ()
    augment: Optional[AugmentConfig] = None
    seed: int = 0

    def __post_init__(self) -> None:
        sources = tuple((str(path), str(platform).upper()) for path, platform in self.sources)
        for _, platform in sources:
            if platform not in PLATFORMS:
                raise ValueError(f"unknown platform {platform!r}; expected one of {PLATFORMS}")
        densities = tuple(float(d) for d in self.densities)
        if any(not d > 0 for d in densities):
            raise ValueError("densities must be positive")
        object.__setattr__(self, "sources", sources)
        object.__setattr__(self, "densities", densities)
        object.__setattr__(self, "seed", check_seed(self.seed))

    @classmethod
    def from_dict(cls, data: Dict[str, Any], seed: Optional[int] = None) -> "ScenarioConfig":
        augment_cfg = data.get("augment")
        root_seed = data.get("seed", 0) if seed is None else seed
        return cls(
            name=data["name"],
            sources=tuple(
                (s["path"], s["platform"]) if isinstance(s, dict) else tuple(s) for s in data.get("sources", [])
            ),
            densities=tuple(data.get("densities", ())),
            augment=AugmentConfig.from_dict(augment_cfg) if augment_cfg is not None else None,
            seed=root_seed,
        )


def expand_scenario(config: ScenarioConfig) -> Tuple[List[int], Tuple[float, ...]]:
    """
    Indices of the sources a scenario uses and the densities it sparsifies to.

    Source indices refer to ``config.sources`` so that per-source seeds do not depend on which preset is run.
    """

    if config.name in SCENARIO_PRESETS:
        platforms, densities = SCENARIO_PRESETS[config.name]
        if config.densities and config.densities != densities:
            raise ValueError(f"{config.name} defines densities {densities}; got {config.densities}")
    else:
        platforms, densities = PLATFORMS, config.densities
    return [i for i, (_, platform) in enumerate(config.sources) if platform in platforms], densities


@dataclass(frozen=True)
class Artifact:
    input: str
    transforms: List[str]
    output: str
    seed: Optional[int]
    achieved_density: float
    n_points: int


@dataclass
class RunManifest:
    scenario: str
    seed: int
    artifacts: List[Artifact] = field(default_factory=list)
    tool_version: str = __version__
    timestamp: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tool_version": self.tool_version,
            "timestamp": self.timestamp,
            "scenario": self.scenario,
            "seed": self.seed,
            "artifacts": [asdict(a) for a in self.artifacts],
        }

    def write(self, path: PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def _density_tag(density: float) -> str:
    return f"d{density:g}".replace(".", "p")


def prepare_scenario(config: ScenarioConfig, out_dir: PathLike, threads: int = 1) -> RunManifest:
    """
    Writes the clouds of a training scenario and a ``manifest.json`` describing them.

    For every selected source the original cloud and one sparsified cloud per density are emitted; with an
    augmentation configured, each emitted cloud is augmented first. Output names are
    ``<source stem>_<platform>_original.ptc`` and ``<source stem>_<platform>_d<density>.ptc``.

    Raises:
        PipelineError: If a source cannot be read or validated, or its footprint is degenerate.
    """

    out_dir = Path(out_dir)
    selected, densities = expand_scenario(config)
    with stage("prepare"):
        out_dir.mkdir(parents=True, exist_ok=True)

    def emit(source_index: int) -> List[Artifact]:
        path, platform = config.sources[source_index]
        with stage("load"):
            cloud = load_cloud(path)
        with stage("sparsify"):
            area = hull_area_xy(cloud) if len(cloud) else 0.0
            if densities and area <= 0:
                raise DegenerateHullError(f"{path}: degenerate footprint, cannot sparsify")
        source_seed = derive_seed(config.seed, source_index)
        stem = f"{Path(path).stem}_{platform}"
        jobs: List[Tuple[str, List[str], LabeledPointCloud, Optional[int]]] = [(f"{stem}_original.ptc", [], cloud, None)]
        for j, density in enumerate(densities):
            seed = series_seed(source_seed, j)
            with stage("sparsify"):
                sub = cloud.subset(sparsify_indices(cloud, density, seed, hull_area=area))
            jobs.append((f"{stem}_{_density_tag(density)}.ptc", [f"sparsify(density={density:g})"], sub, seed))

        artifacts = []
        for k, (name, transforms, out_cloud, seed) in enumerate(jobs):
            if config.augment is not None:
                aug_seed = derive_seed(config.seed, source_index, k, 1)
                with stage("augment"):
                    out_cloud = augment(out_cloud, AugmentConfig(**{**config.augment.__dict__, "seed": aug_seed}))
                transforms = transforms + [f"augment(seed={aug_seed})"]
                seed = aug_seed if seed is None else seed
            target = out_dir / name
            with stage("write"):
                save_cloud(out_cloud, target)
            artifacts.append(
                Artifact(
                    input=str(path),
                    transforms=transforms,
                    output=str(target),
                    seed=seed,
                    achieved_density=len(out_cloud) / area if area > 0 else 0.0,
                    n_points=len(out_cloud),
                )
            )
        return artifacts

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        per_source = list(pool.map(emit, selected))

    manifest = RunManifest(
        scenario=config.name,
        seed=config.seed,
        artifacts=[a for group in per_source for a in group],
        timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )
    with stage("write"):
        manifest.write(out_dir / "manifest.json")
    return manifest


def _segment_and_evaluate(
    cloud: LabeledPointCloud, preds: PointPredictions, gt: LabeledPointCloud, config: GroupingConfig, bin_height: float
):
    with stage("segment"):
        ids = segment(cloud, preds, config)
    with stage("evaluate"):
        if len(gt) != len(cloud):
            raise AlignmentError(f"ground truth has {len(gt)} points but the cloud has {len(cloud)}")
        report = evaluate(gt.instance, ids, gt.xyz[:, 2], bin_height)
    return ids, report


def run_pipeline(
    cloud_path: PathLike,
    preds_path: PathLike,
    config: Optional[GroupingConfig] = None,
    gt_path: Optional[PathLike] = None,
    out_dir: Optional[PathLike] = None,
    bin_height: float = 5.0,
) -> Dict[str, Any]:
    """
    Segments a cloud from its prediction sidecar and evaluates the result.

    Args:
        cloud_path: PTC cloud to segment.
        preds_path: PRD sidecar aligned with ``cloud_path``.
        config: Grouping parameters.
        gt_path: Ground-truth PTC. Defaults to ``cloud_path`` (its instance column).
        out_dir: If given, ``instances.ptc`` and ``report.json`` are written here.
        bin_height: Height-bin width for the per-bin rows.

    Returns:
        The report document (see :meth:`~treekit.evaluate.MetricsReport.to_dict`).

    Raises:
        PipelineError: Naming the failed stage, with the exit code for validation, alignment, or I/O failures.
    """

    config = config or GroupingConfig()
    with stage("load"):
        cloud = load_cloud(cloud_path)
        preds = load_predictions(preds_path)
        gt = cloud if gt_path is None else load_cloud(gt_path)
    ids, report = _segment_and_evaluate(cloud, preds, gt, config, bin_height)
    document = report.to_dict()
    if out_dir is not None:
        out_dir = Path(out_dir)
        with stage("write"):
            out_dir.mkdir(parents=True, exist_ok=True)
            result = cloud.with_instance(ids, predicted_semantic(preds, config.semantic_threshold))
            save_cloud(result, out_dir / "instances.ptc")
            (out_dir / "report.json").write_text(json.dumps(document, indent=2) + "\n", encoding="utf-8")
    return document


PredictionProvider = Callable[[LabeledPointCloud, np.ndarray, int], PointPredictions]


def prediction_subset_provider(preds: PointPredictions) -> PredictionProvider:
    """Provider that reuses full-cloud predictions for the sampled points."""

    def provide(cloud: LabeledPointCloud, indices: np.ndarray, seed: int) -> PointPredictions:
        return preds.subset(indices)

    return provide


def oracle_provider(cloud: LabeledPointCloud, noise: OracleNoise, seed: int = 0) -> PredictionProvider:
    """Oracle predictions drawn once on the full cloud, so each point keeps its noise at every density."""
    return prediction_subset_provider(oracle_predictions(cloud, noise, seed))


SWEEP_FIELDS = [
    "density",
    "achieved_density",
    "n_points",
    "status",
    "error",
    "tp",
    "fp",
    "fn",
    "gt",
    "pt",
    "detection_rate",
    "omission_rate",
    "commission_rate",
    "precision",
    "recall",
    "f1_tree",
    "f1_local",
    "rmse_h_m",
]


def sweep_densities(
    cloud: LabeledPointCloud,
    provider: PredictionProvider,
    densities: Sequence[Optional[float]],
    seed: int,
    config: Optional[GroupingConfig] = None,
    bin_height: float = 5.0,
    threads: int = 1,
) -> List[Dict[str, Any]]:
    """
    Segments and evaluates the cloud at each density.

    Entry ``i`` is sparsified with seed ``seed XOR i``; ``None`` evaluates the full cloud. The sparsified cloud's own
    labels are the ground truth. A failing density yields a row with ``status="failed"`` and the sweep continues.

    Returns:
        One row per density in input order, with all scalar metric fields.
    """

    if len(densities) == 0:
        raise ValueError("at least one density is required")
    config = config or GroupingConfig()
    area = hull_area_xy(cloud)

    def run(item: Tuple[int, Optional[float]]) -> Dict[str, Any]:
        i, density = item
        row: Dict[str, Any] = {name: None for name in SWEEP_FIELDS}
        row["density"] = "full" if density is None else density
        try:
            if density is None:
                indices = np.arange(len(cloud))
            else:
                indices = sparsify_indices(cloud, density, series_seed(seed, i), hull_area=area)
            sub = cloud.subset(indices)
            preds = provider(sub, indices, series_seed(seed, i))
            _, report = _segment_and_evaluate(sub, preds, sub, config, bin_height)
            row.update(report.scalar_row())
            row.update(status="ok", error="", n_points=len(sub), achieved_density=len(sub) / area)
        except Exception as error:  # noqa: BLE001 - a failed density must not abort the sweep
            row.update(status="failed", error=str(error))
        return row

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        return list(pool.map(run, enumerate(densities)))


def write_sweep_csv(rows: Sequence[Dict[str, Any]], path: PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=SWEEP_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row.get(k) is None else row[k]) for k in SWEEP_FIELDS})
