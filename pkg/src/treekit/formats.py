"""Readers and writers for the PTC v1 / xyz_csv point formats and the PRD v1 prediction sidecar."""

from __future__ import annotations

__all__ = [
    "CloudFormatError",
    "CloudValidationError",
    "load_cloud",
    "save_cloud",
    "load_predictions",
    "save_predictions",
]

from pathlib import Path
from typing import TYPE_CHECKING, Iterator, List, Literal, Tuple, Union

import numpy as np

from .cloud import LabeledPointCloud, validate

if TYPE_CHECKING:
    from .grouping import PointPredictions

PathLike = Union[str, Path]
CloudFormat = Literal["ptc", "xyz_csv"]

PTC_MAGIC = "#PTC 1"
PTC_FIELDS = "#fields x y z semantic instance"
PRD_MAGIC = "#PRD 1"


class CloudFormatError(ValueError):
    """A file could not be parsed. ``line`` is the 1-based line number, if known."""

    def __init__(self, message: str, path: PathLike = "", line: int = 0):
        location = f"{path}:{line}" if line else str(path)
        super().__init__(f"{location}: {message}" if location else message)
        self.path = str(path)
        self.line = line


class CloudValidationError(CloudFormatError):
    """A file parsed but violates a point-record invariant."""


def _format_float(value: float) -> str:
    # repr gives the shortest string that round-trips to the same double.
    return repr(float(value))


def _data_lines(path: Path, text: str) -> Iterator[Tuple[int, str]]:
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        yield lineno, line


def _guess_format(path: Path) -> CloudFormat:
    return "xyz_csv" if path.suffix.lower() in (".csv", ".xyz") else "ptc"


def load_cloud(path: PathLike, format: CloudFormat | None = None, source_tag: str = "") -> LabeledPointCloud:
    """
    Reads a labeled point cloud.

    Args:
        path: File to read.
        format: ``"ptc"`` or ``"xyz_csv"``. Inferred from the file suffix when omitted (``.csv``/``.xyz`` select
            ``xyz_csv``, anything else PTC).
        source_tag: Provenance stored on the returned cloud. Defaults to the file name.

    Raises:
        CloudFormatError: If a line cannot be parsed, or the PTC header is missing.
        CloudValidationError: If a parsed record violates a point invariant (the message names the line).
        OSError: If the file cannot be read.
    """

    path = Path(path)
    fmt = format or _guess_format(path)
    text = path.read_text(encoding="utf-8")

    if fmt == "ptc":
        first = text.split("\n", 1)[0].strip()
        if first != PTC_MAGIC:
            raise CloudFormatError(f"expected header {PTC_MAGIC!r}, found {first!r}", path, 1)
        separator = None
    elif fmt == "xyz_csv":
        separator = ","
    else:
        raise ValueError(f"unknown cloud format {fmt!r}")

    xyz: List[Tuple[float, float, float]] = []
    semantic: List[int] = []
    instance: List[int] = []
    linenos: List[int] = []
    for lineno, line in _data_lines(path, text):
        fields = line.split(separator)
        if len(fields) != 5:
            raise CloudFormatError(f"expected 5 fields, found {len(fields)}", path, lineno)
        try:
            x, y, z = (float(v) for v in fields[:3])
            sem, inst = int(fields[3]), int(fields[4])
        except ValueError as error:
            raise CloudFormatError(f"cannot parse record {line!r} ({error})", path, lineno) from None
        xyz.append((x, y, z))
        semantic.append(sem)
        instance.append(inst)
        linenos.append(lineno)

    cloud = LabeledPointCloud(
        np.array(xyz, dtype=np.float64).reshape(-1, 3),
        np.array(semantic, dtype=np.int64),
        np.array(instance, dtype=np.int64),
        source_tag=source_tag or path.name,
    )
    violations = validate(cloud)
    if violations:
        first_violation = violations[0]
        more = f" (and {len(violations) - 1} more)" if len(violations) > 1 else ""
        raise CloudValidationError(
            f"{first_violation.message}{more}", path, linenos[first_violation.index]
        )
    return cloud


def save_cloud(cloud: LabeledPointCloud, path: PathLike, format: CloudFormat | None = None) -> None:
    """Writes ``cloud`` in input order; coordinates use the shortest exactly round-tripping decimal form."""
    path = Path(path)
    fmt = format or _guess_format(path)
    if fmt == "ptc":
        separator, header = " ", [PTC_MAGIC, PTC_FIELDS]
    elif fmt == "xyz_csv":
        separator, header = ",", []
    else:
        raise ValueError(f"unknown cloud format {fmt!r}")

    lines = list(header)
    for (x, y, z), sem, inst in zip(cloud.xyz.tolist(), cloud.semantic.tolist(), cloud.instance.tolist()):
        lines.append(separator.join((_format_float(x), _format_float(y), _format_float(z), str(sem), str(inst))))
    path.write_text("\n".join(lines) + "\n" if lines else "", encoding="utf-8")


def load_predictions(path: PathLike) -> "PointPredictions":
    """Reads a PRD v1 sidecar: ``p ox oy oz e1 e2 e3 e4 e5`` per point, aligned with the cloud file."""
    from .grouping import PointPredictions

    path = Path(path)
    text = path.read_text(encoding="utf-8")
    first = text.split("\n", 1)[0].strip()
    if first != PRD_MAGIC:
        raise CloudFormatError(f"expected header {PRD_MAGIC!r}, found {first!r}", path, 1)
    rows: List[List[float]] = []
    for lineno, line in _data_lines(path, text):
        fields = line.split()
        if len(fields) != 9:
            raise CloudFormatError(f"expected 9 fields, found {len(fields)}", path, lineno)
        try:
            rows.append([float(v) for v in fields])
        except ValueError as error:
            raise CloudFormatError(f"cannot parse record {line!r} ({error})", path, lineno) from None
    data = np.array(rows, dtype=np.float64).reshape(-1, 9)
    return PointPredictions(data[:, 0], data[:, 1:4], data[:, 4:9])


def save_predictions(preds: "PointPredictions", path: PathLike) -> None:
    lines = [PRD_MAGIC]
    stacked = np.column_stack([preds.semantic_prob, preds.offset, preds.embedding])
    for row in stacked.tolist():
        lines.append(" ".join(_format_float(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
