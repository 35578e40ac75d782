"""ASCII point-cloud I/O: labeled XYZ text files and scored PLY files.

Formats handled here:

* XYZ: one point per line, ``x y z [label]``, ``#`` starts a comment line.
* PLY: ASCII 1.0, a single ``vertex`` element with at least ``x y z``
  properties, plus optional ``change_score`` (float) and ``change_class``
  (uchar) written by :func:`write_ply_scored`.

All functions are pure and operate on immutable inputs; no shared state.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

CLASS_UNCHANGED = 0
CLASS_NEW = 1
CLASS_DEMOLISHED = 2
VALID_CLASSES = (CLASS_UNCHANGED, CLASS_NEW, CLASS_DEMOLISHED)

# Coordinates are stored as float64 and emitted with at least 6 significant
# digits; these formats keep ASCII round-trips lossless for survey-scale data.
_COORD_FMT = "%.12g"
_SCORE_FMT = "%.9g"


class PointCloudFormatError(ValueError):
    """A point-cloud file violates the declared on-disk format."""


@dataclass
class PointCloud:
    """An ordered set of 3D points with optional per-point class labels.

    Attributes:
        xyz: (n, 3) float64 coordinates in meters.
        labels: optional (n,) integer class ids in {0, 1, 2}
            (unchanged / new / demolished), normally present only on the
            later epoch of a pair.
        epoch_tag: free-form provenance string (e.g. source filename).
    """

    xyz: np.ndarray
    labels: np.ndarray | None = None
    epoch_tag: str = ""

    def __post_init__(self) -> None:
        self.xyz = np.asarray(self.xyz, dtype=np.float64)
        if self.xyz.ndim != 2 or self.xyz.shape[1] != 3:
            raise ValueError(f"xyz must have shape (n, 3), got {self.xyz.shape}")
        if not np.isfinite(self.xyz).all():
            raise ValueError("point coordinates must be finite")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self.xyz),):
                raise ValueError(
                    f"labels length {self.labels.shape} does not match "
                    f"{len(self.xyz)} points"
                )
            bad = ~np.isin(self.labels, VALID_CLASSES)
            if bad.any():
                raise ValueError(
                    f"labels must be in {VALID_CLASSES}; "
                    f"found {self.labels[bad][0]}"
                )

    def __len__(self) -> int:
        return len(self.xyz)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box; ``min`` and ``max`` are (3,) arrays, min <= max."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "min", np.asarray(self.min, dtype=np.float64))
        object.__setattr__(self, "max", np.asarray(self.max, dtype=np.float64))
        if self.min.shape != (3,) or self.max.shape != (3,):
            raise ValueError("bounding box corners must be 3-vectors")
        if not (self.min <= self.max).all():
            raise ValueError(f"min {self.min} exceeds max {self.max}")

    def contains_xy(self, xy: np.ndarray) -> np.ndarray:
        """Boolean mask of (n, 2) points inside the box's closed XY extent."""
        return (
            (xy[:, 0] >= self.min[0])
            & (xy[:, 0] <= self.max[0])
            & (xy[:, 1] >= self.min[1])
            & (xy[:, 1] <= self.max[1])
        )

    def expanded_xy(self, margin: float) -> "BoundingBox":
        """Box grown by ``margin`` meters in x and y (z untouched)."""
        off = np.array([margin, margin, 0.0])
        return BoundingBox(self.min - off, self.max + off)


def bounding_box(cloud: PointCloud) -> BoundingBox:
    """Componentwise min/max over all points. Raises on an empty cloud."""
    if len(cloud) == 0:
        raise ValueError("cannot compute the bounding box of an empty cloud")
    return BoundingBox(cloud.xyz.min(axis=0), cloud.xyz.max(axis=0))


def read_xyz(path: str | os.PathLike, has_label: bool = False) -> PointCloud:
    """Load an ASCII XYZ file, optionally with a per-point label column.

    Each non-empty, non-comment line must carry exactly 3 (or 4 when
    ``has_label``) whitespace-separated numeric fields.

    Raises:
        PointCloudFormatError: malformed line, non-finite coordinate, or
            out-of-range label, always with the 1-based line number; also
            when the file contains no points.
    """
    want = 4 if has_label else 3
    rows: list[tuple[float, float, float]] = []
    labels: list[int] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            fields = stripped.split()
            if len(fields) != want:
                raise PointCloudFormatError(
                    f"{path}:{lineno}: expected {want} fields, got {len(fields)}"
                )
            try:
                x, y, z = float(fields[0]), float(fields[1]), float(fields[2])
            except ValueError as exc:
                raise PointCloudFormatError(
                    f"{path}:{lineno}: non-numeric coordinate: {exc}"
                ) from None
            if not (np.isfinite(x) and np.isfinite(y) and np.isfinite(z)):
                raise PointCloudFormatError(
                    f"{path}:{lineno}: non-finite coordinate"
                )
            if has_label:
                try:
                    label = int(fields[3])
                except ValueError:
                    raise PointCloudFormatError(
                        f"{path}:{lineno}: label {fields[3]!r} is not an integer"
                    ) from None
                if label not in VALID_CLASSES:
                    raise PointCloudFormatError(
                        f"{path}:{lineno}: label {label} outside {VALID_CLASSES}"
                    )
                labels.append(label)
            rows.append((x, y, z))
    if not rows:
        raise PointCloudFormatError(f"{path}: no points found")
    return PointCloud(
        xyz=np.array(rows, dtype=np.float64),
        labels=np.array(labels, dtype=np.int64) if has_label else None,
        epoch_tag=os.path.basename(str(path)),
    )


def write_xyz(path: str | os.PathLike, cloud: PointCloud) -> None:
    """Write ``x y z [label]`` lines; the label column appears when present."""
    with open(path, "w", encoding="utf-8") as fh:
        if cloud.labels is None:
            for x, y, z in cloud.xyz:
                fh.write(f"{_COORD_FMT % x} {_COORD_FMT % y} {_COORD_FMT % z}\n")
        else:
            for (x, y, z), lab in zip(cloud.xyz, cloud.labels):
                fh.write(
                    f"{_COORD_FMT % x} {_COORD_FMT % y} {_COORD_FMT % z} {lab}\n"
                )


def write_ply_scored(
    path: str | os.PathLike,
    cloud: PointCloud,
    scores: np.ndarray,
    classes: np.ndarray,
) -> None:
    """Emit an ASCII PLY with per-vertex change score and class.

    Vertex properties: ``x y z`` (double), ``change_score`` (float, may be
    ``inf`` for unreached points), ``change_class`` (uchar in {0, 1, 2}).
    Output round-trips through :func:`read_ply`.
    """
    scores = np.asarray(scores, dtype=np.float64)
    classes = np.asarray(classes, dtype=np.int64)
    n = len(cloud)
    if scores.shape != (n,) or classes.shape != (n,):
        raise ValueError(
            f"scores {scores.shape} and classes {classes.shape} must both "
            f"have length {n}"
        )
    if not np.isin(classes, VALID_CLASSES).all():
        raise ValueError(f"classes must be in {VALID_CLASSES}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("ply\n")
        fh.write("format ascii 1.0\n")
        fh.write(f"element vertex {n}\n")
        fh.write("property double x\n")
        fh.write("property double y\n")
        fh.write("property double z\n")
        fh.write("property float change_score\n")
        fh.write("property uchar change_class\n")
        fh.write("end_header\n")
        for (x, y, z), s, c in zip(cloud.xyz, scores, classes):
            fh.write(
                f"{_COORD_FMT % x} {_COORD_FMT % y} {_COORD_FMT % z} "
                f"{_SCORE_FMT % s} {c}\n"
            )


def read_ply(
    path: str | os.PathLike,
) -> tuple[PointCloud, np.ndarray | None, np.ndarray | None]:
    """Read an ASCII PLY vertex cloud.

    Returns the cloud plus the ``change_score`` / ``change_class`` columns
    when the file carries them, else ``None`` for each.

    Raises:
        PointCloudFormatError: missing/invalid header, binary encoding,
            non-vertex elements, or a vertex count that does not match the
            data section.
    """
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline().strip()
        if first != "ply":
            raise PointCloudFormatError(f"{path}: missing 'ply' header")
        n_vertices: int | None = None
        prop_names: list[str] = []
        saw_format = False
        in_vertex_element = False
        for line in fh:
            tokens = line.strip().split()
            if not tokens:
                continue
            keyword = tokens[0]
            if keyword == "comment":
                continue
            if keyword == "format":
                if tokens[1:] != ["ascii", "1.0"]:
                    raise PointCloudFormatError(
                        f"{path}: only 'format ascii 1.0' is supported, "
                        f"got {' '.join(tokens[1:])!r}"
                    )
                saw_format = True
            elif keyword == "element":
                if tokens[1] != "vertex" or n_vertices is not None:
                    raise PointCloudFormatError(
                        f"{path}: only a single 'vertex' element is supported"
                    )
                n_vertices = int(tokens[2])
                in_vertex_element = True
            elif keyword == "property":
                if not in_vertex_element:
                    raise PointCloudFormatError(
                        f"{path}: property declared outside the vertex element"
                    )
                prop_names.append(tokens[-1])
            elif keyword == "end_header":
                break
            else:
                raise PointCloudFormatError(
                    f"{path}: unsupported header keyword {keyword!r}"
                )
        else:
            raise PointCloudFormatError(f"{path}: unterminated header")
        if not saw_format or n_vertices is None:
            raise PointCloudFormatError(f"{path}: incomplete header")
        for name in ("x", "y", "z"):
            if name not in prop_names:
                raise PointCloudFormatError(f"{path}: missing property {name!r}")

        data_rows: list[list[float]] = []
        for line in fh:
            stripped = line.strip()
            if not stripped:
                continue
            fields = stripped.split()
            if len(fields) != len(prop_names):
                raise PointCloudFormatError(
                    f"{path}: vertex row has {len(fields)} values, "
                    f"expected {len(prop_names)}"
                )
            data_rows.append([float(v) for v in fields])
        if len(data_rows) != n_vertices:
            raise PointCloudFormatError(
                f"{path}: header declares {n_vertices} vertices, "
                f"found {len(data_rows)} data rows"
            )

    table = np.array(data_rows, dtype=np.float64).reshape(n_vertices, len(prop_names))
    col = {name: i for i, name in enumerate(prop_names)}
    xyz = table[:, [col["x"], col["y"], col["z"]]]
    if not np.isfinite(xyz).all():
        raise PointCloudFormatError(f"{path}: non-finite vertex coordinate")
    scores = table[:, col["change_score"]] if "change_score" in col else None
    classes = None
    if "change_class" in col:
        classes = table[:, col["change_class"]].astype(np.int64)
        if not np.isin(classes, VALID_CLASSES).all():
            raise PointCloudFormatError(
                f"{path}: change_class values outside {VALID_CLASSES}"
            )
    cloud = PointCloud(xyz=xyz, epoch_tag=os.path.basename(str(path)))
    return cloud, scores, classes
