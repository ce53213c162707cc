"""ASCII point-cloud readers/writers, normalization, and augmentation.

Supported formats: whitespace-separated XYZ lines (``x y z [r g b]
[nx ny nz]``, colors as floats in [0, 1]) and ASCII PLY with the same
properties (uchar color properties are rescaled from [0, 255]).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .octree import QuantizedCloud


@dataclass
class RawCloud:
    positions: np.ndarray
    colors: np.ndarray | None = None
    normals: np.ndarray | None = None


def read_points(path: str) -> RawCloud:
    if str(path).lower().endswith(".ply"):
        return _read_ply(path)
    return _read_xyz(path)


def _read_xyz(path: str) -> RawCloud:
    rows = []
    width = None
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            fields = text.split()
            if width is None:
                width = len(fields)
                if width not in (3, 6, 9):
                    raise DataError(
                        f"{path}:{lineno}: expected 3, 6, or 9 columns, got {width}")
            elif len(fields) != width:
                raise DataError(f"{path}:{lineno}: inconsistent column count")
            try:
                rows.append([float(v) for v in fields])
            except ValueError:
                raise DataError(f"{path}:{lineno}: unparseable number") from None
    if not rows:
        raise DataError(f"{path}: no points")
    data = np.asarray(rows, dtype=np.float64)
    if not np.isfinite(data[:, :3]).all():
        raise DataError(f"{path}: non-finite coordinates")
    colors = data[:, 3:6] if data.shape[1] >= 6 else None
    normals = data[:, 6:9] if data.shape[1] == 9 else None
    return RawCloud(data[:, :3], colors, normals)


_PLY_PROPS = {
    "x": 0, "y": 1, "z": 2,
    "red": 3, "green": 4, "blue": 5,
    "nx": 6, "ny": 7, "nz": 8,
}


def _read_ply(path: str) -> RawCloud:
    with open(path) as f:
        if f.readline().strip() != "ply":
            raise DataError(f"{path}: not a PLY file")
        if "ascii" not in f.readline():
            raise DataError(f"{path}: only ascii PLY is supported")
        count = None
        props: list[tuple[str, str]] = []
        in_vertex = False
        for line in f:
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "element":
                in_vertex = tok[1] == "vertex"
                if in_vertex:
                    count = int(tok[2])
            elif tok[0] == "property" and in_vertex:
                props.append((tok[2], tok[1]))
            elif tok[0] == "end_header":
                break
        if count is None:
            raise DataError(f"{path}: no vertex element")
        names = [p[0] for p in props]
        if not all(c in names for c in ("x", "y", "z")):
            raise DataError(f"{path}: PLY lacks x/y/z properties")
        data = np.full((count, 9), np.nan)
        have = np.zeros(9, dtype=bool)
        for col, (name, typ) in enumerate(props):
            if name in _PLY_PROPS:
                have[_PLY_PROPS[name]] = True
        for i in range(count):
            line = f.readline()
            if not line:
                raise DataError(f"{path}: truncated vertex data at row {i}")
            fields = line.split()
            if len(fields) != len(props):
                raise DataError(f"{path}: bad vertex row {i}")
            for col, (name, typ) in enumerate(props):
                if name not in _PLY_PROPS:
                    continue
                v = float(fields[col])
                if typ in ("uchar", "uint8"):
                    v /= 255.0
                data[i, _PLY_PROPS[name]] = v
    positions = data[:, :3]
    if not np.isfinite(positions).all():
        raise DataError(f"{path}: non-finite coordinates")
    colors = data[:, 3:6] if have[3:6].all() else None
    normals = data[:, 6:9] if have[6:9].all() else None
    return RawCloud(positions, colors, normals)


def write_points(path: str, cloud: RawCloud) -> None:
    if str(path).lower().endswith(".ply"):
        _write_ply(path, cloud)
    else:
        _write_xyz(path, cloud)


def _row_fields(cloud: RawCloud, i: int) -> list[float]:
    fields = list(cloud.positions[i])
    if cloud.colors is not None:
        fields += list(cloud.colors[i])
    if cloud.normals is not None:
        fields += list(cloud.normals[i])
    return fields


def _write_xyz(path: str, cloud: RawCloud) -> None:
    if cloud.normals is not None and cloud.colors is None:
        raise ConfigError("xyz format cannot store normals without colors")
    with open(path, "w") as f:
        for i in range(cloud.positions.shape[0]):
            f.write(" ".join(f"{v:.9g}" for v in _row_fields(cloud, i)) + "\n")


def _write_ply(path: str, cloud: RawCloud) -> None:
    names = ["x", "y", "z"]
    if cloud.colors is not None:
        names += ["red", "green", "blue"]
    if cloud.normals is not None:
        names += ["nx", "ny", "nz"]
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {cloud.positions.shape[0]}\n")
        for name in names:
            f.write(f"property float {name}\n")
        f.write("end_header\n")
        for i in range(cloud.positions.shape[0]):
            f.write(" ".join(f"{v:.9g}" for v in _row_fields(cloud, i)) + "\n")


def normalize_cloud(raw: RawCloud, depth: int,
                    scale: float | None = None) -> QuantizedCloud:
    """Map raw coordinates into [0, 1)^3.

    ``scale`` is the voxel edge length in input units (the cube spans
    scale * 2**depth); when omitted the bounding box is fit to the cube.
    """
    pos = raw.positions
    origin = pos.min(axis=0)
    if scale is None:
        extent = float((pos - origin).max())
        extent = extent if extent > 0 else 1.0
        unit = (pos - origin) / (extent * (1 + 1e-9))
    else:
        if scale <= 0:
            raise ConfigError("scale must be positive")
        span = scale * (1 << depth)
        unit = (pos - origin) / span
        if unit.max() >= 1.0:
            raise DataError(
                f"cloud spans more than scale * 2^depth = {span}; "
                "increase depth or scale")
    colors = raw.colors
    if colors is not None:
        colors = np.clip(colors, 0.0, 1.0)
    return QuantizedCloud(unit, depth, colors=colors, normals=raw.normals,
                          origin=origin, scale=scale)


def load_point_cloud(path: str, depth: int,
                     scale: float | None = None) -> QuantizedCloud:
    return normalize_cloud(read_points(path), depth, scale)


@dataclass
class AugmentConfig:
    rotation_deg: tuple[float, float] = (-180.0, 180.0)
    scale: tuple[float, float] = (0.75, 1.25)
    translation: tuple[float, float] = (-0.1, 0.1)

    def __post_init__(self):
        for lo, hi in (self.rotation_deg, self.scale, self.translation):
            if hi < lo:
                raise ConfigError("augment ranges must satisfy lo <= hi")
        if self.scale[0] <= 0:
            raise ConfigError("scale range must be positive")


def augment(cloud: QuantizedCloud, ops: AugmentConfig, seed: int) -> QuantizedCloud:
    """Random upright-axis rotation, uniform scale, and translation.

    Transforms act about the cube center; normals rotate with positions;
    results are clamped back into [0, 1)^3. Deterministic per seed.
    """
    rng = np.random.default_rng(seed)
    angle = math.radians(rng.uniform(*ops.rotation_deg))
    factor = rng.uniform(*ops.scale)
    shift = rng.uniform(ops.translation[0], ops.translation[1], size=3)

    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    center = np.full(3, 0.5)
    pos = (cloud.positions - center) @ rot.T * factor + center + shift
    pos = np.clip(pos, 0.0, np.nextafter(1.0, 0.0))
    normals = cloud.normals @ rot.T if cloud.normals is not None else None
    return QuantizedCloud(pos, cloud.depth, colors=cloud.colors, normals=normals,
                          origin=cloud.origin, scale=cloud.scale)
