"""Octrees over quantized point clouds.

An octree here is the set of *non-empty* cells at every depth, each level
stored as a strictly increasing array of shuffled keys. Construction is a
sort + dedup of max-depth keys followed by repeated parent derivation, so
the result is a pure function of the occupied cell set.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import morton
from .errors import ConfigError, DataError
from .tensor import Tensor

OCTREE_MAGIC = b"OCTF"
OCTREE_VERSION = 1


@dataclass
class QuantizedCloud:
    """A point cloud normalized into the unit cube, plus octree depth.

    ``positions`` are unitless coordinates in [0, 1)^3; the voxel size at
    the octree's max depth is 1 / 2**depth of the cube edge. ``origin``
    and ``scale`` record how raw coordinates were normalized so outputs
    can be mapped back.
    """

    positions: np.ndarray
    depth: int
    colors: np.ndarray | None = None
    normals: np.ndarray | None = None
    origin: np.ndarray | None = None
    scale: float | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise DataError("positions must have shape (N, 3)")
        if not 1 <= self.depth <= morton.MAX_DEPTH:
            raise ConfigError(f"octree depth must be in [1, {morton.MAX_DEPTH}]")
        if self.positions.shape[0] == 0:
            raise DataError("empty point cloud")
        if not np.isfinite(self.positions).all():
            raise DataError("positions contain non-finite values")
        if self.positions.min() < 0.0 or self.positions.max() >= 1.0:
            raise DataError("positions must lie in [0, 1)^3")
        for name in ("colors", "normals"):
            attr = getattr(self, name)
            if attr is not None:
                attr = np.asarray(attr, dtype=np.float64)
                if attr.shape != self.positions.shape:
                    raise DataError(f"{name} must match positions in shape")
                setattr(self, name, attr)

    @property
    def num_points(self) -> int:
        return self.positions.shape[0]

    def cells(self) -> np.ndarray:
        """Integer cell coordinates of every point at the max depth."""
        scale = float(1 << self.depth)
        c = np.floor(self.positions * scale).astype(np.int64)
        # guard against float round-up at the open boundary
        return np.clip(c, 0, (1 << self.depth) - 1)


@dataclass
class Octree:
    """Per-depth sorted key arrays with parent/child index maps."""

    depth: int
    keys: list[np.ndarray | None]          # keys[l] for l in [1, depth]
    child_span: list[np.ndarray | None]    # (N_l, 2) ranges into keys[l+1]
    parent_index: list[np.ndarray | None]  # (N_l,) indices into keys[l-1]
    point_assignment: np.ndarray           # (P,) leaf index at max depth
    _coords: dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    def node_count(self, depth: int) -> int:
        self._check_depth(depth)
        return int(self.keys[depth].shape[0])

    def coords(self, depth: int) -> np.ndarray:
        """Decoded integer coordinates of the nodes at ``depth``, cached."""
        self._check_depth(depth)
        if depth not in self._coords:
            self._coords[depth] = morton.decode_cells(self.keys[depth], depth)
        return self._coords[depth]

    def find(self, depth: int, codes: np.ndarray) -> np.ndarray:
        """Indices of ``codes`` in keys[depth]; -1 where the cell is empty."""
        self._check_depth(depth)
        keys = self.keys[depth]
        codes = np.asarray(codes, dtype=np.uint64)
        pos = np.searchsorted(keys, codes)
        pos_c = np.minimum(pos, keys.shape[0] - 1)
        found = keys[pos_c] == codes
        return np.where(found, pos_c, -1).astype(np.int64)

    def _check_depth(self, depth: int) -> None:
        if not 1 <= depth <= self.depth:
            raise ValueError(f"depth {depth} out of [1, {self.depth}]")


def build_octree(cloud: QuantizedCloud) -> Octree:
    """Sort + dedup quantized cells, then derive every coarser level."""
    d = cloud.depth
    point_keys = morton.encode_cells(cloud.cells(), d)
    keys: list[np.ndarray | None] = [None] * (d + 1)
    keys[d] = np.unique(point_keys)
    for level in range(d - 1, 0, -1):
        keys[level] = np.unique(keys[level + 1] >> np.uint64(3))

    child_span: list[np.ndarray | None] = [None] * (d + 1)
    for level in range(1, d):
        lo = np.searchsorted(keys[level + 1], keys[level] << np.uint64(3))
        hi = np.searchsorted(keys[level + 1], (keys[level] + np.uint64(1)) << np.uint64(3))
        child_span[level] = np.stack([lo, hi], axis=1).astype(np.int64)

    parent_index: list[np.ndarray | None] = [None] * (d + 1)
    for level in range(2, d + 1):
        parent_index[level] = np.searchsorted(
            keys[level - 1], keys[level] >> np.uint64(3)
        ).astype(np.int64)

    assignment = np.searchsorted(keys[d], point_keys).astype(np.int64)
    return Octree(d, keys, child_span, parent_index, assignment)


def init_leaf_features(
    octree: Octree,
    cloud: QuantizedCloud,
    use_color: bool = False,
    use_normal: bool = False,
    use_position: bool = True,
) -> Tensor:
    """Per-leaf means of the selected point signals.

    Position channels are the mean point offset from the leaf voxel
    center, in voxel units; color and normal channels are plain means.
    Channel order is position, color, normal for whichever are enabled.
    """
    if use_color and cloud.colors is None:
        raise ConfigError("cloud has no colors")
    if use_normal and cloud.normals is None:
        raise ConfigError("cloud has no normals")
    if not (use_color or use_normal or use_position):
        raise ConfigError("no feature channels selected")

    parts = []
    if use_position:
        scale = float(1 << cloud.depth)
        frac = cloud.positions * scale - cloud.cells().astype(np.float64)
        parts.append(frac - 0.5)
    if use_color:
        parts.append(cloud.colors)
    if use_normal:
        parts.append(cloud.normals)
    signal = np.concatenate(parts, axis=1)

    n_leaf = octree.node_count(octree.depth)
    sums = np.zeros((n_leaf, signal.shape[1]), dtype=np.float64)
    np.add.at(sums, octree.point_assignment, signal)
    counts = np.bincount(octree.point_assignment, minlength=n_leaf).astype(np.float64)
    return Tensor(sums / counts[:, None])


def neighbor_indices(
    octree: Octree, depth: int, offsets: list[tuple[int, int, int]]
) -> np.ndarray:
    """Index matrix (N_depth, len(offsets)); -1 where the cell is empty."""
    coords = octree.coords(depth)
    n = coords.shape[0]
    lim = 1 << depth
    out = np.full((n, len(offsets)), -1, dtype=np.int64)
    for j, off in enumerate(offsets):
        shifted = coords + np.asarray(off, dtype=np.int64)
        valid = ((shifted >= 0) & (shifted < lim)).all(axis=1)
        if not valid.any():
            continue
        codes = morton.encode_cells(shifted[valid], depth)
        out[valid, j] = octree.find(depth, codes)
    return out


def filter_and_pad_count(n: int, k: int, d: int) -> int:
    """Smallest multiple of k*d that is >= n (0 stays 0)."""
    if n < 0 or k < 1 or d < 1:
        raise ValueError("need n >= 0, k >= 1, d >= 1")
    group = k * d
    return ((n + group - 1) // group) * group


def dump_octree(octree: Octree, path: str) -> None:
    """Write the per-depth key arrays in the binary interchange layout."""
    with open(path, "wb") as f:
        f.write(OCTREE_MAGIC)
        f.write(struct.pack("<II", OCTREE_VERSION, octree.depth))
        for level in range(1, octree.depth + 1):
            keys = octree.keys[level]
            f.write(struct.pack("<Q", keys.shape[0]))
            f.write(keys.astype("<u8").tobytes())


def load_octree_keys(path: str) -> tuple[int, list[np.ndarray | None]]:
    """Read a binary octree dump; returns (depth, keys-by-depth)."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != OCTREE_MAGIC:
            raise DataError(f"bad octree magic {magic!r}")
        version, depth = struct.unpack("<II", f.read(8))
        if version != OCTREE_VERSION:
            raise DataError(f"unsupported octree version {version}")
        keys: list[np.ndarray | None] = [None] * (depth + 1)
        for level in range(1, depth + 1):
            (count,) = struct.unpack("<Q", f.read(8))
            raw = f.read(8 * count)
            if len(raw) != 8 * count:
                raise DataError("truncated octree dump")
            keys[level] = np.frombuffer(raw, dtype="<u8").astype(np.uint64)
    return depth, keys
