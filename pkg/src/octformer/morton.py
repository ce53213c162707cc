"""Shuffled keys: 3D z-order (Morton) codes for octree nodes.

A key interleaves coordinate bits as ``x1 y1 z1 x2 y2 z2 ... xd yd zd``
with x in the most significant slot of each triple, so integer order on
keys is z-order on cells and the eight children of any node occupy one
contiguous run of eight consecutive codes.

Scalar operations work on :class:`Key` values; the ``*_cells`` functions
are vectorized over numpy arrays for bulk octree construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# 3 * 21 = 63 bits: keys always fit one 64-bit word.
MAX_DEPTH = 21

_U = np.uint64
_MASK21 = _U(0x1FFFFF)
_S1 = _U(0x1F00000000FFFF)
_S2 = _U(0x1F0000FF0000FF)
_S3 = _U(0x100F00F00F00F00F)
_S4 = _U(0x10C30C30C30C30C3)
_S5 = _U(0x1249249249249249)


def _check_depth(depth: int) -> None:
    if not 1 <= depth <= MAX_DEPTH:
        raise ValueError(f"depth must be in [1, {MAX_DEPTH}], got {depth}")


@dataclass(frozen=True, slots=True)
class Key:
    """A shuffled key: interleaved-bit code plus the depth it lives at."""

    code: int
    depth: int

    def __post_init__(self):
        _check_depth(self.depth)
        if not 0 <= self.code < 8**self.depth:
            raise ValueError(
                f"code {self.code} out of range for depth {self.depth}"
            )


def encode(x: int, y: int, z: int, depth: int) -> Key:
    """Interleave coordinate bits into a shuffled key (x in the high slot)."""
    _check_depth(depth)
    lim = 1 << depth
    if not (0 <= x < lim and 0 <= y < lim and 0 <= z < lim):
        raise ValueError(f"coordinate ({x}, {y}, {z}) out of [0, {lim})")
    code = 0
    for j in range(depth):
        code |= ((x >> j) & 1) << (3 * j + 2)
        code |= ((y >> j) & 1) << (3 * j + 1)
        code |= ((z >> j) & 1) << (3 * j)
    return Key(code, depth)


def decode(key: Key) -> tuple[int, int, int]:
    """Exact inverse of :func:`encode`."""
    x = y = z = 0
    for j in range(key.depth):
        x |= ((key.code >> (3 * j + 2)) & 1) << j
        y |= ((key.code >> (3 * j + 1)) & 1) << j
        z |= ((key.code >> (3 * j)) & 1) << j
    return x, y, z


def parent_key(key: Key) -> Key:
    """Drop the lowest coordinate triple; depth decreases by one."""
    if key.depth < 2:
        raise ValueError("a depth-1 node has no parent at node level")
    return Key(key.code >> 3, key.depth - 1)


def child_keys(key: Key) -> list[Key]:
    """The eight children: one contiguous code run at depth + 1."""
    if key.depth >= MAX_DEPTH:
        raise ValueError(f"children would exceed max depth {MAX_DEPTH}")
    base = key.code << 3
    return [Key(base + o, key.depth + 1) for o in range(8)]


def neighbor_key(key: Key, dx: int, dy: int, dz: int) -> Key | None:
    """Key of the cell offset by (dx, dy, dz); None when out of bounds."""
    x, y, z = decode(key)
    x, y, z = x + dx, y + dy, z + dz
    lim = 1 << key.depth
    if not (0 <= x < lim and 0 <= y < lim and 0 <= z < lim):
        return None
    return encode(x, y, z, key.depth)


def _spread(v: np.ndarray) -> np.ndarray:
    v = v & _MASK21
    v = (v | (v << _U(32))) & _S1
    v = (v | (v << _U(16))) & _S2
    v = (v | (v << _U(8))) & _S3
    v = (v | (v << _U(4))) & _S4
    v = (v | (v << _U(2))) & _S5
    return v


def _compact(v: np.ndarray) -> np.ndarray:
    v = v & _S5
    v = (v | (v >> _U(2))) & _S4
    v = (v | (v >> _U(4))) & _S3
    v = (v | (v >> _U(8))) & _S2
    v = (v | (v >> _U(16))) & _S1
    v = (v | (v >> _U(32))) & _MASK21
    return v


def encode_cells(cells: np.ndarray, depth: int) -> np.ndarray:
    """Vectorized encode of integer cells, shape (N, 3) -> uint64 codes."""
    _check_depth(depth)
    cells = np.asarray(cells)
    lim = 1 << depth
    if cells.size and (cells.min() < 0 or cells.max() >= lim):
        raise ValueError(f"cell coordinates out of [0, {lim})")
    c = cells.astype(np.uint64)
    return (
        (_spread(c[..., 0]) << _U(2))
        | (_spread(c[..., 1]) << _U(1))
        | _spread(c[..., 2])
    )


def decode_cells(codes: np.ndarray, depth: int) -> np.ndarray:
    """Vectorized decode: uint64 codes -> integer cells of shape (N, 3)."""
    _check_depth(depth)
    codes = np.asarray(codes, dtype=np.uint64)
    x = _compact(codes >> _U(2))
    y = _compact(codes >> _U(1))
    z = _compact(codes)
    return np.stack([x, y, z], axis=-1).astype(np.int64)
