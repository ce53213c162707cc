"""Sparse convolutions over octree node arrays.

Every variant is a gather + contraction over a fixed tap footprint:

* stride 1: anchored at each node of the input depth, output at the same
  nodes;
* stride 2: anchored at the even-coordinate child (2x the parent coords),
  output at the non-empty parents one depth up.

Kernel 3 uses the 27 offsets in {-1,0,1}^3, kernel 2 the 8 offsets in
{0,1}^3, both ordered with dz fastest (z-order over offsets). Absent
neighbors contribute zero, matching dense zero padding.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import morton
from .errors import ConfigError, ShapeError
from .octree import Octree, neighbor_indices
from .tensor import (
    BatchNormState,
    Tensor,
    batch_norm,
    from_op,
    relu,
    trunc_normal,
)


def kernel_offsets(kernel: int) -> list[tuple[int, int, int]]:
    if kernel == 3:
        rng = (-1, 0, 1)
    elif kernel == 2:
        rng = (0, 1)
    else:
        raise ValueError(f"kernel must be 2 or 3, got {kernel}")
    return list(itertools.product(rng, rng, rng))


@dataclass
class ConvSpec:
    """One convolution: footprint, channel map, and its weight tensor."""

    kernel: int
    stride: int
    in_channels: int
    out_channels: int
    weights: Tensor
    depthwise: bool = False

    def __post_init__(self):
        if self.kernel not in (2, 3):
            raise ConfigError(f"kernel must be 2 or 3, got {self.kernel}")
        if self.stride not in (1, 2):
            raise ConfigError(f"stride must be 1 or 2, got {self.stride}")
        taps = self.kernel**3
        if self.depthwise:
            if self.in_channels != self.out_channels:
                raise ConfigError("depthwise conv needs in_channels == out_channels")
            expect = (taps, self.in_channels)
        else:
            expect = (taps, self.in_channels, self.out_channels)
        if self.weights.shape != expect:
            raise ShapeError(f"conv weights must be {expect}, got {self.weights.shape}")

    @classmethod
    def init(cls, kernel: int, stride: int, in_channels: int, out_channels: int,
             rng: np.random.Generator, depthwise: bool = False, std: float = 0.02,
             dtype=None) -> "ConvSpec":
        taps = kernel**3
        shape = (taps, in_channels) if depthwise else (taps, in_channels, out_channels)
        return cls(kernel, stride, in_channels, out_channels,
                   trunc_normal(shape, std, rng, dtype), depthwise)


def conv_indices(octree: Octree, depth: int, kernel: int, stride: int) -> np.ndarray:
    """Gather table (N_out, taps) into the depth-``depth`` node array."""
    if not 1 <= depth <= octree.depth:
        raise ValueError(f"depth {depth} out of [1, {octree.depth}]")
    offsets = kernel_offsets(kernel)
    if stride == 1:
        return neighbor_indices(octree, depth, offsets)
    if depth < 2:
        raise ValueError("stride-2 convolution needs depth >= 2")
    anchors = 2 * octree.coords(depth - 1)
    lim = 1 << depth
    n = anchors.shape[0]
    out = np.full((n, len(offsets)), -1, dtype=np.int64)
    for j, off in enumerate(offsets):
        shifted = anchors + np.asarray(off, dtype=np.int64)
        valid = ((shifted >= 0) & (shifted < lim)).all(axis=1)
        if not valid.any():
            continue
        codes = morton.encode_cells(shifted[valid], depth)
        out[valid, j] = octree.find(depth, codes)
    return out


def gathered_conv(x: Tensor, idx: np.ndarray, weights: Tensor,
                  depthwise: bool) -> Tensor:
    """Contraction over a precomputed gather table, as a single taped op."""
    present = idx >= 0
    xg = x.data[np.clip(idx, 0, None)]
    xg[~present] = 0.0  # (N_out, taps, C_in)
    if depthwise:
        out_data = np.einsum("ntc,tc->nc", xg, weights.data, optimize=True)
    else:
        out_data = np.einsum("ntc,tco->no", xg, weights.data, optimize=True)

    def vjp(g):
        if depthwise:
            gw = np.einsum("ntc,nc->tc", xg, g, optimize=True)
            gxg = g[:, None, :] * weights.data[None, :, :]
        else:
            gw = np.einsum("ntc,no->tco", xg, g, optimize=True)
            gxg = np.einsum("no,tco->ntc", g, weights.data, optimize=True)
        gx = np.zeros(x.shape, dtype=g.dtype)
        np.add.at(gx, idx[present], gxg[present])
        return gx, gw.astype(weights.dtype)

    return from_op(out_data, (x, weights), vjp)


def octree_conv(x: Tensor, octree: Octree, depth: int, spec: ConvSpec) -> Tensor:
    """Sparse convolution at ``depth``; stride 2 emits depth - 1 features."""
    n_in = octree.node_count(depth)
    if x.shape[0] != n_in:
        raise ShapeError(f"x has {x.shape[0]} rows, depth {depth} has {n_in} nodes")
    if x.shape[1] != spec.in_channels:
        raise ShapeError(f"x has {x.shape[1]} channels, spec wants {spec.in_channels}")
    idx = conv_indices(octree, depth, spec.kernel, spec.stride)
    return gathered_conv(x, idx, spec.weights, spec.depthwise)


def depthwise_conv(x: Tensor, octree: Octree, depth: int, kernel: Tensor) -> Tensor:
    """3^3 depthwise stencil used by the conditional positional encoding."""
    if kernel.shape != (27, x.shape[1]):
        raise ShapeError(f"depthwise kernel must be (27, {x.shape[1]})")
    idx = conv_indices(octree, depth, kernel=3, stride=1)
    return gathered_conv(x, idx, kernel, depthwise=True)


@dataclass
class ConvBnParams:
    conv: ConvSpec
    bn: BatchNormState


@dataclass
class EmbeddingParams:
    """Five conv/BN/ReLU modules, kernels {3,2,3,2,3}, strides {1,2,1,2,1}."""

    modules: list[ConvBnParams] = field(default_factory=list)

    KERNELS = (3, 2, 3, 2, 3)
    STRIDES = (1, 2, 1, 2, 1)

    @classmethod
    def init(cls, in_channels: int, channels: int, rng: np.random.Generator,
             dtype=None) -> "EmbeddingParams":
        modules = []
        c_in = in_channels
        for kernel, stride in zip(cls.KERNELS, cls.STRIDES):
            conv = ConvSpec.init(kernel, stride, c_in, channels, rng, dtype=dtype)
            modules.append(ConvBnParams(conv, BatchNormState.create(channels, dtype=dtype)))
            c_in = channels
        return cls(modules)


def embedding_stack(x: Tensor, octree: Octree, depth: int,
                    params: EmbeddingParams, training: bool) -> Tensor:
    """Project leaf features to the working width and downsample 4x."""
    if depth < 3:
        raise ConfigError("embedding needs an octree at least 3 levels deep")
    cur_depth = depth
    for mod in params.modules:
        x = octree_conv(x, octree, cur_depth, mod.conv)
        if mod.conv.stride == 2:
            cur_depth -= 1
        x = relu(batch_norm(x, mod.bn, training))
    return x


@dataclass
class DownsampleParams:
    conv: ConvSpec  # kernel 2, stride 2
    bn: BatchNormState

    @classmethod
    def init(cls, in_channels: int, out_channels: int, rng: np.random.Generator,
             dtype=None) -> "DownsampleParams":
        conv = ConvSpec.init(2, 2, in_channels, out_channels, rng, dtype=dtype)
        return cls(conv, BatchNormState.create(out_channels, dtype=dtype))


def downsample(x: Tensor, octree: Octree, depth: int, params: DownsampleParams,
               training: bool) -> Tensor:
    """Kernel-2 stride-2 conv + BN; output lives at depth - 1."""
    x = octree_conv(x, octree, depth, params.conv)
    return batch_norm(x, params.bn, training)
