"""Fixed-point-count window partition and windowed multi-head attention.

Features sorted along the z-order curve are padded to a multiple of K*D,
then regrouped into windows of exactly K tokens. Dilation D > 1 takes
every D-th token via a reshape-transpose, so every window still costs the
same K^2 attention. Padded slots are masked out of the softmax, which
keeps total complexity O(K^2 * N / K) — linear in N.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .octconv import depthwise_conv
from .octree import Octree, filter_and_pad_count
from .tensor import (
    BatchNormState,
    Tensor,
    add,
    as_tensor,
    assert_finite,
    batch_norm,
    gather_rows,
    matmul,
    mul,
    reshape,
    softmax,
    transpose,
    trunc_normal,
)


@dataclass(frozen=True)
class PartitionPlan:
    """Reversible pad + regroup of N tokens into B windows of exactly K.

    ``layout`` maps each padded-sequence position p to its flat window
    slot w*k + s; it is a bijection on [0, padded). ``mask`` marks the
    padded positions (sequence order). For d == 1 the layout is the
    identity, i.e. plain chunking.
    """

    n: int
    k: int
    d: int
    padded: int
    b: int
    mask: np.ndarray
    layout: np.ndarray

    def window_sources(self) -> np.ndarray:
        """For each flat window slot, the sequence position feeding it."""
        return np.argsort(self.layout, kind="stable")

    def gather_index(self) -> np.ndarray:
        """Sources with padded positions replaced by the -1 sentinel."""
        src = self.window_sources()
        return np.where(src < self.n, src, -1)

    def pad_by_slot(self) -> np.ndarray:
        """(b, k) boolean: which window slots hold padding."""
        return (self.window_sources() >= self.n).reshape(self.b, self.k)

    def window_of_position(self) -> np.ndarray:
        """Window id of every padded-sequence position."""
        return self.layout // self.k


def make_plan(n: int, k: int, d: int, padded: int | None = None) -> PartitionPlan:
    """Build the partition for n tokens, point number k, dilation d.

    ``padded`` defaults to the minimal multiple of k*d covering n; larger
    multiples are accepted (the extra windows are fully masked), which the
    padding-invariance tests exploit.
    """
    if k < 1 or d < 1 or n < 0:
        raise ValueError("need k >= 1, d >= 1, n >= 0")
    minimal = filter_and_pad_count(n, k, d)
    if padded is None:
        padded = minimal
    elif padded < minimal or padded % (k * d) != 0:
        raise ValueError(f"padded must be a multiple of {k * d} and >= {minimal}")
    p = np.arange(padded, dtype=np.int64)
    span = p // (k * d)
    i = (p % (k * d)) // d
    j = p % d
    layout = (span * d + j) * k + i
    mask = p >= n
    return PartitionPlan(n=n, k=k, d=d, padded=padded, b=padded // k,
                         mask=mask, layout=layout)


def apply_plan(x: Tensor, plan: PartitionPlan) -> Tensor:
    """(N, C) -> (B, K, C); padded slots become zero rows."""
    x = as_tensor(x)
    if x.shape[0] != plan.n:
        raise ShapeError(f"x has {x.shape[0]} rows, plan expects {plan.n}")
    windows = gather_rows(x, plan.gather_index())
    return reshape(windows, (plan.b, plan.k, x.shape[1]))


def reverse_plan(y: Tensor, plan: PartitionPlan) -> Tensor:
    """(B, K, C) -> (N, C): invert the layout, drop the padded rows."""
    y = as_tensor(y)
    if y.shape[:2] != (plan.b, plan.k):
        raise ShapeError(f"y has shape {y.shape}, plan expects ({plan.b}, {plan.k}, C)")
    flat = reshape(y, (plan.padded, y.shape[2]))
    return gather_rows(flat, plan.layout[: plan.n])


@dataclass
class AttentionParams:
    """Projection weights for multi-head scaled dot-product attention."""

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    heads: int
    head_dim: int

    @classmethod
    def init(cls, channels: int, heads: int, rng: np.random.Generator,
             std: float = 0.02, dtype=None) -> "AttentionParams":
        if channels % heads != 0:
            raise ValueError(f"channels {channels} not divisible by heads {heads}")
        head_dim = channels // heads
        shape = (channels, heads * head_dim)
        return cls(
            w_q=trunc_normal(shape, std, rng, dtype),
            w_k=trunc_normal(shape, std, rng, dtype),
            w_v=trunc_normal(shape, std, rng, dtype),
            w_o=trunc_normal((heads * head_dim, channels), std, rng, dtype),
            heads=heads,
            head_dim=head_dim,
        )


MASK_LOGIT = -1e9  # additive mask; large enough to underflow to 0 in softmax


def windowed_attention(x: Tensor, plan: PartitionPlan,
                       params: AttentionParams) -> Tensor:
    """Masked multi-head self-attention within each window of the plan.

    Padded keys get an additive -1e9 logit (excluded from the softmax up
    to underflow); padded query rows are zeroed and then dropped by the
    reverse partition.
    """
    x = as_tensor(x)
    if x.shape[0] != plan.n:
        raise ShapeError(f"x has {x.shape[0]} rows, plan expects {plan.n}")
    assert_finite(x, "windowed_attention input")
    b, k = plan.b, plan.k
    h, dh = params.heads, params.head_dim

    def split_heads(t: Tensor) -> Tensor:
        t = reshape(t, (b, k, h, dh))
        return transpose(t, (0, 2, 1, 3))  # (B, H, K, dh)

    windows = apply_plan(x, plan)                       # (B, K, C)
    flat = reshape(windows, (b * k, x.shape[1]))
    q = split_heads(reshape(matmul(flat, params.w_q), (b, k, h * dh)))
    key = split_heads(reshape(matmul(flat, params.w_k), (b, k, h * dh)))
    val = split_heads(reshape(matmul(flat, params.w_v), (b, k, h * dh)))

    q = mul(q, 1.0 / np.sqrt(dh))
    scores = matmul(q, transpose(key, (0, 1, 3, 2)))    # (B, H, K, K)
    pad = plan.pad_by_slot()
    bias = np.where(pad[:, None, None, :], MASK_LOGIT, 0.0).astype(x.dtype)
    attn = softmax(add(scores, Tensor(bias)), axis=-1)

    ctx = matmul(attn, val)                             # (B, H, K, dh)
    ctx = reshape(transpose(ctx, (0, 2, 1, 3)), (b * k, h * dh))
    out = reshape(matmul(ctx, params.w_o), (b, k, x.shape[1]))
    real = (~pad)[:, :, None].astype(x.dtype)
    out = mul(out, Tensor(real))                        # zero the padded rows
    return reverse_plan(out, plan)


@dataclass
class CpeParams:
    """Depthwise 3^3 stencil + batch norm; initialized to the identity."""

    kernel: Tensor  # (27, C)
    bn: BatchNormState

    @classmethod
    def init(cls, channels: int, dtype=None) -> "CpeParams":
        from .tensor import default_dtype

        dt = dtype or default_dtype()
        return cls(Tensor(np.zeros((27, channels), dtype=dt)),
                   BatchNormState.create(channels, dtype=dt))


def conditional_positional_encoding(x: Tensor, octree: Octree, depth: int,
                                    cpe: CpeParams, training: bool) -> Tensor:
    """x + batch_norm(depthwise_conv(x)); absent neighbors contribute zero."""
    x = as_tensor(x)
    if x.shape[0] != octree.node_count(depth):
        raise ShapeError(
            f"x has {x.shape[0]} rows, depth {depth} has {octree.node_count(depth)} nodes"
        )
    encoded = batch_norm(depthwise_conv(x, octree, depth, cpe.kernel), cpe.bn, training)
    return add(x, encoded)


def plan_to_csv(plan: PartitionPlan) -> str:
    """Debug dump: one row per (window, slot) with source position or -1."""
    src = plan.window_sources()
    pad = src >= plan.n
    buf = io.StringIO()
    buf.write("window,slot,source_index,is_pad\n")
    for flat in range(plan.padded):
        w, s = divmod(flat, plan.k)
        source = -1 if pad[flat] else int(src[flat])
        buf.write(f"{w},{s},{source},{int(pad[flat])}\n")
    return buf.getvalue()
