"""Independent reference implementations used as test oracles.

Everything here is deliberately naive (loops, dense arrays, 64-bit) and
shares no code with the library paths it checks.
"""

from __future__ import annotations

import numpy as np


def naive_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Triple-loop matrix product."""
    m, k = a.shape
    k2, p = b.shape
    assert k == k2
    out = np.zeros((m, p), dtype=np.float64)
    for i in range(m):
        for j in range(p):
            s = 0.0
            for t in range(k):
                s += float(a[i, t]) * float(b[t, j])
            out[i, j] = s
    return out


def dense_masked_attention(
    x: np.ndarray,
    w_q: np.ndarray,
    w_k: np.ndarray,
    w_v: np.ndarray,
    w_o: np.ndarray,
    heads: int,
    window_id: np.ndarray,
) -> np.ndarray:
    """Full N x N multi-head attention where (i, j) may attend iff they
    share a window; everything computed at 64-bit."""
    x = x.astype(np.float64)
    n, c = x.shape
    proj = w_q.shape[1]
    dh = proj // heads
    q = (x @ w_q.astype(np.float64)).reshape(n, heads, dh)
    k = (x @ w_k.astype(np.float64)).reshape(n, heads, dh)
    v = (x @ w_v.astype(np.float64)).reshape(n, heads, dh)
    allowed = window_id[:, None] == window_id[None, :]
    ctx = np.zeros((n, heads, dh))
    for h in range(heads):
        logits = (q[:, h] @ k[:, h].T) / np.sqrt(dh)
        logits = np.where(allowed, logits, -np.inf)
        logits -= logits.max(axis=1, keepdims=True)
        w = np.exp(logits)
        w /= w.sum(axis=1, keepdims=True)
        ctx[:, h] = w @ v[:, h]
    return ctx.reshape(n, heads * dh) @ w_o.astype(np.float64)


def dense_conv3d(
    grid: np.ndarray, weights: np.ndarray, kernel: int, stride: int,
    depthwise: bool,
) -> np.ndarray:
    """Dense zero-padded 3D convolution on a full (S,S,S,Cin) grid.

    Tap order matches the library: offsets in product order, dz fastest.
    Kernel 3 ranges over {-1,0,1}, kernel 2 over {0,1}; stride 2 anchors
    at even coordinates and halves the resolution.
    """
    s = grid.shape[0]
    c_in = grid.shape[3]
    offs = [-1, 0, 1] if kernel == 3 else [0, 1]
    out_s = s if stride == 1 else s // 2
    c_out = c_in if depthwise else weights.shape[2]
    out = np.zeros((out_s, out_s, out_s, c_out), dtype=np.float64)
    tap = 0
    for dx in offs:
        for dy in offs:
            for dz in offs:
                w = weights[tap]
                tap += 1
                for ox in range(out_s):
                    ix = ox * stride + dx
                    if not 0 <= ix < s:
                        continue
                    for oy in range(out_s):
                        iy = oy * stride + dy
                        if not 0 <= iy < s:
                            continue
                        for oz in range(out_s):
                            iz = oz * stride + dz
                            if not 0 <= iz < s:
                                continue
                            v = grid[ix, iy, iz].astype(np.float64)
                            if depthwise:
                                out[ox, oy, oz] += v * w
                            else:
                                out[ox, oy, oz] += v @ w
    return out


def finite_difference(f, x: np.ndarray, step: float = 1e-5,
                      samples: np.ndarray | None = None) -> np.ndarray:
    """Central finite differences of scalar f at x.

    With ``samples`` (flat indices) only those entries are probed and the
    rest of the returned gradient is NaN.
    """
    x = x.astype(np.float64)
    grad = np.full(x.size, np.nan)
    flat_indices = range(x.size) if samples is None else samples
    flat = x.reshape(-1).copy()
    for i in flat_indices:
        orig = flat[i]
        flat[i] = orig + step
        fp = f(flat.reshape(x.shape))
        flat[i] = orig - step
        fm = f(flat.reshape(x.shape))
        flat[i] = orig
        grad[i] = (fp - fm) / (2.0 * step)
    return grad.reshape(x.shape)


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-8)
    return float(np.abs(a - b).max(initial=0.0) / denom)


def grads_close(analytic: np.ndarray, fd: np.ndarray, rtol: float = 1e-4,
                atol: float = 1e-6) -> bool:
    """Per-entry gradient agreement: relative within rtol, or both below
    the finite-difference noise floor atol."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    b = np.asarray(fd, dtype=np.float64).ravel()
    diff = np.abs(a - b)
    scale = np.maximum(np.abs(a), np.abs(b))
    return bool(((diff <= atol) | (diff <= rtol * scale)).all())


def finite_difference_filtered(f, x: np.ndarray, samples: np.ndarray,
                               steps=(1e-5, 1e-6)):
    """Central differences at two step sizes; probes where the two
    estimates disagree sit near a non-differentiable point (ReLU kink)
    and are reported invalid. Returns (fd, valid) over the samples."""
    fd_a = finite_difference(f, x, step=steps[0], samples=samples).reshape(-1)
    fd_b = finite_difference(f, x, step=steps[1], samples=samples).reshape(-1)
    fd_a, fd_b = fd_a[samples], fd_b[samples]
    scale = np.maximum(np.abs(fd_a), np.abs(fd_b))
    valid = np.abs(fd_a - fd_b) <= 1e-3 * scale + 1e-8
    return fd_b, valid


def groupby_cell_mean(cells: np.ndarray, values: np.ndarray):
    """Dict oracle: mean of values grouped by integer cell triple."""
    sums: dict[tuple[int, int, int], np.ndarray] = {}
    counts: dict[tuple[int, int, int], int] = {}
    for cell, v in zip(cells, values):
        key = tuple(int(c) for c in cell)
        if key in sums:
            sums[key] += v
            counts[key] += 1
        else:
            sums[key] = v.astype(np.float64).copy()
            counts[key] = 1
    return {k: sums[k] / counts[k] for k in sums}


def brute_force_knn(coords: np.ndarray, k: int) -> np.ndarray:
    """All-pairs k nearest neighbors; ties broken by index order."""
    n = coords.shape[0]
    d2 = ((coords[:, None, :].astype(np.float64)
           - coords[None, :, :].astype(np.float64)) ** 2).sum(axis=2)
    order = np.lexsort((np.broadcast_to(np.arange(n), (n, n)), d2), axis=1)
    return order[:, :k]


def interleave2d(x: int, y: int, bits: int) -> int:
    """2D z-order code with x in the high slot of each pair."""
    code = 0
    for j in range(bits):
        code |= ((x >> j) & 1) << (2 * j + 1)
        code |= ((y >> j) & 1) << (2 * j)
    return code


def gradcheck(build, shapes, seed=0, tol=1e-4, step=1e-5, max_probe=40):
    """FD-check gradients of a scalar-valued builder over all its inputs.

    ``build`` maps a list of float64 Tensors to a scalar Tensor. Probes a
    bounded random sample of entries per input and compares central
    differences against the tape gradients at relative tolerance ``tol``.
    """
    from octformer import tensor as T

    r = np.random.default_rng(seed)
    values = [r.normal(size=s) for s in shapes]
    with T.Tape() as tape:
        inputs = [T.Tensor(v, dtype=np.float64) for v in values]
        loss = build(inputs)
    T.backward(tape, loss)
    worst = 0.0
    for i, v in enumerate(values):
        analytic = tape.grad(inputs[i])

        def f(x, i=i):
            vals = [x if j == i else values[j] for j in range(len(values))]
            return build([T.Tensor(w, dtype=np.float64) for w in vals]).item()

        probes = None
        if v.size > max_probe:
            probes = r.choice(v.size, size=max_probe, replace=False)
        fd = finite_difference(f, v, step=step, samples=probes)
        mask = ~np.isnan(fd)
        err = relative_error(analytic[mask.reshape(v.shape)],
                             fd[mask.reshape(v.shape)])
        worst = max(worst, err)
        assert err < tol, f"input {i}: rel err {err}"
    return worst
