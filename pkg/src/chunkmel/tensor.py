"""Dense numeric primitives for the chunked decoder.

All operations are pure functions over 2-D (time x feature) numpy arrays in
float32 or float64. Reductions that feed cross-chunk math use a fixed
left-to-right summation order, so identical inputs always produce
bit-identical outputs and a value summed with interleaved exact zeros equals
the value summed without them. That second property is what makes chunked
decoding with caches agree exactly with one-shot masked decoding.
"""

from __future__ import annotations

import numpy as np

DTYPES = {"f32": np.float32, "f64": np.float64}
_DTYPE_NAMES = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}

class ShapeError(ValueError):
    """Operand shapes or dtypes do not satisfy an operation's contract."""


class MaskError(ValueError):
    """A softmax query row has no permitted key."""


def dtype_name(arr: np.ndarray) -> str:
    name = _DTYPE_NAMES.get(arr.dtype)
    if name is None:
        raise ShapeError(f"unsupported dtype {arr.dtype}; expected f32 or f64")
    return name


def _check_same_dtype(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.dtype != b.dtype:
        raise ShapeError(f"{op}: dtype mismatch {a.dtype} vs {b.dtype}")


def sum_ordered(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Sum along `axis` in strict left-to-right order (keepdims)."""
    if x.shape[axis] == 0:
        shape = list(x.shape)
        shape[axis] = 1
        return np.zeros(shape, dtype=x.dtype)
    acc = np.add.accumulate(x, axis=axis)
    return np.take(acc, [-1], axis=axis)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with left-to-right accumulation over the inner axis.

    out[i, j] = a[i, 0]*b[0, j] + a[i, 1]*b[1, j] + ... summed in that
    exact order, so the result matches a naive triple loop bit-for-bit.
    np.einsum without the optimize flag accumulates the contracted axis
    sequentially (no BLAS dispatch, no pairwise blocking), which the test
    suite pins against an explicit triple-loop reference.
    """
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expected 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ for {a.shape} and {b.shape}")
    _check_same_dtype(a, b, "matmul")
    m, k = a.shape
    n = b.shape[1]
    if k == 0:
        return np.zeros((m, n), dtype=a.dtype)
    return np.einsum("ik,kj->ij", a, b)


def masked_softmax(logits: np.ndarray, mask=None) -> np.ndarray:
    """Row-wise softmax over the last axis, restricted to permitted keys.

    `mask` is either None, a boolean (T_q, T_k) array, or an object with a
    boolean `.permitted` attribute of that shape (broadcast over any leading
    axes of `logits`). Masked positions get exactly zero weight; each query
    row must keep at least one permitted key.
    """
    x = np.asarray(logits)
    if x.ndim < 2:
        raise ShapeError(f"masked_softmax: expected >=2-D logits, got {x.shape}")
    if mask is not None:
        perm = mask.permitted if hasattr(mask, "permitted") else np.asarray(mask, dtype=bool)
        if perm.shape != x.shape[-2:]:
            raise ShapeError(
                f"masked_softmax: mask shape {perm.shape} does not cover logits {x.shape}"
            )
        dead = ~perm.any(axis=1)
        if dead.any():
            rows = np.flatnonzero(dead)
            raise MaskError(f"masked_softmax: fully masked query rows {rows.tolist()}")
        x = np.where(perm, x, x.dtype.type(-np.inf))
    elif x.shape[-1] == 0:
        raise MaskError("masked_softmax: zero keys and no mask")
    rowmax = np.max(x, axis=-1, keepdims=True)
    e = np.exp(x - rowmax)
    denom = sum_ordered(e, axis=-1)
    return e / denom


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Per-frame normalization over the feature axis; frame t only sees frame t."""
    if x.ndim != 2:
        raise ShapeError(f"layer_norm: expected 2-D input, got {x.shape}")
    d = x.shape[1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm: gamma {gamma.shape} / beta {beta.shape} do not match feature dim {d}"
        )
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    _check_same_dtype(x, gamma, "layer_norm")
    mu = np.mean(x, axis=1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=1, keepdims=True)
    xhat = xc / np.sqrt(var + x.dtype.type(eps))
    return gamma * xhat + beta


def causal_conv1d(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """1-D convolution over time; the caller supplies the left context.

    `x` has shape (S_pad + T, d_in) where S_pad = kernel - 1 frames of left
    context are already prepended (carried state, or zeros at sequence
    start). Output frame t is b + w[0]^T x[t] + ... + w[k-1]^T x[t+k-1],
    taps accumulated in kernel order, so frame t of the output depends only
    on input rows t..t+k-1. No padding happens inside this op.
    """
    if x.ndim != 2 or w.ndim != 3:
        raise ShapeError(f"causal_conv1d: expected x 2-D and w 3-D, got {x.shape} and {w.shape}")
    k, d_in, d_out = w.shape
    if x.shape[1] != d_in:
        raise ShapeError(f"causal_conv1d: input feature dim {x.shape[1]} != kernel d_in {d_in}")
    if b.shape != (d_out,):
        raise ShapeError(f"causal_conv1d: bias shape {b.shape} != ({d_out},)")
    if x.shape[0] < k:
        raise ShapeError(f"causal_conv1d: time length {x.shape[0]} shorter than kernel {k}")
    _check_same_dtype(x, w, "causal_conv1d")
    t_out = x.shape[0] - k + 1
    out = np.empty((t_out, d_out), dtype=x.dtype)
    out[:] = b
    for j in range(k):
        np.add(out, matmul(x[j : j + t_out], w[j]), out=out)
    return out


def concat_time(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Concatenate along the time (first) axis."""
    if a.ndim != b.ndim or a.shape[1:] != b.shape[1:]:
        raise ShapeError(f"concat_time: feature dims differ for {a.shape} and {b.shape}")
    _check_same_dtype(a, b, "concat_time")
    return np.concatenate([a, b], axis=0)


def concat_feat(parts: list[np.ndarray]) -> np.ndarray:
    """Concatenate along the feature (second) axis; used to rejoin heads."""
    if not parts:
        raise ShapeError("concat_feat: empty input list")
    t = parts[0].shape[0]
    for p in parts[1:]:
        if p.shape[0] != t:
            raise ShapeError(f"concat_feat: time lengths differ ({t} vs {p.shape[0]})")
        _check_same_dtype(parts[0], p, "concat_feat")
    return np.concatenate(parts, axis=1)


def tail_slice(x: np.ndarray, s: int) -> np.ndarray:
    """Last `s` frames of x; the whole tensor if s exceeds its length.

    s = 0 yields an empty tensor, which is how a no-past cache stays empty.
    Returning the full tensor instead of zero-padding lets a cache grow from
    empty at sequence start without fabricating keys.
    """
    if s < 0:
        raise ShapeError(f"tail_slice: negative count {s}")
    if s == 0:
        return x[:0]
    return x[-s:]


def transpose(x: np.ndarray) -> np.ndarray:
    if x.ndim != 2:
        raise ShapeError(f"transpose: expected 2-D input, got {x.shape}")
    return np.ascontiguousarray(x.T)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, x.dtype.type(0))


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")
    _check_same_dtype(a, b, "add")
    return a + b


def add_bias(x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Add a per-feature row vector to every frame."""
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_bias: bias {b.shape} does not match features {x.shape}")
    _check_same_dtype(x, b, "add_bias")
    return x + b


def scale(x: np.ndarray, s: float) -> np.ndarray:
    return x * x.dtype.type(s)


def mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise product."""
    if a.shape != b.shape:
        raise ShapeError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    _check_same_dtype(a, b, "mul")
    return a * b


def sum_all(x: np.ndarray) -> np.ndarray:
    """Sum of all entries as a 0-d array."""
    return np.asarray(np.sum(x), dtype=x.dtype)
