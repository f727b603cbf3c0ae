"""Dense numeric primitives shared by every layer.

All functions are pure, operate on contiguous row-major numpy arrays and
broadcast over any number of leading batch dimensions. Correctness paths run
in float64; float32 is accepted for the timed benchmark paths. A non-finite
result (NaN/Inf) raises instead of propagating.
"""

import numpy as np

Array = np.ndarray


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def _require_finite(out: Array, op: str) -> Array:
    if not np.isfinite(out).all():
        raise FloatingPointError(f"{op}: non-finite values in result")
    return out


def matmul(a: Array, b: Array) -> Array:
    """Matrix product over the last two axes: (..., m, k) @ (..., k, n)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a @ b
    return _require_finite(out, "matmul")


def _as_float(x: Array) -> Array:
    x = np.asarray(x)
    if x.dtype not in (np.float32, np.float64):
        x = x.astype(np.float64)
    return x


def sigmoid(x: Array) -> Array:
    """Elementwise logistic function, stable over the full float range."""
    x = _as_float(x)
    # exp(-|x|) never overflows; it underflows to 0 for huge |x|, giving the
    # correctly saturated 0/1 limits
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _require_finite(out, "sigmoid")


def silu(x: Array) -> Array:
    """x * sigmoid(x)."""
    x = _as_float(x)
    return _require_finite(x * sigmoid(x), "silu")


def softmax_rows(x: Array) -> Array:
    """Softmax along the last axis with max subtraction.

    -inf entries act as masked positions and contribute exactly zero. Rows
    must contain at least one finite entry.
    """
    x = np.asarray(x)
    m = np.max(x, axis=-1, keepdims=True)
    if not np.isfinite(m).all():
        raise FloatingPointError("softmax_rows: row with no finite entry")
    e = np.exp(x - m)
    out = e / np.sum(e, axis=-1, keepdims=True)
    return _require_finite(out, "softmax_rows")


def rmsnorm(x: Array, gain: Array, eps: float = 1e-6) -> Array:
    """Root-mean-square normalization over the last axis, scaled by gain."""
    if eps <= 0:
        raise ValueError("rmsnorm: eps must be positive")
    x = np.asarray(x)
    ms = np.mean(x * x, axis=-1, keepdims=True)
    out = x / np.sqrt(ms + eps) * np.asarray(gain)
    return _require_finite(out, "rmsnorm")


def dwconv3x3(x: Array, filters: Array, bias: Array) -> Array:
    """Depthwise 3x3 convolution with zero padding (same-size output).

    x: (..., H, W, C), filters: (3, 3, C), bias: (C,).
    out[h, w, c] = bias[c] + sum_ij x[h+i-1, w+j-1, c] * filters[i, j, c]
    """
    x = np.asarray(x)
    filters = np.asarray(filters)
    bias = np.asarray(bias)
    if filters.shape != (3, 3, x.shape[-1]) or bias.shape != (x.shape[-1],):
        raise ShapeError(
            f"dwconv3x3: filters {filters.shape} / bias {bias.shape} "
            f"do not match input {x.shape}"
        )
    h, w = x.shape[-3], x.shape[-2]
    pad = [(0, 0)] * (x.ndim - 3) + [(1, 1), (1, 1), (0, 0)]
    xp = np.pad(x, pad)
    out = np.broadcast_to(bias, x.shape).astype(x.dtype).copy()
    for i in range(3):
        for j in range(3):
            out += xp[..., i : i + h, j : j + w, :] * filters[i, j]
    return _require_finite(out, "dwconv3x3")


def conv2d(x: Array, w: Array, b: Array, stride: int, padding: int) -> Array:
    """Strided 2D convolution via patch extraction and one matmul.

    x: (..., H, W, Cin), w: (kh, kw, Cin, Cout), b: (Cout,).
    """
    cols, out_hw = im2col(x, w.shape[0], w.shape[1], stride, padding)
    out = cols @ w.reshape(-1, w.shape[-1]) + b
    out = out.reshape(x.shape[:-3] + out_hw + (w.shape[-1],))
    return _require_finite(out, "conv2d")


def im2col(x: Array, kh: int, kw: int, stride: int, padding: int):
    """Extract convolution patches: returns (..., Ho*Wo, kh*kw*Cin) and (Ho, Wo)."""
    x = np.asarray(x)
    h, w, c = x.shape[-3:]
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"im2col: kernel {kh}x{kw} too large for input {x.shape}")
    pad = [(0, 0)] * (x.ndim - 3) + [(padding, padding), (padding, padding), (0, 0)]
    xp = np.pad(x, pad)
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(-3, -2))
    win = win[..., ::stride, ::stride, :, :, :]  # (..., Ho, Wo, C, kh, kw)
    win = np.moveaxis(win, -3, -1)  # (..., Ho, Wo, kh, kw, C)
    cols = win.reshape(x.shape[:-3] + (ho * wo, kh * kw * c))
    return np.ascontiguousarray(cols), (ho, wo)


def col2im(dcols: Array, x_shape: tuple, kh: int, kw: int, stride: int, padding: int) -> Array:
    """Adjoint of im2col: scatter-add patch gradients back onto the image."""
    h, w, c = x_shape[-3:]
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    lead = x_shape[:-3]
    d = dcols.reshape(lead + (ho, wo, kh, kw, c))
    dxp = np.zeros(lead + (h + 2 * padding, w + 2 * padding, c), dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[..., i : i + ho * stride : stride, j : j + wo * stride : stride, :] += d[
                ..., :, :, i, j, :
            ]
    return dxp[..., padding : padding + h, padding : padding + w, :]
