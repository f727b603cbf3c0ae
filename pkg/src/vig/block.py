"""The spatial mixing block: depthwise-conv local branch, bidirectional
gated-linear-attention global branch, learned 2D gating between the two,
and a SwiGLU feed-forward, wired with pre-norm residuals.

Functions here are written against the autograd dispatch layer, so they run
on plain arrays for inference and on Vars for training.
"""

from dataclasses import dataclass

import numpy as np

from . import autograd as F
from .bigla import MultiHeadBiGLAParams, init_multihead_bigla_params
from .gla import DEFAULT_CHUNK
from .tensor_ops import Array, ShapeError

NORM_EPS = 1e-6


@dataclass
class BlockParams:
    norm1_gain: Array
    dw_filters: Array
    dw_bias: Array
    bigla: MultiHeadBiGLAParams
    gate2d_w: Array
    gate2d_b: Array
    norm2_gain: Array
    ffn_w_gate: Array
    ffn_w_up: Array
    ffn_w_down: Array


def ffn_hidden(d: int) -> int:
    """SwiGLU hidden width: (8/3) * d rounded to a multiple of 8."""
    return max(8, 8 * round(d / 3))


def init_block_params(rng: np.random.Generator, d: int, heads: int,
                      std: float = 0.02) -> BlockParams:
    f = ffn_hidden(d)
    return BlockParams(
        norm1_gain=np.ones(d),
        dw_filters=rng.normal(0.0, std, (3, 3, d)),
        dw_bias=np.zeros(d),
        bigla=init_multihead_bigla_params(rng, d, heads, std=std),
        gate2d_w=rng.normal(0.0, std, (d, d)),
        gate2d_b=np.zeros((1, d)),
        norm2_gain=np.ones(d),
        ffn_w_gate=rng.normal(0.0, std, (d, f)),
        ffn_w_up=rng.normal(0.0, std, (d, f)),
        ffn_w_down=rng.normal(0.0, std, (f, d)),
    )


def _split_heads(x, heads: int):
    """(..., T, h*w) -> (..., h, T, w) through reshape/moveaxis primitives."""
    t, hw = x.shape[-2], x.shape[-1]
    x = F.reshape(x, x.shape[:-1] + (heads, hw // heads))
    return F.moveaxis(x, -2, -3)


def _merge_heads(x):
    x = F.moveaxis(x, -3, -2)
    return F.reshape(x, x.shape[:-2] + (x.shape[-2] * x.shape[-1],))


def bigla_layer(x, p: MultiHeadBiGLAParams, chunk: int = DEFAULT_CHUNK,
                impl: str = "fused"):
    """Multi-head bidirectional GLA layer: (..., T, d) -> (..., T, d).

    impl selects the fused single-traversal scan or the two-pass reference
    (forward scan plus a scan over flipped copies); both satisfy the same
    contract and their gradients agree.
    """
    q = _split_heads(F.matmul(x, p.w_q), p.heads)
    k = _split_heads(F.matmul(x, p.w_k), p.heads)
    v = _split_heads(F.matmul(x, p.w_v), p.heads)
    alpha = F.power(F.sigmoid(F.add(F.matmul(F.matmul(x, p.w1), p.w2), p.b)),
                    1.0 / p.tau)
    half = alpha.shape[-1] // 2
    a_fwd = _split_heads(F.narrow(alpha, -1, 0, half), p.heads)
    a_bwd = _split_heads(F.narrow(alpha, -1, half, half), p.heads)
    if impl == "fused":
        o = F.bigla_scan(q, k, v, a_fwd, a_bwd, chunk)
    elif impl == "two_pass":
        o_fwd = F.gla_scan(q, k, v, a_fwd, chunk)
        o_rev = F.gla_scan(F.flip(q), F.flip(k), F.flip(v), F.flip(a_bwd), chunk)
        o = F.mul(F.add(o_fwd, F.flip(o_rev)), 0.5)
    else:
        raise ValueError(f"unknown bidirectional impl {impl!r}")
    return F.matmul(_merge_heads(o), p.w_o)


def locality_injection(x, p: BlockParams, chunk: int = DEFAULT_CHUNK,
                       impl: str = "fused", force_local: bool = False):
    """Gated blend of local and global context on an (..., H, W, d) grid.

    The depthwise convolution output feeds both the global branch and the
    gate, and the result is a pointwise convex combination:
    out = G * local + (1 - G) * global(local).

    force_local=True short-circuits to the local branch (the global-branch
    ablation used by the trainer).
    """
    if x.ndim < 3:
        raise ShapeError("locality_injection expects an (..., H, W, d) grid")
    local = F.dwconv3x3(x, p.dw_filters, p.dw_bias)
    if force_local:
        return local
    h, w, d = x.shape[-3], x.shape[-2], x.shape[-1]
    lead = x.shape[:-3]
    tokens = F.reshape(local, lead + (h * w, d))  # row-major raster order
    global_ = F.reshape(bigla_layer(tokens, p.bigla, chunk, impl), x.shape)
    gate = F.sigmoid(F.add(F.matmul(local, p.gate2d_w), p.gate2d_b))
    return F.add(F.mul(gate, local), F.mul(F.sub(1.0, gate), global_))


def swiglu_ffn(x, p: BlockParams):
    """(silu(x W_gate) * (x W_up)) W_down, applied tokenwise."""
    return F.matmul(F.mul(F.silu(F.matmul(x, p.ffn_w_gate)),
                          F.matmul(x, p.ffn_w_up)), p.ffn_w_down)


def vig_block_forward(x, p: BlockParams, chunk: int = DEFAULT_CHUNK,
                      impl: str = "fused", force_local: bool = False):
    """Pre-norm residual block on an (..., H, W, d) grid."""
    y = F.add(x, locality_injection(F.rmsnorm(x, p.norm1_gain, NORM_EPS), p,
                                    chunk, impl, force_local))
    return F.add(y, swiglu_ffn(F.rmsnorm(y, p.norm2_gain, NORM_EPS), p))
