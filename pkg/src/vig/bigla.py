"""Bidirectional gated linear attention.

Both directions share the q/k/v projections and the low-rank gate factor;
only the second gate factor and bias are widened to 2*d_k, split into a
forward half and a backward half. Outputs of the two scans are averaged.

Two implementations with identical contracts:

* ``bigla_two_pass``   - naive reference: runs the forward scan, then runs a
  second scan over explicitly reversed copies of q, k, v and flips the result.
* ``bigla_fused_scan`` - single-traversal form: one lightweight right-to-left
  sweep reduces each block to a (d_k, d_v) summary and a gate product, a
  prefix pass turns those into the backward carried states, and the main
  left-to-right traversal then emits both directions per block. No reversed
  copy of q, k, v or the gates is ever materialized; auxiliary memory is one
  summary per block.
"""

from dataclasses import dataclass

import numpy as np

from .gla import (
    DEFAULT_CHUNK,
    GLAParams,
    _check_alpha,
    _chunk_intra_causal,
    _chunk_state_update,
    gla_chunkwise,
    gla_layer,
    gla_recurrent,
)
from .tensor_ops import Array, ShapeError, matmul, sigmoid


@dataclass
class BiGLAParams:
    """Single-head bidirectional layer parameters.

    w_q, w_k: (d, d_k), w_v: (d, d_v); gate factors w1: (d, rank),
    w2: (rank, 2*d_k), b: (1, 2*d_k). The first d_k gate columns drive the
    forward scan, the last d_k the backward scan.
    """

    w_q: Array
    w_k: Array
    w_v: Array
    w1: Array
    w2: Array
    b: Array
    tau: float = 16.0

    def __post_init__(self):
        d_k = self.w_q.shape[1]
        if self.w_k.shape[1] != d_k:
            raise ShapeError("BiGLAParams: query/key widths differ")
        if self.w2.shape[1] != 2 * d_k or self.b.shape[-1] != 2 * d_k:
            raise ShapeError("BiGLAParams: direction-wise gate width must be 2*d_k")


def init_bigla_params(rng: np.random.Generator, d: int, d_k: int | None = None,
                      d_v: int | None = None, rank: int = 16, tau: float = 16.0,
                      std: float = 0.02) -> BiGLAParams:
    d_k = d // 2 if d_k is None else d_k
    d_v = d if d_v is None else d_v
    return BiGLAParams(
        w_q=rng.normal(0.0, std, (d, d_k)),
        w_k=rng.normal(0.0, std, (d, d_k)),
        w_v=rng.normal(0.0, std, (d, d_v)),
        w1=rng.normal(0.0, std, (d, rank)),
        w2=rng.normal(0.0, std, (rank, 2 * d_k)),
        b=np.zeros((1, 2 * d_k)),
        tau=tau,
    )


def compute_direction_gates(x: Array, p: BiGLAParams) -> tuple[Array, Array]:
    """Widened gate row split into (forward, backward) halves."""
    alpha = sigmoid(matmul(matmul(x, p.w1), p.w2) + p.b) ** (1.0 / p.tau)
    d_k = alpha.shape[-1] // 2
    return alpha[..., :d_k], alpha[..., d_k:]


def _flip(x: Array) -> Array:
    return np.flip(x, axis=-2)


def bigla_scan_two_pass(q: Array, k: Array, v: Array, alpha_fwd: Array,
                        alpha_bwd: Array, chunk: int | None = None) -> Array:
    """Reference: forward scan plus a scan over reversed copies, averaged."""
    scan = gla_recurrent if chunk is None else (
        lambda *a: gla_chunkwise(*a, chunk=chunk))
    o_fwd, _ = scan(q, k, v, alpha_fwd)
    o_rev, _ = scan(_flip(q), _flip(k), _flip(v), _flip(alpha_bwd))
    return 0.5 * (o_fwd + _flip(o_rev))


def _chunk_intra_anticausal(q: Array, k: Array, logd_prev: Array) -> Array:
    """Upper-triangular block P[t, i] = sum_r q[t,r] k[i,r] d_{i-1}[r]/d_{t-1}[r].

    Mirror of the causal block: a masked matmul of gate-scaled operands when
    the block's total decay is moderate, otherwise pairwise log differences
    (<= 0 for every kept entry i >= t, hence overflow-proof).
    """
    from .gla import _MATMUL_SAFE_LOG

    l = q.shape[-2]
    keep = np.triu(np.ones((l, l), dtype=q.dtype))
    if logd_prev[..., -1, :].min() > -_MATMUL_SAFE_LOG:
        p = (q * np.exp(-logd_prev)) @ np.swapaxes(k * np.exp(logd_prev), -1, -2)
        return p * keep
    diff = logd_prev[..., None, :, :] - logd_prev[..., :, None, :]
    diff = np.where(keep.astype(bool)[:, :, None], diff, -np.inf)
    return np.einsum("...tr,...ir,...tir->...ti", q, k, np.exp(diff))


def _exclusive(logd: Array) -> Array:
    """Shift inclusive cumulative logs to exclusive (prepend a zero row)."""
    pad = [(0, 0)] * (logd.ndim - 2) + [(1, 0), (0, 0)]
    return np.pad(logd, pad)[..., :-1, :]


def bigla_fused_scan(q: Array, k: Array, v: Array, alpha_fwd: Array,
                     alpha_bwd: Array, chunk: int = DEFAULT_CHUNK,
                     want_states: bool = False):
    """Single-traversal bidirectional scan.

    Returns the averaged outputs; with want_states=True also returns the
    per-block forward entry states and backward carried states (used by the
    checkpointed adjoint).
    """
    if chunk < 1:
        raise ValueError("chunk must be >= 1")
    _check_alpha(alpha_fwd)
    _check_alpha(alpha_bwd)
    t_len = q.shape[-2]
    d_k, d_v = k.shape[-1], v.shape[-1]
    starts = list(range(0, t_len, chunk))
    n_blocks = len(starts)

    # Right-to-left sweep: per-block backward summary and total gate product.
    bsum = [None] * n_blocks
    cprod = [None] * n_blocks
    for c, start in enumerate(starts):
        end = min(start + chunk, t_len)
        kc = k[..., start:end, :]
        vc = v[..., start:end, :]
        logd = np.cumsum(np.log(alpha_bwd[..., start:end, :]), axis=-2)
        logd_prev = _exclusive(logd)
        bsum[c] = np.swapaxes(kc * np.exp(logd_prev), -1, -2) @ vc
        cprod[c] = np.exp(logd[..., -1, :])

    # Prefix from the right: carried[c] = backward state just past block c.
    carried = [None] * n_blocks
    acc = np.zeros(q.shape[:-2] + (d_k, d_v), dtype=q.dtype)
    for c in range(n_blocks - 1, -1, -1):
        carried[c] = acc
        acc = bsum[c] + cprod[c][..., :, None] * acc

    # Main traversal: both directions emitted per block, forward state advanced.
    out = np.empty(q.shape[:-1] + (d_v,), dtype=q.dtype)
    s_fwd = np.zeros(q.shape[:-2] + (d_k, d_v), dtype=q.dtype)
    fwd_entry = [None] * n_blocks
    for c, start in enumerate(starts):
        end = min(start + chunk, t_len)
        qc = q[..., start:end, :]
        kc = k[..., start:end, :]
        vc = v[..., start:end, :]

        logb = np.cumsum(np.log(alpha_fwd[..., start:end, :]), axis=-2)
        fwd_entry[c] = s_fwd
        o_f = (qc * np.exp(logb)) @ s_fwd + _chunk_intra_causal(qc, kc, logb) @ vc
        s_fwd = _chunk_state_update(s_fwd, kc, vc, logb)

        logd = np.cumsum(np.log(alpha_bwd[..., start:end, :]), axis=-2)
        logd_prev = _exclusive(logd)
        lam = np.exp(logd[..., -1:, :] - logd_prev)
        o_b = (qc * lam) @ carried[c] + _chunk_intra_anticausal(qc, kc, logd_prev) @ vc

        out[..., start:end, :] = 0.5 * (o_f + o_b)

    if want_states:
        return out, fwd_entry, carried
    return out


def _layer_inputs(x: Array, p: BiGLAParams):
    q, k, v = matmul(x, p.w_q), matmul(x, p.w_k), matmul(x, p.w_v)
    alpha_fwd, alpha_bwd = compute_direction_gates(x, p)
    return q, k, v, alpha_fwd, alpha_bwd


def bigla_two_pass(x: Array, p: BiGLAParams, chunk: int | None = None) -> Array:
    """Two-pass reference layer: x (..., T, d) -> (..., T, d_v)."""
    return bigla_scan_two_pass(*_layer_inputs(x, p), chunk=chunk)


def bigla_fused(x: Array, p: BiGLAParams, chunk: int = DEFAULT_CHUNK) -> Array:
    """Fused single-traversal layer: x (..., T, d) -> (..., T, d_v)."""
    return bigla_fused_scan(*_layer_inputs(x, p), chunk=chunk)


def bigla_vim_baseline(x: Array, p_fwd: GLAParams, p_bwd: GLAParams,
                       chunk: int | None = DEFAULT_CHUNK) -> Array:
    """Two independent full GLA layers, one per direction, averaged.

    Baseline bidirectional construction that duplicates every parameter
    instead of widening the gate; kept for parameter and speed comparisons.
    """
    o_fwd = gla_layer(x, p_fwd, chunk)
    o_rev = gla_layer(_flip(x), p_bwd, chunk)
    return 0.5 * (o_fwd + _flip(o_rev))


@dataclass
class MultiHeadBiGLAParams:
    """Multi-head bidirectional layer at embedding width d.

    Same fused projection layout as the causal multi-head layer; the gate
    second factor w2 spans (rank, 2 * d/2) = (rank, d), forward halves first.
    """

    w_q: Array
    w_k: Array
    w_v: Array
    w_o: Array
    w1: Array
    w2: Array
    b: Array
    heads: int
    tau: float = 16.0

    def __post_init__(self):
        d = self.w_q.shape[0]
        if d % (2 * self.heads) != 0:
            raise ShapeError("multihead BiGLA: d must be divisible by 2*heads")
        if self.w2.shape[1] != d or self.b.shape[-1] != d:
            raise ShapeError("multihead BiGLA: gate width must be 2 * (d/2) = d")


def init_multihead_bigla_params(rng: np.random.Generator, d: int, heads: int,
                                rank: int = 16, tau: float = 16.0,
                                std: float = 0.02) -> MultiHeadBiGLAParams:
    return MultiHeadBiGLAParams(
        w_q=rng.normal(0.0, std, (d, d // 2)),
        w_k=rng.normal(0.0, std, (d, d // 2)),
        w_v=rng.normal(0.0, std, (d, d)),
        w_o=rng.normal(0.0, std, (d, d)),
        w1=rng.normal(0.0, std, (d, rank)),
        w2=rng.normal(0.0, std, (rank, d)),
        b=np.zeros((1, d)),
        heads=heads,
        tau=tau,
    )
