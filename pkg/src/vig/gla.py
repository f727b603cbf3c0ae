"""Gated linear attention: data-dependent forget gates, the sequential
recurrent scan, and a chunkwise-blocked scan.

The recurrence per head is

    S_t = G_t * S_{t-1} + k_t^T v_t,    o_t = q_t S_t,

where G_t broadcasts the gate row alpha_t down the columns of the state
(row i of S is scaled by alpha_t[i]). The chunkwise form is algebraically
identical: it carries the state across blocks with cumulative gate products
and expresses intra-block work with dense matrix products. All gate products
are accumulated in log space; every exponent that is ever materialized is
<= 0, so the blocked form cannot overflow no matter how small the gates get.

All kernels broadcast over leading (batch, head) dimensions:
q, k: (..., T, d_k), v: (..., T, d_v), alpha: (..., T, d_k).
"""

from dataclasses import dataclass

import numpy as np

from .attention import AttnParams
from .tensor_ops import Array, ShapeError, matmul, sigmoid

DEFAULT_CHUNK = 64


@dataclass
class GateParams:
    """Low-rank forget-gate projection with temperature.

    w1: (d, rank), w2: (rank, d_k), b: (1, d_k). The gate row is
    sigmoid(x w1 w2 + b) ** (1/tau); tau > 1 biases gates toward 1
    (slow forgetting).
    """

    w1: Array
    w2: Array
    b: Array
    tau: float = 16.0

    def __post_init__(self):
        if self.tau < 1.0:
            raise ValueError("GateParams: tau must be >= 1")
        if self.w1.shape[1] != self.w2.shape[0]:
            raise ShapeError("GateParams: w1/w2 rank mismatch")
        if self.b.shape[-1] != self.w2.shape[1]:
            raise ShapeError("GateParams: bias width mismatch")


@dataclass
class GLAParams:
    attn: AttnParams
    gate: GateParams

    def __post_init__(self):
        if self.gate.w2.shape[1] != self.attn.w_k.shape[1]:
            raise ShapeError("GLAParams: gate width must equal key width")


def init_gate_params(rng: np.random.Generator, d: int, d_k: int, rank: int = 16,
                     tau: float = 16.0, std: float = 0.02) -> GateParams:
    # b = 0 puts initial gates at 0.5**(1/tau), the slow-forget regime
    return GateParams(
        w1=rng.normal(0.0, std, (d, rank)),
        w2=rng.normal(0.0, std, (rank, d_k)),
        b=np.zeros((1, d_k)),
        tau=tau,
    )


def compute_gates(x: Array, g: GateParams) -> Array:
    """alpha = sigmoid(x w1 w2 + b) ** (1/tau); every entry lies in (0, 1]."""
    return sigmoid(matmul(matmul(x, g.w1), g.w2) + g.b) ** (1.0 / g.tau)


def _check_alpha(alpha: Array) -> None:
    if alpha.size and not ((alpha > 0.0).all() and (alpha <= 1.0).all()):
        raise ValueError("gate values must lie in (0, 1]")


def gla_recurrent(q: Array, k: Array, v: Array, alpha: Array) -> tuple[Array, Array]:
    """Sequential reference scan. Returns (outputs, final state)."""
    _check_alpha(alpha)
    t_len = q.shape[-2]
    d_k, d_v = k.shape[-1], v.shape[-1]
    s = np.zeros(q.shape[:-2] + (d_k, d_v), dtype=q.dtype)
    out = np.empty(q.shape[:-1] + (d_v,), dtype=q.dtype)
    for t in range(t_len):
        s = alpha[..., t, :, None] * s + k[..., t, :, None] * v[..., t, None, :]
        out[..., t, :] = np.einsum("...i,...ij->...j", q[..., t, :], s)
    return out, s


# Largest |log gate product| for which the two-sided matmul factorization of
# pairwise gate ratios stays comfortably inside float range (exp(30) ~ 1e13).
_MATMUL_SAFE_LOG = 30.0


def _chunk_intra_causal(q: Array, k: Array, logb: Array) -> Array:
    """Lower-triangular score block P[t, i] = sum_r q[t,r] k[i,r] b_t[r]/b_i[r].

    When the block's total gate decay is moderate the ratio factorizes into
    two gate-scaled operands and P is a single masked matmul. Otherwise the
    ratios are evaluated as pairwise log differences, which are <= 0 for
    every kept entry (i <= t) and therefore cannot overflow regardless of
    how small the gates are.
    """
    l = q.shape[-2]
    keep = np.tril(np.ones((l, l), dtype=q.dtype))
    if logb[..., -1, :].min() > -_MATMUL_SAFE_LOG:
        p = (q * np.exp(logb)) @ np.swapaxes(k * np.exp(-logb), -1, -2)
        return p * keep
    diff = logb[..., :, None, :] - logb[..., None, :, :]
    diff = np.where(keep.astype(bool)[:, :, None], diff, -np.inf)
    return np.einsum("...tr,...ir,...tir->...ti", q, k, np.exp(diff))


def _chunk_state_update(s: Array, k: Array, v: Array, logb: Array) -> Array:
    """Advance the carried state across one block with dense matmuls."""
    log_total = logb[..., -1:, :]
    k_scaled = k * np.exp(log_total - logb)
    return np.exp(log_total[..., 0, :, None]) * s + np.swapaxes(k_scaled, -1, -2) @ v


def _gla_chunkwise_impl(q: Array, k: Array, v: Array, alpha: Array, chunk: int):
    """Blocked scan returning (outputs, final state, per-block entry states)."""
    if chunk < 1:
        raise ValueError("chunk must be >= 1")
    _check_alpha(alpha)
    t_len = q.shape[-2]
    d_k, d_v = k.shape[-1], v.shape[-1]
    s = np.zeros(q.shape[:-2] + (d_k, d_v), dtype=q.dtype)
    out = np.empty(q.shape[:-1] + (d_v,), dtype=q.dtype)
    entries = []
    for start in range(0, t_len, chunk):
        end = min(start + chunk, t_len)
        qc = q[..., start:end, :]
        kc = k[..., start:end, :]
        vc = v[..., start:end, :]
        logb = np.cumsum(np.log(alpha[..., start:end, :]), axis=-2)
        inter = (qc * np.exp(logb)) @ s
        intra = _chunk_intra_causal(qc, kc, logb) @ vc
        out[..., start:end, :] = inter + intra
        entries.append(s)
        s = _chunk_state_update(s, kc, vc, logb)
    return out, s, entries


def gla_chunkwise(q: Array, k: Array, v: Array, alpha: Array,
                  chunk: int = DEFAULT_CHUNK) -> tuple[Array, Array]:
    """Blocked scan, identical output contract to gla_recurrent.

    Processes ceil(T / chunk) blocks; inter-block contributions are a matmul
    of gate-scaled queries against the carried state, intra-block
    contributions a masked matrix product with pairwise gate ratios.
    """
    out, s, _ = _gla_chunkwise_impl(q, k, v, alpha, chunk)
    return out, s


@dataclass
class MultiHeadGLAParams:
    """Multi-head causal GLA layer at embedding width d.

    Heads share the input; per head d_k = d/(2h) and d_v = d/h, so the fused
    projections are w_q, w_k: (d, d/2), w_v: (d, d), and head outputs are
    concatenated through w_o: (d, d). The low-rank gate factor w1 is shared
    model-wide; each head reads its slice of the (rank, d/2) second factor.
    """

    w_q: Array
    w_k: Array
    w_v: Array
    w_o: Array
    gate: GateParams
    heads: int

    def __post_init__(self):
        d = self.w_q.shape[0]
        if d % (2 * self.heads) != 0:
            raise ShapeError("multihead GLA: d must be divisible by 2*heads")
        if self.w_q.shape[1] * 2 != d or self.w_v.shape[1] != d or self.w_o.shape != (d, d):
            raise ShapeError("multihead GLA: projection shapes inconsistent with d")


def init_multihead_gla_params(rng: np.random.Generator, d: int, heads: int,
                              std: float = 0.02) -> MultiHeadGLAParams:
    return MultiHeadGLAParams(
        w_q=rng.normal(0.0, std, (d, d // 2)),
        w_k=rng.normal(0.0, std, (d, d // 2)),
        w_v=rng.normal(0.0, std, (d, d)),
        w_o=rng.normal(0.0, std, (d, d)),
        gate=init_gate_params(rng, d, d // 2, std=std),
        heads=heads,
    )


def split_heads(x: Array, heads: int) -> Array:
    """(..., T, h*w) -> (..., h, T, w)."""
    t, hw = x.shape[-2], x.shape[-1]
    x = x.reshape(x.shape[:-1] + (heads, hw // heads))
    return np.moveaxis(x, -2, -3)


def merge_heads(x: Array) -> Array:
    """(..., h, T, w) -> (..., T, h*w)."""
    x = np.moveaxis(x, -3, -2)
    return x.reshape(x.shape[:-2] + (x.shape[-2] * x.shape[-1],))


def multihead_gla(x: Array, p: MultiHeadGLAParams,
                  chunk: int = DEFAULT_CHUNK) -> Array:
    """Causal multi-head GLA layer: x (..., T, d) -> (..., T, d)."""
    q = split_heads(matmul(x, p.w_q), p.heads)
    k = split_heads(matmul(x, p.w_k), p.heads)
    v = split_heads(matmul(x, p.w_v), p.heads)
    alpha = split_heads(compute_gates(x, p.gate), p.heads)
    o, _ = gla_chunkwise(q, k, v, alpha, chunk)
    return matmul(merge_heads(o), p.w_o)


def gla_layer(x: Array, p: GLAParams, chunk: int | None = DEFAULT_CHUNK) -> Array:
    """Single-head causal GLA layer: projections, gates and scan."""
    q, k, v = matmul(x, p.attn.w_q), matmul(x, p.attn.w_k), matmul(x, p.attn.w_v)
    alpha = compute_gates(x, p.gate)
    if chunk is None:
        o, _ = gla_recurrent(q, k, v, alpha)
    else:
        o, _ = gla_chunkwise(q, k, v, alpha, chunk)
    return o
