"""Softmax attention (parallel, recurrent and key-blocked forms) and plain
linear attention.

These serve as correctness oracles for the gated scans and as the quadratic
baseline in the scaling benchmarks. The parallel and recurrent softmax forms
are mathematically identical; the recurrent one evaluates each output with a
max-subtracted log-sum-exp so realistic score magnitudes cannot overflow.
"""

from dataclasses import dataclass

import numpy as np

from .tensor_ops import Array, ShapeError, matmul, softmax_rows


@dataclass
class AttnParams:
    """Projection matrices. w_q: (d, d_q), w_k: (d, d_k), w_v: (d, d_v)."""

    w_q: Array
    w_k: Array
    w_v: Array

    def __post_init__(self):
        if self.w_q.shape[1] != self.w_k.shape[1]:
            raise ShapeError("AttnParams: query and key widths must match")
        if not (self.w_q.shape[0] == self.w_k.shape[0] == self.w_v.shape[0]):
            raise ShapeError("AttnParams: projections must share the input width")


def init_attn_params(rng: np.random.Generator, d: int, d_k: int | None = None,
                     d_v: int | None = None, std: float = 0.02) -> AttnParams:
    d_k = d if d_k is None else d_k
    d_v = d if d_v is None else d_v
    return AttnParams(
        w_q=rng.normal(0.0, std, (d, d_k)),
        w_k=rng.normal(0.0, std, (d, d_k)),
        w_v=rng.normal(0.0, std, (d, d_v)),
    )


def project_qkv(x: Array, p: AttnParams) -> tuple[Array, Array, Array]:
    return matmul(x, p.w_q), matmul(x, p.w_k), matmul(x, p.w_v)


def softmax_attention_parallel(x: Array, p: AttnParams, causal: bool = False) -> Array:
    """O = softmax(Q K^T with masked entries at -inf) V.

    With causal=True the strictly upper triangle is masked; with causal=False
    every position attends to every other (the bidirectional vision usage).
    """
    q, k, v = project_qkv(x, p)
    scores = q @ np.swapaxes(k, -1, -2)
    if causal:
        t = x.shape[-2]
        mask = np.triu(np.ones((t, t), dtype=bool), k=1)
        scores = np.where(mask, -np.inf, scores)
    return matmul(softmax_rows(scores), v)


def softmax_attention_recurrent(x: Array, p: AttnParams) -> Array:
    """Causal attention evaluated one query at a time.

    o_t = sum_{i<=t} exp(q_t k_i^T) v_i / sum_{i<=t} exp(q_t k_i^T), with the
    running prefix max subtracted before exponentiation.
    """
    q, k, v = project_qkv(x, p)
    t_len = q.shape[-2]
    out = np.empty(q.shape[:-1] + (v.shape[-1],), dtype=q.dtype)
    for t in range(t_len):
        s = np.einsum("...d,...td->...t", q[..., t, :], k[..., : t + 1, :])
        m = np.max(s, axis=-1, keepdims=True)
        w = np.exp(s - m)
        num = np.einsum("...t,...td->...d", w, v[..., : t + 1, :])
        out[..., t, :] = num / np.sum(w, axis=-1, keepdims=True)
    return out


def softmax_attention_blocked(x: Array, p: AttnParams, block: int = 1024) -> Array:
    """Non-causal attention streamed over key/value blocks.

    Maintains a running max, normalizer and weighted sum per query so the
    full T x T score matrix is never materialized; peak extra memory is
    O(T * block). Used on the benchmark path for very long sequences.
    """
    q, k, v = project_qkv(x, p)
    t_len = q.shape[-2]
    m = np.full(q.shape[:-1], -np.inf, dtype=q.dtype)
    l = np.zeros(q.shape[:-1], dtype=q.dtype)
    acc = np.zeros(q.shape[:-1] + (v.shape[-1],), dtype=q.dtype)
    for s in range(0, t_len, block):
        kb = k[..., s : s + block, :]
        vb = v[..., s : s + block, :]
        scores = q @ np.swapaxes(kb, -1, -2)
        m_new = np.maximum(m, np.max(scores, axis=-1))
        scale = np.exp(m - m_new)
        w = np.exp(scores - m_new[..., None])
        l = l * scale + np.sum(w, axis=-1)
        acc = acc * scale[..., None] + w @ vb
        m = m_new
    return acc / l[..., None]


def linear_attention(x: Array, p: AttnParams, causal: bool = True) -> Array:
    """Attention with the identity feature map and no normalizer.

    Causal form is evaluated as the recurrence S_t = S_{t-1} + k_t^T v_t,
    o_t = q_t S_t; the non-causal form sums over all positions.
    """
    q, k, v = project_qkv(x, p)
    if not causal:
        return matmul(q, matmul(np.swapaxes(k, -1, -2), v))
    t_len = q.shape[-2]
    d_k, d_v = k.shape[-1], v.shape[-1]
    s = np.zeros(q.shape[:-2] + (d_k, d_v), dtype=q.dtype)
    out = np.empty(q.shape[:-1] + (d_v,), dtype=q.dtype)
    for t in range(t_len):
        s = s + k[..., t, :, None] * v[..., t, None, :]
        out[..., t, :] = np.einsum("...i,...ij->...j", q[..., t, :], s)
    return out
