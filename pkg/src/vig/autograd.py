"""Reverse-mode gradient engine with hand-written adjoints.

A ``Var`` wraps a numpy array and records, per operation, its parent nodes
and a closure that maps the output gradient to parent gradients. Calling
``backward()`` on a scalar replays those closures in reverse topological
order, visiting every recorded operation exactly once.

Every function in this module accepts plain arrays as well: if no argument
is a Var the numpy result is returned directly and nothing is recorded, so
the model code is written once and serves both the fast inference path and
the differentiable training path.

The scan adjoints are checkpointed: the forward pass stores only the state
at each block boundary and the backward pass recomputes the intra-block
states, bounding saved memory to O(d_k * d_v * T / chunk) per scan.
"""

import numpy as np

from . import tensor_ops as T
from .bigla import bigla_fused_scan
from .gla import DEFAULT_CHUNK, _gla_chunkwise_impl
from .tensor_ops import Array

__all__ = [
    "Var", "add", "sub", "mul", "matmul", "power", "sigmoid", "silu",
    "rmsnorm", "dwconv3x3", "conv2d", "reshape", "moveaxis", "narrow",
    "flip", "mean", "gla_scan", "bigla_scan", "cross_entropy_mean",
    "gla_scan_backward", "gla_scan_backward_anticausal",
    "finite_diff_check", "PRIMITIVES",
]


class Var:
    """Array node in the gradient tape."""

    __slots__ = ("value", "grad", "_parents", "_vjp")

    def __init__(self, value, parents=(), vjp=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def backward(self):
        if self.value.size != 1:
            raise ValueError("backward() expects a scalar loss")
        order, seen, stack = [], set(), [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._vjp is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._vjp(node.grad)):
                if g is None:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g

    # Operators cover the light arithmetic the layer code uses; everything
    # heavier goes through the module-level functions.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Var):
            raise TypeError("division between Vars is not supported")
        return mul(self, 1.0 / other)


def _val(x) -> Array:
    return x.value if isinstance(x, Var) else np.asarray(x)


def _tracing(*xs) -> bool:
    return any(isinstance(x, Var) for x in xs)


def _parents_and_mask(*xs):
    parents = tuple(x for x in xs if isinstance(x, Var))
    mask = tuple(isinstance(x, Var) for x in xs)
    return parents, mask


def _select(mask, grads):
    """Keep gradient slots for Var arguments only, in argument order."""
    return tuple(g for g, m in zip(grads, mask) if m)


def _unbroadcast(g: Array, shape: tuple) -> Array:
    """Sum a gradient down to the shape of a broadcast operand."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b):
    out = _val(a) + _val(b)
    if not _tracing(a, b):
        return out
    parents, mask = _parents_and_mask(a, b)
    sa, sb = np.shape(_val(a)), np.shape(_val(b))

    def vjp(g):
        return _select(mask, (_unbroadcast(g, sa), _unbroadcast(g, sb)))

    return Var(out, parents, vjp)


def sub(a, b):
    out = _val(a) - _val(b)
    if not _tracing(a, b):
        return out
    parents, mask = _parents_and_mask(a, b)
    sa, sb = np.shape(_val(a)), np.shape(_val(b))

    def vjp(g):
        return _select(mask, (_unbroadcast(g, sa), _unbroadcast(-g, sb)))

    return Var(out, parents, vjp)


def mul(a, b):
    av, bv = _val(a), _val(b)
    out = av * bv
    if not _tracing(a, b):
        return out
    parents, mask = _parents_and_mask(a, b)

    def vjp(g):
        return _select(mask, (_unbroadcast(g * bv, np.shape(av)),
                              _unbroadcast(g * av, np.shape(bv))))

    return Var(out, parents, vjp)


def matmul(a, b):
    av, bv = _val(a), _val(b)
    out = T.matmul(av, bv)
    if not _tracing(a, b):
        return out
    parents, mask = _parents_and_mask(a, b)

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)
        gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)
        return _select(mask, (ga, gb))

    return Var(out, parents, vjp)


def power(x, exponent: float):
    """x ** c for a constant exponent; x must be positive where c < 1."""
    xv = _val(x)
    out = xv ** exponent
    if not _tracing(x):
        return out

    def vjp(g):
        return (g * exponent * xv ** (exponent - 1.0),)

    return Var(out, (x,), vjp)


def sigmoid(x):
    out = T.sigmoid(_val(x))
    if not _tracing(x):
        return out

    def vjp(g):
        return (g * out * (1.0 - out),)

    return Var(out, (x,), vjp)


def silu(x):
    xv = _val(x)
    s = T.sigmoid(xv)
    out = xv * s
    if not _tracing(x):
        return out

    def vjp(g):
        return (g * (s + xv * s * (1.0 - s)),)

    return Var(out, (x,), vjp)


def rmsnorm(x, gain, eps: float = 1e-6):
    xv, gv = _val(x), _val(gain)
    out = T.rmsnorm(xv, gv, eps)
    if not _tracing(x, gain):
        return out
    parents, mask = _parents_and_mask(x, gain)
    d = xv.shape[-1]
    r = 1.0 / np.sqrt(np.mean(xv * xv, axis=-1, keepdims=True) + eps)

    def vjp(g):
        gg = g * gv
        inner = np.sum(gg * xv, axis=-1, keepdims=True)
        gx = r * gg - (r ** 3 / d) * xv * inner
        ggain = _unbroadcast(g * xv * r, gv.shape)
        return _select(mask, (gx, ggain))

    return Var(out, parents, vjp)


def dwconv3x3(x, filters, bias):
    xv, fv, bv = _val(x), _val(filters), _val(bias)
    out = T.dwconv3x3(xv, fv, bv)
    if not _tracing(x, filters, bias):
        return out
    parents, mask = _parents_and_mask(x, filters, bias)

    def vjp(g):
        # input gradient: correlation of g with the 180-degree flipped kernel
        gx = T.dwconv3x3(g, fv[::-1, ::-1, :], np.zeros_like(bv))
        h, w = xv.shape[-3], xv.shape[-2]
        pad = [(0, 0)] * (xv.ndim - 3) + [(1, 1), (1, 1), (0, 0)]
        xp = np.pad(xv, pad)
        gf = np.empty_like(fv)
        lead = tuple(range(g.ndim - 1))
        for i in range(3):
            for j in range(3):
                gf[i, j] = np.sum(xp[..., i : i + h, j : j + w, :] * g, axis=lead)
        gb = g.sum(axis=lead)
        return _select(mask, (gx, gf, gb))

    return Var(out, parents, vjp)


def conv2d(x, w, b, stride: int, padding: int):
    xv, wv, bv = _val(x), _val(w), _val(b)
    kh, kw, cin, cout = wv.shape
    cols, out_hw = T.im2col(xv, kh, kw, stride, padding)
    out_flat = cols @ wv.reshape(-1, cout) + bv
    out = out_flat.reshape(xv.shape[:-3] + out_hw + (cout,))
    if not np.isfinite(out).all():
        raise FloatingPointError("conv2d: non-finite values in result")
    if not _tracing(x, w, b):
        return out
    parents, mask = _parents_and_mask(x, w, b)

    def vjp(g):
        gf = g.reshape(xv.shape[:-3] + (-1, cout))
        gw = np.swapaxes(cols, -1, -2) @ gf
        gw = gw.reshape((-1,) + wv.shape).sum(axis=0).astype(wv.dtype)
        gb = gf.reshape(-1, cout).sum(axis=0)
        gcols = gf @ wv.reshape(-1, cout).T
        gx = T.col2im(gcols, xv.shape, kh, kw, stride, padding)
        return _select(mask, (gx, gw, gb))

    return Var(out, parents, vjp)


def reshape(x, shape):
    xv = _val(x)
    out = xv.reshape(shape)
    if not _tracing(x):
        return out

    def vjp(g):
        return (g.reshape(xv.shape),)

    return Var(out, (x,), vjp)


def moveaxis(x, src: int, dst: int):
    xv = _val(x)
    out = np.moveaxis(xv, src, dst)
    if not _tracing(x):
        return out

    def vjp(g):
        return (np.moveaxis(g, dst, src),)

    return Var(out, (x,), vjp)


def narrow(x, axis: int, start: int, length: int):
    """Contiguous slice along one axis."""
    xv = _val(x)
    idx = [slice(None)] * xv.ndim
    idx[axis] = slice(start, start + length)
    out = xv[tuple(idx)]
    if not _tracing(x):
        return out

    def vjp(g):
        gx = np.zeros_like(xv)
        gx[tuple(idx)] = g
        return (gx,)

    return Var(out, (x,), vjp)


def flip(x, axis: int = -2):
    out = np.flip(_val(x), axis=axis)
    if not _tracing(x):
        return out

    def vjp(g):
        return (np.flip(g, axis=axis),)

    return Var(out, (x,), vjp)


def mean(x, axis: int):
    xv = _val(x)
    out = xv.mean(axis=axis)
    if not _tracing(x):
        return out
    n = xv.shape[axis]

    def vjp(g):
        return (np.repeat(np.expand_dims(g / n, axis), n, axis=axis),)

    return Var(out, (x,), vjp)


def gla_scan_backward(q, k, v, alpha, entry_states, d_out, chunk):
    """Adjoint of the causal gated scan.

    Reverse-time recurrence over blocks processed last-to-first; intra-block
    states are recomputed from the stored block-entry states. dS accumulates
    q_t^T dO_t at each step, then dK, dV read the state gradient, dAlpha
    pairs it with the previous state, and the gate scales dS backward.
    """
    dq = np.zeros_like(q)
    dk = np.zeros_like(k)
    dv = np.zeros_like(v)
    dalpha = np.zeros_like(alpha)
    d_kdim, d_vdim = k.shape[-1], v.shape[-1]
    ds = np.zeros(q.shape[:-2] + (d_kdim, d_vdim), dtype=q.dtype)
    t_len = q.shape[-2]
    starts = list(range(0, t_len, chunk))
    for c in range(len(starts) - 1, -1, -1):
        start = starts[c]
        end = min(start + chunk, t_len)
        states = [entry_states[c]]
        for t in range(start, end):
            states.append(alpha[..., t, :, None] * states[-1]
                          + k[..., t, :, None] * v[..., t, None, :])
        for t in range(end - 1, start - 1, -1):
            s_t = states[t - start + 1]
            s_prev = states[t - start]
            g_o = d_out[..., t, :]
            dq[..., t, :] = np.einsum("...ij,...j->...i", s_t, g_o)
            ds = ds + q[..., t, :, None] * g_o[..., None, :]
            dk[..., t, :] = np.einsum("...ij,...j->...i", ds, v[..., t, :])
            dv[..., t, :] = np.einsum("...ij,...i->...j", ds, k[..., t, :])
            dalpha[..., t, :] = np.einsum("...ij,...ij->...i", ds, s_prev)
            ds = alpha[..., t, :, None] * ds
    return dq, dk, dv, dalpha


def gla_scan_backward_anticausal(q, k, v, alpha, carried_states, d_out, chunk):
    """Adjoint of the anticausal scan S_t = alpha_t * S_{t+1} + k_t^T v_t.

    Mirror image of the causal adjoint: blocks are processed first-to-last
    and intra-block states are recomputed right-to-left from the stored
    carried states (the state just past each block's end).
    """
    dq = np.zeros_like(q)
    dk = np.zeros_like(k)
    dv = np.zeros_like(v)
    dalpha = np.zeros_like(alpha)
    d_kdim, d_vdim = k.shape[-1], v.shape[-1]
    ds = np.zeros(q.shape[:-2] + (d_kdim, d_vdim), dtype=q.dtype)
    t_len = q.shape[-2]
    starts = list(range(0, t_len, chunk))
    for c, start in enumerate(starts):
        end = min(start + chunk, t_len)
        states = [carried_states[c]]  # state at position `end`
        for t in range(end - 1, start - 1, -1):
            states.append(alpha[..., t, :, None] * states[-1]
                          + k[..., t, :, None] * v[..., t, None, :])
        states.reverse()  # states[i] is now the state at position start + i
        for t in range(start, end):
            s_t = states[t - start]
            s_next = states[t - start + 1]
            g_o = d_out[..., t, :]
            dq[..., t, :] = np.einsum("...ij,...j->...i", s_t, g_o)
            ds = ds + q[..., t, :, None] * g_o[..., None, :]
            dk[..., t, :] = np.einsum("...ij,...j->...i", ds, v[..., t, :])
            dv[..., t, :] = np.einsum("...ij,...i->...j", ds, k[..., t, :])
            dalpha[..., t, :] = np.einsum("...ij,...ij->...i", ds, s_next)
            ds = alpha[..., t, :, None] * ds
    return dq, dk, dv, dalpha


def gla_scan(q, k, v, alpha, chunk: int = DEFAULT_CHUNK):
    """Differentiable causal gated scan (chunkwise forward)."""
    qv, kv, vv, av = _val(q), _val(k), _val(v), _val(alpha)
    out, _, entries = _gla_chunkwise_impl(qv, kv, vv, av, chunk)
    if not _tracing(q, k, v, alpha):
        return out
    parents, mask = _parents_and_mask(q, k, v, alpha)

    def vjp(g):
        return _select(mask, gla_scan_backward(qv, kv, vv, av, entries, g, chunk))

    return Var(out, parents, vjp)


def bigla_scan(q, k, v, alpha_fwd, alpha_bwd, chunk: int = DEFAULT_CHUNK):
    """Differentiable fused bidirectional scan."""
    args = (q, k, v, alpha_fwd, alpha_bwd)
    qv, kv, vv, afv, abv = map(_val, args)
    out, fwd_entry, carried = bigla_fused_scan(qv, kv, vv, afv, abv, chunk,
                                               want_states=True)
    if not _tracing(*args):
        return out
    parents, mask = _parents_and_mask(*args)

    def vjp(g):
        gh = 0.5 * g
        dqf, dkf, dvf, daf = gla_scan_backward(qv, kv, vv, afv, fwd_entry, gh, chunk)
        dqb, dkb, dvb, dab = gla_scan_backward_anticausal(qv, kv, vv, abv, carried,
                                                          gh, chunk)
        return _select(mask, (dqf + dqb, dkf + dkb, dvf + dvb, daf, dab))

    return Var(out, parents, vjp)


def cross_entropy_mean(logits, labels: Array):
    """Mean of -log softmax(logits)[label] over the leading batch axis.

    logits: (B, C) or (C,); labels: (B,) integer array (or scalar).
    """
    lv = _val(logits)
    squeeze = lv.ndim == 1
    lv2 = lv.reshape(1, -1) if squeeze else lv
    y = np.atleast_1d(np.asarray(labels))
    n, c = lv2.shape
    if y.shape != (n,) or y.min() < 0 or y.max() >= c:
        raise ValueError("cross_entropy: labels out of range")
    m = lv2.max(axis=-1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(lv2 - m).sum(axis=-1))
    loss = float(np.mean(lse - lv2[np.arange(n), y]))
    if not _tracing(logits):
        return loss

    def vjp(g):
        p = np.exp(lv2 - m)
        p /= p.sum(axis=-1, keepdims=True)
        p[np.arange(n), y] -= 1.0
        gl = (float(g) / n) * p
        return (gl.reshape(lv.shape),)

    return Var(loss, (logits,), vjp)


# Differentiable primitives, keyed by name. Every operation the layers touch
# a learnable parameter with must appear here (asserted by a coverage test).
PRIMITIVES = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "matmul": matmul,
    "power": power,
    "sigmoid": sigmoid,
    "silu": silu,
    "rmsnorm": rmsnorm,
    "dwconv3x3": dwconv3x3,
    "conv2d": conv2d,
    "reshape": reshape,
    "moveaxis": moveaxis,
    "narrow": narrow,
    "flip": flip,
    "mean": mean,
    "gla_scan": gla_scan,
    "bigla_scan": bigla_scan,
    "cross_entropy_mean": cross_entropy_mean,
}


class FiniteDiffReport:
    """Result of a sampled central-difference gradient check."""

    def __init__(self, max_rel_err, mean_rel_err, n_samples, worst):
        self.max_rel_err = max_rel_err
        self.mean_rel_err = mean_rel_err
        self.n_samples = n_samples
        self.worst = worst  # (param name, flat index, analytic, numeric)

    def __repr__(self):
        name, idx, a, f = self.worst
        return (f"FiniteDiffReport(max={self.max_rel_err:.3e}, "
                f"mean={self.mean_rel_err:.3e}, n={self.n_samples}, "
                f"worst={name}[{idx}] analytic={a:.6e} numeric={f:.6e})")


def finite_diff_check(f, params: dict, analytic: dict, h: float = 1e-5,
                      n_samples: int = 200, seed: int = 0) -> FiniteDiffReport:
    """Compare analytic gradients against central finite differences.

    ``f(params) -> float`` is re-evaluated at theta +/- h*e_i for a seeded
    sample of coordinates drawn across all parameter tensors. Relative error
    uses max(|analytic|, |numeric|, 1e-6) as the denominator so near-zero
    coordinates are judged on that absolute floor.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError("finite_diff_check: h must lie in [1e-7, 1e-3]")
    sizes = [(name, params[name].size) for name in sorted(params)]
    total = sum(s for _, s in sizes)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(total, size=min(n_samples, total), replace=False)
    errs = []
    worst = (None, -1, 0.0, 0.0)
    for flat in np.sort(chosen):
        offset = int(flat)
        for name, size in sizes:
            if offset < size:
                break
            offset -= size
        arr = params[name].reshape(-1)
        orig = arr[offset]
        arr[offset] = orig + h
        f_plus = f(params)
        arr[offset] = orig - h
        f_minus = f(params)
        arr[offset] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise FloatingPointError("finite_diff_check: non-finite loss")
        numeric = (f_plus - f_minus) / (2.0 * h)
        an = float(analytic[name].reshape(-1)[offset])
        rel = abs(numeric - an) / max(abs(numeric), abs(an), 1e-6)
        if not errs or rel > max(errs):
            worst = (name, offset, an, numeric)
        errs.append(rel)
    return FiniteDiffReport(float(np.max(errs)), float(np.mean(errs)),
                            len(errs), worst)
