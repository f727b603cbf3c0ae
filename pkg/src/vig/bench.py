"""Latency scaling harness.

Each variant is one sequence-mixing layer forward at embedding width d
(projections included, matching the closed-form FLOP counts). Inputs and
parameters are built outside the timed region; runs use float32 storage,
2 warm-up iterations and a configurable number of timed repeats reported as
median and min. Resolution r maps to T = (r/16)^2 tokens, so the stock
sweep T in {196, 784, 3136, 4096, 16384} mirrors 224..2048 pixel inputs.
"""

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import costs
from .attention import (
    AttnParams,
    linear_attention,
    softmax_attention_blocked,
    softmax_attention_parallel,
)
from .bigla import MultiHeadBiGLAParams, bigla_vim_baseline
from .block import bigla_layer
from .costs import CostReport, memory_estimate
from .gla import GateParams, GLAParams, MultiHeadGLAParams, multihead_gla

DEFAULT_T_LIST = (1024, 2048, 4096, 8192, 16384)
GATE_RANK = 16


@dataclass
class Variant:
    name: str
    build: Callable  # (rng, t, d, dtype, chunk) -> zero-arg closure
    flops: Callable  # (t, d) -> int
    params: Callable  # (d) -> int


def _randn(rng, shape, dtype, scale=1.0):
    return (scale * rng.normal(size=shape)).astype(dtype)


def _bigla_params(rng, d, dtype):
    s = d ** -0.5
    return MultiHeadBiGLAParams(
        w_q=_randn(rng, (d, d // 2), dtype, s), w_k=_randn(rng, (d, d // 2), dtype, s),
        w_v=_randn(rng, (d, d), dtype, s), w_o=_randn(rng, (d, d), dtype, s),
        w1=_randn(rng, (d, GATE_RANK), dtype, s), w2=_randn(rng, (GATE_RANK, d), dtype, s),
        b=np.zeros((1, d), dtype=dtype), heads=1)


def _gla_params(rng, d, dtype):
    s = d ** -0.5
    return MultiHeadGLAParams(
        w_q=_randn(rng, (d, d // 2), dtype, s), w_k=_randn(rng, (d, d // 2), dtype, s),
        w_v=_randn(rng, (d, d), dtype, s), w_o=_randn(rng, (d, d), dtype, s),
        gate=GateParams(w1=_randn(rng, (d, GATE_RANK), dtype, s),
                        w2=_randn(rng, (GATE_RANK, d // 2), dtype, s),
                        b=np.zeros((1, d // 2), dtype=dtype)),
        heads=1)


def _attn_params(rng, d, dtype):
    s = d ** -0.5
    return AttnParams(w_q=_randn(rng, (d, d), dtype, s),
                      w_k=_randn(rng, (d, d), dtype, s),
                      w_v=_randn(rng, (d, d), dtype, s))


def _build_bigla(impl):
    def build(rng, t, d, dtype, chunk):
        x = _randn(rng, (t, d), dtype)
        p = _bigla_params(rng, d, dtype)
        return lambda: bigla_layer(x, p, chunk, impl)
    return build


def _build_gla(rng, t, d, dtype, chunk):
    x = _randn(rng, (t, d), dtype)
    p = _gla_params(rng, d, dtype)
    return lambda: multihead_gla(x, p, chunk)


def _build_gla_vim(rng, t, d, dtype, chunk):
    x = _randn(rng, (t, d), dtype)
    sets = []
    for _ in range(2):
        mh = _gla_params(rng, d, dtype)
        sets.append(GLAParams(attn=AttnParams(w_q=mh.w_q, w_k=mh.w_k, w_v=mh.w_v),
                              gate=mh.gate))
    return lambda: bigla_vim_baseline(x, sets[0], sets[1], chunk)


def _build_softmax(rng, t, d, dtype, chunk):
    x = _randn(rng, (t, d), dtype)
    p = _attn_params(rng, d, dtype)
    return lambda: softmax_attention_parallel(x, p, causal=False)


def _build_softmax_blocked(rng, t, d, dtype, chunk):
    x = _randn(rng, (t, d), dtype)
    p = _attn_params(rng, d, dtype)
    return lambda: softmax_attention_blocked(x, p, block=max(chunk, 256))


def _build_linear(rng, t, d, dtype, chunk):
    x = _randn(rng, (t, d), dtype)
    p = _attn_params(rng, d, dtype)
    return lambda: linear_attention(x, p, causal=False)


VARIANTS = {
    "bigla_fused": Variant("bigla_fused", _build_bigla("fused"),
                           costs.flops_bigla, costs.bigla_layer_params),
    "bigla_two_pass": Variant("bigla_two_pass", _build_bigla("two_pass"),
                              costs.flops_bigla, costs.bigla_layer_params),
    "gla_chunkwise": Variant("gla_chunkwise", _build_gla,
                             costs.flops_gla, costs.gla_layer_params),
    "gla_vim": Variant("gla_vim", _build_gla_vim,
                       costs.flops_gla_vim, costs.gla_vim_layer_params),
    "softmax_attn": Variant("softmax_attn", _build_softmax,
                            costs.flops_softmax_attn, costs.softmax_attn_layer_params),
    "softmax_attn_blocked": Variant("softmax_attn_blocked", _build_softmax_blocked,
                                    costs.flops_softmax_attn,
                                    costs.softmax_attn_layer_params),
    "linear_attn": Variant("linear_attn", _build_linear,
                           costs.flops_linear_attn, costs.softmax_attn_layer_params),
}


def resolution_to_tokens(res: int, patch: int = 16) -> int:
    return (res // patch) ** 2


def time_closure(fn: Callable, repeats: int, warmup: int = 2) -> list[float]:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return samples


def scaling_sweep(variants, t_list=DEFAULT_T_LIST, d: int = 64, repeats: int = 3,
                  chunk: int = 64, dtype: str = "f32", seed: int = 0,
                  warmup: int = 2) -> list[CostReport]:
    """Time each (variant, T) pair sequentially and attach closed-form counts."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    np_dtype = {"f32": np.float32, "f64": np.float64}[dtype]
    resolution = 100 * time.get_clock_info("perf_counter").resolution
    reports = []
    for name in variants:
        spec = VARIANTS[name]
        for t in t_list:
            rng = np.random.default_rng(seed)
            fn = spec.build(rng, int(t), d, np_dtype, chunk)
            samples = time_closure(fn, repeats, warmup)
            mem = sum(memory_estimate(name, int(t), d, np_dtype().itemsize,
                                      chunk).values())
            reports.append(CostReport(
                variant=name, t=int(t), d=d, flops=spec.flops(int(t), d),
                params=spec.params(d), peak_mem_bytes=mem, wall_times=samples,
                timer_warning=min(samples) < resolution))
    return reports


def fit_loglog_slope(ts, wall_seconds) -> float:
    """Least-squares slope of log(time) against log(T)."""
    ts = np.asarray(ts, dtype=np.float64)
    ys = np.asarray(wall_seconds, dtype=np.float64)
    if len(ts) < 2:
        raise ValueError("need at least two points to fit a slope")
    return float(np.polyfit(np.log(ts), np.log(ys), 1)[0])


def sweep_slopes(reports: list[CostReport]) -> dict[str, float]:
    """Fitted wall-time exponent per variant.

    Fits on the min over repeats, the noise-robust statistic for shared
    machines; the median is still reported in the CSV.
    """
    by_variant: dict[str, list[CostReport]] = {}
    for r in reports:
        by_variant.setdefault(r.variant, []).append(r)
    return {name: fit_loglog_slope([r.t for r in rs],
                                   [r.wall_ms_min for r in rs])
            for name, rs in by_variant.items() if len(rs) >= 2}
