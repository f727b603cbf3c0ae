"""Closed-form FLOPs, parameter and peak-memory accounting.

FLOP counts follow the multiply-accumulate convention of the vision
literature (one MAC = one FLOP). The two sequence-mixing layers at embedding
width d with T tokens cost

    bidirectional gated linear attention: 5 T d^2 + 32 T d
    softmax attention:                    4 T d^2 + 2 T^2 d

The gated layer spends 3 T d^2 on the q/k/v/output projections
(d_q = d_k = d/2, d_v = d), T d^2 per direction on the outer-product state
update and state readout, and 32 T d on the rank-16 gate factors (16 T d
each). Softmax attention spends 4 T d^2 on projections at full width and
T^2 d each on the score and mixing products.

Memory figures are analytic models of the dominant live buffers (itemized,
in bytes), not allocator measurements.
"""

from dataclasses import dataclass, field

GATE_RANK = 16


def flops_bigla(t: int, d: int) -> int:
    """Bidirectional gated linear attention layer: 5 T d^2 + 32 T d."""
    if t < 1 or d < 1:
        raise ValueError("t and d must be >= 1")
    return 5 * t * d * d + 32 * t * d


def flops_softmax_attn(t: int, d: int) -> int:
    """Softmax attention layer: 4 T d^2 + 2 T^2 d."""
    if t < 1 or d < 1:
        raise ValueError("t and d must be >= 1")
    return 4 * t * d * d + 2 * t * t * d


def flops_gla(t: int, d: int) -> int:
    """Unidirectional gated layer: one scan direction instead of two."""
    return 4 * t * d * d + 24 * t * d


def flops_gla_vim(t: int, d: int) -> int:
    """Two fully independent gated layers, one per direction."""
    return 2 * flops_gla(t, d)


def flops_linear_attn(t: int, d: int) -> int:
    """Plain linear attention with q/k/v projections at full width."""
    return 3 * t * d * d + 2 * t * d * d


def gla_layer_params(d: int) -> int:
    """Parameter count of a unidirectional gated layer at width d.

    q, k projections (d, d/2), v and output projections (d, d), shared
    rank-16 gate factor (d, 16) plus per-direction factor (16, d/2) and
    bias (1, d/2).
    """
    d_k = d // 2
    return 2 * d * d_k + 2 * d * d + d * GATE_RANK + GATE_RANK * d_k + d_k


def bigla_layer_params(d: int) -> int:
    """Bidirectional layer: the gate factor and bias widen to 2*d_k."""
    d_k = d // 2
    return 2 * d * d_k + 2 * d * d + d * GATE_RANK + GATE_RANK * 2 * d_k + 2 * d_k


def bigla_extra_params(d: int) -> int:
    """BiGLA minus GLA per layer; equals 17 * d_k exactly."""
    return bigla_layer_params(d) - gla_layer_params(d)


def gla_vim_layer_params(d: int) -> int:
    """The duplicate-layer bidirectional baseline: two full parameter sets."""
    return 2 * gla_layer_params(d)


def softmax_attn_layer_params(d: int) -> int:
    """Softmax attention with q/k/v/output projections at full width."""
    return 4 * d * d


def memory_estimate(variant: str, t: int, d: int, itemsize: int = 4,
                    chunk: int = 64) -> dict[str, int]:
    """Itemized peak-memory model (bytes) for one layer forward.

    Keys are buffer names; the fused bidirectional path deliberately has no
    ``reversed_inputs`` term, which is the structural statement that it
    materializes no reversed copy of q, k, v or the gates.
    """
    d_k, d_v = d // 2, d
    n_blocks = -(-t // chunk)
    common = {"input": t * d * itemsize, "output": t * d * itemsize}
    if variant == "softmax_attn":
        return common | {
            "qkv": 3 * t * d * itemsize,
            "scores": t * t * itemsize,
        }
    if variant == "softmax_attn_blocked":
        return common | {
            "qkv": 3 * t * d * itemsize,
            "score_block": t * min(chunk, t) * itemsize,
            "running_stats": 2 * t * itemsize,
        }
    if variant == "linear_attn":
        return common | {
            "qkv": 3 * t * d * itemsize,
            "state": d * d * itemsize,
        }
    if variant in ("bigla_fused", "gla_chunkwise"):
        directions = 2 if variant == "bigla_fused" else 1
        est = common | {
            "qkv": t * (2 * d_k + d_v) * itemsize,
            "gates": directions * t * d_k * itemsize,
            "states": directions * d_k * d_v * itemsize,
            "chunk_workspace": chunk * chunk * d_k * itemsize,
        }
        if variant == "bigla_fused":
            est["block_summaries"] = n_blocks * d_k * d_v * itemsize
        return est
    if variant == "bigla_two_pass":
        return common | {
            "qkv": t * (2 * d_k + d_v) * itemsize,
            "gates": 2 * t * d_k * itemsize,
            "states": 2 * d_k * d_v * itemsize,
            "chunk_workspace": chunk * chunk * d_k * itemsize,
            "reversed_inputs": t * (2 * d_k + d_v + d_k) * itemsize,
        }
    if variant == "gla_vim":
        return common | {
            "qkv": 2 * t * (2 * d_k + d_v) * itemsize,
            "gates": 2 * t * d_k * itemsize,
            "states": 2 * d_k * d_v * itemsize,
            "chunk_workspace": chunk * chunk * d_k * itemsize,
            "reversed_inputs": t * d * itemsize,
        }
    raise KeyError(f"unknown variant {variant!r}")


@dataclass
class CostReport:
    """Closed-form counts plus measured wall times for one (variant, T)."""

    variant: str
    t: int
    d: int
    flops: int
    params: int
    peak_mem_bytes: int
    wall_times: list[float] = field(default_factory=list)  # seconds
    timer_warning: bool = False

    @property
    def wall_ms_median(self) -> float:
        import statistics

        return 1000.0 * statistics.median(self.wall_times)

    @property
    def wall_ms_min(self) -> float:
        return 1000.0 * min(self.wall_times)


CSV_HEADER = "variant,T,d,flops,params,peak_mem_bytes,wall_ms_median,wall_ms_min"


def reports_to_csv(reports: list[CostReport]) -> str:
    lines = [CSV_HEADER]
    for r in reports:
        lines.append(f"{r.variant},{r.t},{r.d},{r.flops},{r.params},"
                     f"{r.peak_mem_bytes},{r.wall_ms_median:.6f},{r.wall_ms_min:.6f}")
    return "\n".join(lines) + "\n"


def parse_csv(text: str) -> list[dict]:
    lines = [ln for ln in text.strip().splitlines() if ln]
    if lines[0] != CSV_HEADER:
        raise ValueError("unexpected CSV header")
    rows = []
    for ln in lines[1:]:
        v, t, d, fl, p, mem, med, mn = ln.split(",")
        rows.append(dict(variant=v, t=int(t), d=int(d), flops=int(fl),
                         params=int(p), peak_mem_bytes=int(mem),
                         wall_ms_median=float(med), wall_ms_min=float(mn)))
    return rows
