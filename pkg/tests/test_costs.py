import numpy as np
import pytest

from vig.bench import (
    VARIANTS,
    fit_loglog_slope,
    resolution_to_tokens,
    scaling_sweep,
    sweep_slopes,
)
from vig.costs import (
    CostReport,
    bigla_extra_params,
    bigla_layer_params,
    flops_bigla,
    flops_softmax_attn,
    gla_layer_params,
    memory_estimate,
    parse_csv,
    reports_to_csv,
)


class TestFlops:
    def test_bigla_pinned_value(self):
        assert flops_bigla(196, 192) == 37_330_944

    def test_bigla_unit_scale(self):
        assert flops_bigla(1, 1) == 37

    def test_bigla_linear_in_t(self):
        for t, d in ((7, 16), (100, 64), (196, 192)):
            assert flops_bigla(2 * t, d) == 2 * flops_bigla(t, d)

    def test_softmax_closed_form(self):
        # independent arithmetic on the closed form 4Td^2 + 2T^2 d
        assert flops_softmax_attn(196, 192) == 4 * 196 * 192 ** 2 + 2 * 196 ** 2 * 192
        assert flops_softmax_attn(196, 192) == 43_653_120

    def test_softmax_t1(self):
        d = 48
        assert flops_softmax_attn(1, d) == 4 * d * d + 2 * d

    def test_ratio_grows_without_bound(self):
        d = 64
        ratios = [flops_softmax_attn(t, d) / flops_bigla(t, d)
                  for t in (64, 1024, 16384, 1 << 20)]
        assert all(b > a for a, b in zip(ratios, ratios[1:]))

    def test_invalid_args(self):
        with pytest.raises(ValueError):
            flops_bigla(0, 4)
        with pytest.raises(ValueError):
            flops_softmax_attn(4, 0)


class TestParams:
    def test_extra_parameter_delta_exact(self):
        for d in (16, 32, 64, 192, 384, 768):
            assert bigla_extra_params(d) == 17 * (d // 2)

    def test_layer_counts_match_allocated_arrays(self):
        from vig.bigla import init_bigla_params
        rng = np.random.default_rng(0)
        d = 32
        p = init_bigla_params(rng, d)
        n = sum(a.size for a in (p.w_q, p.w_k, p.w_v, p.w1, p.w2, p.b))
        # layer count includes the output projection (d*d) on top of these
        assert bigla_layer_params(d) == n + d * d


class TestMemoryEstimate:
    def test_fused_has_no_reversal_term(self):
        est = memory_estimate("bigla_fused", 1024, 64)
        assert "reversed_inputs" not in est
        assert est["block_summaries"] > 0

    def test_two_pass_pays_for_reversal(self):
        fused = memory_estimate("bigla_fused", 1024, 64)
        two_pass = memory_estimate("bigla_two_pass", 1024, 64)
        assert two_pass["reversed_inputs"] > 0
        assert sum(two_pass.values()) > sum(fused.values())

    def test_softmax_quadratic_term_dominates(self):
        small = memory_estimate("softmax_attn", 1024, 64)
        big = memory_estimate("softmax_attn", 4096, 64)
        assert big["scores"] == 16 * small["scores"]

    def test_unknown_variant(self):
        with pytest.raises(KeyError):
            memory_estimate("nope", 64, 64)


class TestCsv:
    def test_round_trip(self):
        reports = [CostReport("bigla_fused", 64, 32, 1000, 10, 2048,
                              [0.001, 0.002, 0.0015])]
        rows = parse_csv(reports_to_csv(reports))
        assert rows[0]["variant"] == "bigla_fused"
        assert rows[0]["t"] == 64 and rows[0]["flops"] == 1000
        assert rows[0]["wall_ms_median"] == pytest.approx(1.5)
        assert rows[0]["wall_ms_min"] == pytest.approx(1.0)

    def test_header_enforced(self):
        with pytest.raises(ValueError):
            parse_csv("a,b\n1,2\n")


class TestSweep:
    def test_slope_fit_recovers_exponent(self):
        ts = [256, 512, 1024, 2048]
        for p in (1.0, 2.0):
            times = [1e-6 * t ** p for t in ts]
            assert fit_loglog_slope(ts, times) == pytest.approx(p, abs=1e-9)

    def test_resolution_mapping(self):
        assert resolution_to_tokens(224) == 196
        assert resolution_to_tokens(1024) == 4096
        assert resolution_to_tokens(2048) == 16384

    def test_smoke_sweep_counts_exact(self):
        reports = scaling_sweep(["bigla_fused", "linear_attn"], t_list=(64, 128),
                                d=32, repeats=2, chunk=16)
        assert len(reports) == 4
        for r in reports:
            assert r.flops == VARIANTS[r.variant].flops(r.t, r.d)
            assert len(r.wall_times) == 2
            assert r.peak_mem_bytes > 0
        slopes = sweep_slopes(reports)
        assert set(slopes) == {"bigla_fused", "linear_attn"}

    def test_bad_repeats(self):
        with pytest.raises(ValueError):
            scaling_sweep(["bigla_fused"], t_list=(32,), repeats=0)
