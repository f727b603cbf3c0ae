"""Runtime correctness suite behind the `check` command and /check endpoint.

Each check is a fast, self-contained consistency probe: cross-form oracle
equivalences, gradient spot checks against finite differences, accounting
identities and serialization round-trips. The pytest suite runs the same
properties at acceptance scale; this module is the quick operational subset.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import autograd as F
from .attention import init_attn_params, linear_attention, project_qkv, \
    softmax_attention_parallel, softmax_attention_recurrent
from .autograd import Var, finite_diff_check
from .bigla import bigla_fused_scan, bigla_scan_two_pass, init_bigla_params, \
    bigla_fused, bigla_two_pass
from .costs import bigla_extra_params, flops_bigla, flops_softmax_attn
from .gla import GateParams, compute_gates, gla_chunkwise, gla_recurrent
from .model import init_vig_params, map_parameters, named_parameters, \
    preset_config, vig_forward
from .weights_io import deserialize_weights, params_to_tensors, serialize_weights


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(float(np.abs(a).max(initial=0.0)), 1e-30)
    return float(np.abs(a - b).max(initial=0.0)) / scale


def check_softmax_forms(n: int = 200, seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        t, d = int(rng.integers(1, 17)), int(rng.integers(2, 9))
        x = rng.normal(size=(t, d))
        p = init_attn_params(rng, d, std=1.0)
        worst = max(worst, _rel_err(softmax_attention_parallel(x, p, causal=True),
                                    softmax_attention_recurrent(x, p)))
    return worst < 1e-10, f"max rel err {worst:.2e} over {n} instances"


def check_gate_free_reduction(n: int = 200, seed: int = 1) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        t, d = int(rng.integers(1, 17)), int(rng.integers(2, 9))
        x = rng.normal(size=(t, d))
        p = init_attn_params(rng, d, std=1.0)
        q, k, v = project_qkv(x, p)
        o_gla, _ = gla_recurrent(q, k, v, np.ones((t, d)))
        worst = max(worst, _rel_err(linear_attention(x, p, causal=True), o_gla))
    return worst < 1e-12, f"max rel err {worst:.2e} over {n} instances"


def check_chunkwise_equivalence(n: int = 60, seed: int = 2) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        t = int(rng.integers(1, 33))
        q, k = rng.normal(size=(2, t, 4))
        v = rng.normal(size=(t, 5))
        alpha = rng.uniform(1e-4, 1.0, size=(t, 4))
        o_ref, s_ref = gla_recurrent(q, k, v, alpha)
        for chunk in (1, 2, 3, 5, 8, t):
            o, s = gla_chunkwise(q, k, v, alpha, chunk)
            worst = max(worst, _rel_err(o_ref, o), _rel_err(s_ref, s))
    return worst < 1e-9, f"max rel err {worst:.2e} over chunk sizes 1,2,3,5,8,T"


def check_fused_bidirectional(n: int = 200, seed: int = 3) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        t = int(rng.integers(1, 49))
        chunk = int(rng.integers(1, t + 2))
        q, k = rng.normal(size=(2, t, 4))
        v = rng.normal(size=(t, 5))
        af = rng.uniform(1e-3, 1.0, size=(t, 4))
        ab = rng.uniform(1e-3, 1.0, size=(t, 4))
        worst = max(worst, _rel_err(bigla_scan_two_pass(q, k, v, af, ab),
                                    bigla_fused_scan(q, k, v, af, ab, chunk)))
    return worst < 1e-10, f"max rel err {worst:.2e} over {n} instances"


def check_layer_gates(seed: int = 4) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(12, 8))
    p = init_bigla_params(rng, 8)
    err = _rel_err(bigla_two_pass(x, p), bigla_fused(x, p, chunk=5))
    expected = 0.5 ** (1.0 / 16.0)
    g = compute_gates(np.zeros((1, 8)), GateParams(
        w1=rng.normal(size=(8, 16)), w2=np.zeros((16, 4)), b=np.zeros((1, 4))))
    gate_err = abs(float(g[0, 0]) - expected)
    ok = err < 1e-10 and gate_err < 1e-12
    return ok, f"layer rel err {err:.2e}; zero-input gate err {gate_err:.2e}"


def check_gradients(seed: int = 5) -> tuple[bool, str]:
    cfg = preset_config("vig-tiny")
    params = init_vig_params(cfg, seed=seed)
    rng = np.random.default_rng(seed)
    img = rng.normal(size=(1, 32, 32, 3))
    label = np.array([1])

    def loss_of(_):
        return float(F.cross_entropy_mean(vig_forward(img, params, cfg), label))

    vparams = map_parameters(params, Var)
    loss = F.cross_entropy_mean(vig_forward(img, vparams, cfg), label)
    loss.backward()
    analytic = {n: v.grad for n, v in named_parameters(vparams)}
    rep = finite_diff_check(loss_of, dict(named_parameters(params)), analytic,
                            h=1e-5, n_samples=60, seed=0)
    return rep.max_rel_err < 1e-4, f"max rel err {rep.max_rel_err:.2e} over 60 coords"


def check_impl_gradient_match(seed: int = 6) -> tuple[bool, str]:
    cfg = preset_config("vig-tiny")
    params = init_vig_params(cfg, seed=seed)
    rng = np.random.default_rng(seed)
    img = rng.normal(size=(1, 32, 32, 3))
    label = np.array([0])
    grads = {}
    for impl in ("fused", "two_pass"):
        vparams = map_parameters(params, Var)
        loss = F.cross_entropy_mean(vig_forward(img, vparams, cfg, impl=impl), label)
        loss.backward()
        grads[impl] = {n: v.grad for n, v in named_parameters(vparams)}
    worst = max(_rel_err(grads["fused"][n], grads["two_pass"][n]) for n in grads["fused"])
    return worst < 1e-9, f"max rel err between impl gradients {worst:.2e}"


def check_weights_roundtrip(seed: int = 7) -> tuple[bool, str]:
    cfg = preset_config("vig-tiny")
    params = init_vig_params(cfg, seed=seed)
    blob = serialize_weights(params_to_tensors(params, cfg))
    blob2 = serialize_weights(deserialize_weights(blob))
    return blob == blob2, f"{len(blob)} bytes, bit-identical re-serialization"


def check_accounting() -> tuple[bool, str]:
    ok_flops = (flops_bigla(196, 192) == 37_330_944
                and flops_softmax_attn(196, 192) == 4 * 196 * 192 ** 2 + 2 * 196 ** 2 * 192)
    ok_delta = all(bigla_extra_params(d) == 17 * (d // 2) for d in (32, 64, 192, 384, 768))
    return ok_flops and ok_delta, "closed-form FLOPs and 17*d_k parameter delta"


def check_determinism(seed: int = 8) -> tuple[bool, str]:
    cfg = preset_config("vig-tiny")
    params = init_vig_params(cfg, seed=seed)
    img = np.random.default_rng(seed).normal(size=(32, 32, 3))
    a = vig_forward(img, params, cfg)
    b = vig_forward(img, params, cfg)
    return bool(np.array_equal(a, b)), "repeated forward is bitwise identical"


CHECKS = {
    "softmax_forms": check_softmax_forms,
    "gate_free_reduction": check_gate_free_reduction,
    "chunkwise_equivalence": check_chunkwise_equivalence,
    "fused_bidirectional": check_fused_bidirectional,
    "layer_gates": check_layer_gates,
    "gradients": check_gradients,
    "impl_gradient_match": check_impl_gradient_match,
    "weights_roundtrip": check_weights_roundtrip,
    "accounting": check_accounting,
    "determinism": check_determinism,
}


def run_checks(names=None) -> list[CheckResult]:
    results = []
    for name in names or CHECKS:
        if name not in CHECKS:
            raise KeyError(f"unknown check {name!r}; available: {sorted(CHECKS)}")
        t0 = time.perf_counter()
        try:
            passed, detail = CHECKS[name]()
        except Exception as exc:  # a crash is a failure, not an abort
            passed, detail = False, f"raised {type(exc).__name__}: {exc}"
        results.append(CheckResult(name, passed, detail, time.perf_counter() - t0))
    return results
