"""FastAPI service exposing the library: accounting, correctness checks,
scaling benchmarks, desk-scale training and inference.

The bench and train endpoints run synchronously and are sized for desk-scale
work; point the CLI at a dedicated server for anything longer.
"""

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..bench import VARIANTS, scaling_sweep, sweep_slopes
from ..checks import CHECKS, run_checks
from ..costs import flops_bigla, flops_softmax_attn, reports_to_csv
from ..model import PRESETS, ViGConfig, param_count, preset_config, vig_forward
from ..train import TrainingDiverged, make_task, metrics_csv, train
from ..weights_io import deserialize_weights, params_to_tensors, \
    serialize_weights, tensors_to_params
from .schemas import (
    BenchRequest,
    BenchResponse,
    CheckRequest,
    CheckResponse,
    CheckResultModel,
    CostReportModel,
    FlopsRequest,
    FlopsResponse,
    InferRequest,
    InferResponse,
    MetricsRowModel,
    ParamsRequest,
    ParamsResponse,
    TrainRequest,
    TrainResponse,
    decode_array,
    decode_bytes,
    encode_bytes,
)

app = FastAPI(
    title="vig",
    version=__version__,
    description="Linear-complexity visual sequence modeling service",
)


@app.get("/health")
def health():
    return {"status": "ok", "version": __version__}


@app.post("/flops", response_model=FlopsResponse)
def flops(req: FlopsRequest) -> FlopsResponse:
    return FlopsResponse(seq_len=req.seq_len, dim=req.dim,
                         bigla=flops_bigla(req.seq_len, req.dim),
                         softmax_attn=flops_softmax_attn(req.seq_len, req.dim))


@app.post("/params", response_model=ParamsResponse)
def params(req: ParamsRequest) -> ParamsResponse:
    if req.config not in PRESETS:
        raise HTTPException(status_code=422,
                            detail=f"unknown config; choose from {sorted(PRESETS)}")
    cfg = preset_config(req.config, req.image_size, req.num_classes)
    total, breakdown = param_count(cfg)
    return ParamsResponse(config=req.config, total=total, breakdown=breakdown)


@app.post("/check", response_model=CheckResponse)
def check(req: CheckRequest) -> CheckResponse:
    try:
        results = run_checks(req.names)
    except KeyError as exc:
        raise HTTPException(status_code=422, detail=str(exc))
    models = [CheckResultModel(name=r.name, passed=r.passed, detail=r.detail,
                               seconds=r.seconds) for r in results]
    return CheckResponse(passed=all(r.passed for r in results), results=models)


@app.post("/bench", response_model=BenchResponse)
def bench(req: BenchRequest) -> BenchResponse:
    unknown = [v for v in req.variants if v not in VARIANTS]
    if unknown:
        raise HTTPException(status_code=422,
                            detail=f"unknown variants {unknown}; "
                                   f"available: {sorted(VARIANTS)}")
    if req.dtype not in ("f32", "f64"):
        raise HTTPException(status_code=422, detail="dtype must be f32 or f64")
    reports = scaling_sweep(req.variants, req.seq_lens, req.dim, req.repeats,
                            req.chunk, req.dtype, req.seed)
    models = [CostReportModel(
        variant=r.variant, t=r.t, d=r.d, flops=r.flops, params=r.params,
        peak_mem_bytes=r.peak_mem_bytes, wall_times=r.wall_times,
        wall_ms_median=r.wall_ms_median, wall_ms_min=r.wall_ms_min,
        timer_warning=r.timer_warning) for r in reports]
    return BenchResponse(reports=models, slopes=sweep_slopes(reports),
                         csv=reports_to_csv(reports))


@app.post("/train", response_model=TrainResponse)
def train_endpoint(req: TrainRequest) -> TrainResponse:
    try:
        task = make_task(req.task)
    except ValueError as exc:
        raise HTTPException(status_code=422, detail=str(exc))
    if req.config not in PRESETS:
        raise HTTPException(status_code=422,
                            detail=f"unknown config; choose from {sorted(PRESETS)}")
    cfg = preset_config(req.config, image_size=task.image_size,
                        num_classes=task.num_classes)
    try:
        result = train(cfg, task, steps=req.steps, seed=req.seed,
                       batch_size=req.batch_size, lr=req.lr,
                       weight_decay=req.weight_decay, eval_every=req.eval_every,
                       eval_size=req.eval_size, force_local=req.force_local,
                       stop_at_acc=req.stop_at_acc)
    except TrainingDiverged as exc:
        raise HTTPException(status_code=422, detail=str(exc))
    blob = serialize_weights(params_to_tensors(result.params, cfg))
    history = [MetricsRowModel(step=r.step, loss=r.loss, lr=r.lr,
                               heldout_acc=r.heldout_acc) for r in result.history]
    return TrainResponse(task=req.task, steps_run=result.steps_run,
                         final_acc=result.final_acc, history=history,
                         metrics_csv=metrics_csv(result.history),
                         weights_b64=encode_bytes(blob))


@app.post("/infer", response_model=InferResponse)
def infer(req: InferRequest) -> InferResponse:
    try:
        tensors = deserialize_weights(decode_bytes(req.weights_b64))
        model_params, cfg = tensors_to_params(tensors)
        img = decode_array(req.image_b64, req.image_shape)
        logits = vig_forward(img, model_params, cfg)
    except (ValueError, KeyError) as exc:
        raise HTTPException(status_code=422, detail=str(exc))
    return InferResponse(logits=[float(v) for v in logits],
                         predicted=int(logits.argmax()))
