"""Pydantic request/response models for the service endpoints."""

import base64

import numpy as np
from pydantic import BaseModel, Field


class FlopsRequest(BaseModel):
    seq_len: int = Field(ge=1, description="number of tokens T")
    dim: int = Field(ge=1, description="embedding width d")


class FlopsResponse(BaseModel):
    seq_len: int
    dim: int
    bigla: int
    softmax_attn: int


class ParamsRequest(BaseModel):
    config: str = "vig-t"
    image_size: int = 224
    num_classes: int = 1000


class ParamsResponse(BaseModel):
    config: str
    total: int
    breakdown: dict[str, int]


class CheckRequest(BaseModel):
    names: list[str] | None = None


class CheckResultModel(BaseModel):
    name: str
    passed: bool
    detail: str
    seconds: float


class CheckResponse(BaseModel):
    passed: bool
    results: list[CheckResultModel]


class BenchRequest(BaseModel):
    variants: list[str] = ["bigla_fused", "softmax_attn"]
    seq_lens: list[int] = [1024, 2048, 4096, 8192, 16384]
    dim: int = 64
    repeats: int = Field(default=3, ge=1)
    chunk: int = Field(default=64, ge=1)
    dtype: str = "f32"
    seed: int = 0


class CostReportModel(BaseModel):
    variant: str
    t: int
    d: int
    flops: int
    params: int
    peak_mem_bytes: int
    wall_times: list[float]
    wall_ms_median: float
    wall_ms_min: float
    timer_warning: bool


class BenchResponse(BaseModel):
    reports: list[CostReportModel]
    slopes: dict[str, float]
    csv: str


class TrainRequest(BaseModel):
    task: str = "bars"
    steps: int = Field(ge=1)
    seed: int = 0
    config: str = "vig-tiny"
    batch_size: int = Field(default=32, ge=1)
    lr: float = 1e-3
    weight_decay: float = 0.05
    eval_every: int = 100
    eval_size: int = 256
    force_local: bool = False
    stop_at_acc: float | None = None


class MetricsRowModel(BaseModel):
    step: int
    loss: float
    lr: float
    heldout_acc: float | None = None


class TrainResponse(BaseModel):
    task: str
    steps_run: int
    final_acc: float
    history: list[MetricsRowModel]
    metrics_csv: str
    weights_b64: str


class InferRequest(BaseModel):
    weights_b64: str
    image_b64: str
    image_shape: list[int]


class InferResponse(BaseModel):
    logits: list[float]
    predicted: int


def encode_array(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode()


def decode_array(b64: str, shape) -> np.ndarray:
    raw = base64.b64decode(b64)
    arr = np.frombuffer(raw, dtype="<f8")
    return arr.reshape(tuple(shape)).astype(np.float64)


def encode_bytes(data: bytes) -> str:
    return base64.b64encode(data).decode()


def decode_bytes(b64: str) -> bytes:
    return base64.b64decode(b64)
