import numpy as np
import pytest
from fastapi.testclient import TestClient

from vig.service.app import app
from vig.service.schemas import decode_bytes, encode_array, encode_bytes
from vig.weights_io import deserialize_weights, tensors_to_params
from vig.model import vig_forward


@pytest.fixture(scope="module")
def client():
    with TestClient(app) as c:
        yield c


class TestBasics:
    def test_health(self, client):
        resp = client.get("/health")
        assert resp.status_code == 200
        assert resp.json()["status"] == "ok"

    def test_flops(self, client):
        resp = client.post("/flops", json={"seq_len": 196, "dim": 192})
        body = resp.json()
        assert body["bigla"] == 37_330_944
        assert body["softmax_attn"] == 4 * 196 * 192 ** 2 + 2 * 196 ** 2 * 192

    def test_flops_validation(self, client):
        assert client.post("/flops", json={"seq_len": 0, "dim": 4}).status_code == 422

    def test_params(self, client):
        resp = client.post("/params", json={"config": "vig-t"})
        body = resp.json()
        assert abs(body["total"] - 5_830_000) <= 583_000
        assert body["total"] == sum(body["breakdown"].values())

    def test_params_unknown_config(self, client):
        assert client.post("/params", json={"config": "vig-xxl"}).status_code == 422


class TestCheck:
    def test_subset_passes(self, client):
        resp = client.post("/check", json={
            "names": ["accounting", "determinism", "weights_roundtrip"]})
        body = resp.json()
        assert body["passed"] is True
        assert [r["name"] for r in body["results"]] == [
            "accounting", "determinism", "weights_roundtrip"]

    def test_unknown_check_rejected(self, client):
        assert client.post("/check", json={"names": ["nope"]}).status_code == 422


class TestBench:
    def test_smoke(self, client):
        resp = client.post("/bench", json={
            "variants": ["bigla_fused"], "seq_lens": [64, 128], "dim": 32,
            "repeats": 2, "chunk": 16})
        body = resp.json()
        assert len(body["reports"]) == 2
        assert body["csv"].startswith(
            "variant,T,d,flops,params,peak_mem_bytes,wall_ms_median,wall_ms_min")
        assert "bigla_fused" in body["slopes"]

    def test_unknown_variant(self, client):
        resp = client.post("/bench", json={"variants": ["warp_drive"],
                                           "seq_lens": [64]})
        assert resp.status_code == 422


class TestTrainInfer:
    def test_train_then_infer(self, client):
        resp = client.post("/train", json={
            "task": "bars", "steps": 60, "seed": 0, "batch_size": 8,
            "eval_every": 30, "eval_size": 32})
        assert resp.status_code == 200
        body = resp.json()
        assert body["steps_run"] == 60
        assert len(body["history"]) == 60
        assert body["metrics_csv"].startswith("step,loss,lr,heldout_acc")
        weights = decode_bytes(body["weights_b64"])

        # run the same weights locally and through the endpoint
        params, cfg = tensors_to_params(deserialize_weights(weights))
        rng = np.random.default_rng(0)
        img = rng.normal(size=(32, 32, 3))
        expected = vig_forward(img, params, cfg)
        resp2 = client.post("/infer", json={
            "weights_b64": encode_bytes(weights),
            "image_b64": encode_array(img),
            "image_shape": [32, 32, 3]})
        assert resp2.status_code == 200
        body2 = resp2.json()
        assert np.allclose(body2["logits"], expected, rtol=0, atol=1e-12)
        assert body2["predicted"] == int(np.argmax(expected))

    def test_train_validation(self, client):
        assert client.post("/train", json={"task": "nope", "steps": 1}).status_code == 422
        assert client.post("/train", json={"task": "bars", "steps": 0}).status_code == 422

    def test_infer_rejects_garbage(self, client):
        resp = client.post("/infer", json={
            "weights_b64": encode_bytes(b"not a weights file"),
            "image_b64": encode_array(np.zeros((2, 2, 3))),
            "image_shape": [2, 2, 3]})
        assert resp.status_code == 422
