import struct

import numpy as np
import pytest

from vig.model import init_vig_params, named_parameters, preset_config
from vig.weights_io import (
    MAGIC,
    deserialize_weights,
    load_weights,
    params_to_tensors,
    save_weights,
    serialize_weights,
    tensors_to_params,
)


def tiny_tensors():
    cfg = preset_config("vig-tiny")
    params = init_vig_params(cfg, seed=0)
    return params_to_tensors(params, cfg), params, cfg


class TestFormat:
    def test_magic_and_version(self):
        blob = serialize_weights({"a": np.arange(4.0)})
        assert blob[:4] == MAGIC
        assert struct.unpack("<I", blob[4:8])[0] == 1

    def test_header_lists_name_dtype_shape_offset(self):
        blob = serialize_weights({"w": np.zeros((2, 3)), "b": np.zeros(3)})
        header_len = struct.unpack("<Q", blob[8:16])[0]
        header = blob[16 : 16 + header_len].decode()
        lines = header.strip().splitlines()
        assert lines[0] == "w f32 2x3 0"
        assert lines[1] == "b f32 3 24"  # offsets strictly increasing

    def test_payload_length_matches(self):
        tensors, _, _ = tiny_tensors()
        blob = serialize_weights(tensors)
        header_len = struct.unpack("<Q", blob[8:16])[0]
        payload = len(blob) - 16 - header_len
        assert payload == sum(4 * t.size for t in tensors.values())

    def test_bad_magic_rejected(self):
        blob = serialize_weights({"a": np.zeros(2)})
        with pytest.raises(ValueError):
            deserialize_weights(b"XXXX" + blob[4:])

    def test_truncated_payload_rejected(self):
        blob = serialize_weights({"a": np.zeros(8)})
        with pytest.raises(ValueError):
            deserialize_weights(blob[:-4])


class TestRoundTrip:
    def test_save_load_bitwise(self, tmp_path):
        tensors, _, _ = tiny_tensors()
        path = str(tmp_path / "w.bin")
        save_weights(path, tensors)
        loaded = load_weights(path)
        assert list(loaded) == list(tensors)
        for name in tensors:
            assert np.array_equal(loaded[name],
                                  tensors[name].astype(np.float32)), name

    def test_save_of_load_is_identity(self, tmp_path):
        tensors, _, _ = tiny_tensors()
        blob1 = serialize_weights(tensors)
        blob2 = serialize_weights(deserialize_weights(blob1))
        assert blob1 == blob2

    def test_params_reconstruction(self):
        tensors, params, cfg = tiny_tensors()
        rebuilt, cfg2 = tensors_to_params(deserialize_weights(
            serialize_weights(tensors)))
        assert cfg2 == cfg
        for (n1, a), (n2, b) in zip(named_parameters(params),
                                    named_parameters(rebuilt)):
            assert n1 == n2
            assert np.array_equal(b, a.astype(np.float32).astype(np.float64)), n1

    def test_missing_meta_rejected(self):
        tensors, _, _ = tiny_tensors()
        tensors.pop("meta.heads")
        with pytest.raises(ValueError):
            tensors_to_params(tensors)
