"""Binary weights container.

Layout (all integers little-endian):

    bytes 0:4    magic "VIGW"
    bytes 4:8    format version, u32 (currently 1)
    bytes 8:16   header length in bytes, u64
    header       utf-8 text, one line per tensor: "name dtype shape offset"
                 with shape as dims joined by "x" and offset relative to the
                 start of the payload
    payload      raw little-endian float32 tensor data, in header order

Offsets are strictly increasing and the payload length equals the sum of the
tensor byte sizes, so save -> load -> save reproduces the file bit for bit.
"""

import io
import struct

import numpy as np

from .model import ViGConfig, ViGParams, init_vig_params, named_parameters

MAGIC = b"VIGW"
VERSION = 1
DTYPE = np.dtype("<f4")


def serialize_weights(tensors: dict[str, np.ndarray]) -> bytes:
    header_lines = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        if " " in name:
            raise ValueError(f"tensor name {name!r} must not contain spaces")
        data = np.ascontiguousarray(arr, dtype=DTYPE).tobytes()
        shape = "x".join(str(s) for s in arr.shape)
        header_lines.append(f"{name} f32 {shape} {offset}")
        blobs.append(data)
        offset += len(data)
    header = ("\n".join(header_lines) + "\n").encode("utf-8")
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", VERSION))
    out.write(struct.pack("<Q", len(header)))
    out.write(header)
    for blob in blobs:
        out.write(blob)
    return out.getvalue()


def deserialize_weights(data: bytes) -> dict[str, np.ndarray]:
    if data[:4] != MAGIC:
        raise ValueError("not a weights file (bad magic)")
    (version,) = struct.unpack("<I", data[4:8])
    if version != VERSION:
        raise ValueError(f"unsupported weights version {version}")
    (header_len,) = struct.unpack("<Q", data[8:16])
    header = data[16 : 16 + header_len].decode("utf-8")
    payload = data[16 + header_len :]
    tensors: dict[str, np.ndarray] = {}
    prev_offset = -1
    total = 0
    for line in header.strip().splitlines():
        name, dtype, shape_s, offset_s = line.split(" ")
        if dtype != "f32":
            raise ValueError(f"unsupported dtype {dtype!r}")
        shape = tuple(int(s) for s in shape_s.split("x")) if shape_s else ()
        offset = int(offset_s)
        if offset <= prev_offset:
            raise ValueError("tensor offsets must be strictly increasing")
        prev_offset = offset
        n = int(np.prod(shape)) if shape else 1
        raw = payload[offset : offset + n * DTYPE.itemsize]
        if len(raw) != n * DTYPE.itemsize:
            raise ValueError(f"payload truncated for tensor {name!r}")
        tensors[name] = np.frombuffer(raw, dtype=DTYPE).reshape(shape)
        total += len(raw)
    if total != len(payload):
        raise ValueError("payload length does not match header")
    return tensors


def save_weights(path: str, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(serialize_weights(tensors))


def load_weights(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        return deserialize_weights(f.read())


def params_to_tensors(params: ViGParams, config: ViGConfig) -> dict[str, np.ndarray]:
    """Flatten model parameters, appending the head count as metadata.

    Every other hyperparameter is recoverable from tensor shapes; the head
    count is not, so it rides along as a one-element tensor.
    """
    tensors = dict(named_parameters(params))
    tensors["meta.heads"] = np.array([float(config.heads)])
    return tensors


def tensors_to_params(tensors: dict[str, np.ndarray]) -> tuple[ViGParams, ViGConfig]:
    """Rebuild (params, config) from a flattened tensor dict."""
    if "meta.heads" not in tensors:
        raise ValueError("weights file lacks the meta.heads entry")
    heads = int(tensors["meta.heads"][0])
    pos = tensors["pos_embed"]
    tokens, dim = pos.shape
    grid = int(round(tokens ** 0.5))
    if grid * grid != tokens:
        raise ValueError("token count is not a square grid")
    depth = 1 + max(int(name.split(".")[1]) for name in tensors
                    if name.startswith("blocks."))
    num_classes = tensors["head_b"].shape[0]
    config = ViGConfig(image_size=grid * 16, depth=depth, dim=dim, heads=heads,
                       num_classes=num_classes)
    params = init_vig_params(config, seed=0)
    loaded = dict(tensors)
    loaded.pop("meta.heads")
    expected = dict(named_parameters(params))
    if set(loaded) != set(expected):
        missing = set(expected) - set(loaded)
        extra = set(loaded) - set(expected)
        raise ValueError(f"weights mismatch: missing {sorted(missing)}, "
                         f"unexpected {sorted(extra)}")
    for name, target in expected.items():
        src = loaded[name]
        if src.shape != target.shape:
            raise ValueError(f"shape mismatch for {name}: {src.shape} vs {target.shape}")
        target[...] = src.astype(np.float64)
    return params, config
