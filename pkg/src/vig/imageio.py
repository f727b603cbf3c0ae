"""Minimal image reading for the inference CLI: binary PPM (P6) and .npy.

PPM pixel values are scaled to [0, 1]; .npy files must already hold an
(H, W, 3) float array.
"""

import numpy as np


def read_ppm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P6"):
        raise ValueError("only binary PPM (P6) is supported")
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":  # comment line
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    width, height, maxval = (int(v) for v in fields)
    if maxval > 255:
        raise ValueError("16-bit PPM not supported")
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height * 3, offset=pos)
    return pixels.reshape(height, width, 3).astype(np.float64) / maxval


def write_ppm(path: str, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) image")
    data = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        f.write(data.tobytes())


def read_image(path: str) -> np.ndarray:
    if path.endswith(".npy"):
        img = np.load(path)
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValueError("expected an (H, W, 3) array")
        return img.astype(np.float64)
    if path.endswith((".ppm", ".pnm")):
        return read_ppm(path)
    raise ValueError(f"unsupported image format: {path!r} (use .ppm or .npy)")
