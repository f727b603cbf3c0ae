"""End-to-end non-hierarchical ViG classifier.

Pipeline: two-stage strided patch embedding (16x downsample), learnable
position embeddings, a stack of mixing blocks, a final RMSNorm, global
average pooling and a linear head. Named presets vig-t/s/b share depth 12
and differ in width and head count; vig-tiny is the desk-scale config used
by the trainer and the gradient checks.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import autograd as F
from .block import (
    NORM_EPS,
    BlockParams,
    ffn_hidden,
    init_block_params,
    vig_block_forward,
)
from .gla import DEFAULT_CHUNK
from .tensor_ops import Array, ShapeError

PATCH_SIZE = 16
GATE_RANK = 16


@dataclass
class ViGConfig:
    image_size: int
    depth: int
    dim: int
    heads: int
    num_classes: int
    patch_size: int = PATCH_SIZE

    def __post_init__(self):
        if self.patch_size != PATCH_SIZE:
            raise ValueError("the patch embedding realizes a fixed x16 downsample")
        if self.image_size % self.patch_size != 0:
            raise ValueError("image_size must be divisible by the patch size")
        if self.dim % (2 * self.heads) != 0:
            raise ValueError("dim must be divisible by 2*heads")

    @property
    def grid(self) -> tuple[int, int]:
        g = self.image_size // self.patch_size
        return (g, g)

    @property
    def tokens(self) -> int:
        g = self.image_size // self.patch_size
        return g * g


PRESETS = {
    "vig-t": dict(depth=12, dim=192, heads=3),
    "vig-s": dict(depth=12, dim=384, heads=6),
    "vig-b": dict(depth=12, dim=768, heads=12),
    "vig-tiny": dict(depth=2, dim=32, heads=1),
}


def preset_config(name: str, image_size: int = 224, num_classes: int = 1000) -> ViGConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown config {name!r}; choose from {sorted(PRESETS)}")
    if name == "vig-tiny" and image_size == 224:
        image_size, num_classes = 32, 2
    return ViGConfig(image_size=image_size, num_classes=num_classes, **PRESETS[name])


@dataclass
class ViGParams:
    embed_w1: Array  # (9, 9, 3, d), stride 8
    embed_b1: Array
    embed_w2: Array  # (3, 3, d, d), stride 2
    embed_b2: Array
    pos_embed: Array  # (T, d)
    blocks: list[BlockParams] = field(default_factory=list)
    final_norm_gain: Array = None
    head_w: Array = None
    head_b: Array = None


def init_vig_params(config: ViGConfig, seed: int = 0, std: float = 0.02) -> ViGParams:
    rng = np.random.default_rng(seed)
    d = config.dim
    return ViGParams(
        embed_w1=rng.normal(0.0, std, (9, 9, 3, d)),
        embed_b1=np.zeros(d),
        embed_w2=rng.normal(0.0, std, (3, 3, d, d)),
        embed_b2=np.zeros(d),
        pos_embed=rng.normal(0.0, std, (config.tokens, d)),
        blocks=[init_block_params(rng, d, config.heads, std) for _ in range(config.depth)],
        final_norm_gain=np.ones(d),
        head_w=rng.normal(0.0, std, (d, config.num_classes)),
        head_b=np.zeros(config.num_classes),
    )


def named_parameters(params: ViGParams):
    """Yield (name, array) for every learnable tensor, in a stable order."""
    yield "embed_w1", params.embed_w1
    yield "embed_b1", params.embed_b1
    yield "embed_w2", params.embed_w2
    yield "embed_b2", params.embed_b2
    yield "pos_embed", params.pos_embed
    for i, blk in enumerate(params.blocks):
        p = f"blocks.{i}."
        yield p + "norm1_gain", blk.norm1_gain
        yield p + "dw_filters", blk.dw_filters
        yield p + "dw_bias", blk.dw_bias
        yield p + "bigla.w_q", blk.bigla.w_q
        yield p + "bigla.w_k", blk.bigla.w_k
        yield p + "bigla.w_v", blk.bigla.w_v
        yield p + "bigla.w_o", blk.bigla.w_o
        yield p + "bigla.w1", blk.bigla.w1
        yield p + "bigla.w2", blk.bigla.w2
        yield p + "bigla.b", blk.bigla.b
        yield p + "gate2d_w", blk.gate2d_w
        yield p + "gate2d_b", blk.gate2d_b
        yield p + "norm2_gain", blk.norm2_gain
        yield p + "ffn_w_gate", blk.ffn_w_gate
        yield p + "ffn_w_up", blk.ffn_w_up
        yield p + "ffn_w_down", blk.ffn_w_down
    yield "final_norm_gain", params.final_norm_gain
    yield "head_w", params.head_w
    yield "head_b", params.head_b


def map_parameters(params: ViGParams, fn) -> ViGParams:
    """Rebuild the parameter tree with fn applied to every array leaf."""
    blocks = []
    for blk in params.blocks:
        bigla = replace(blk.bigla, w_q=fn(blk.bigla.w_q), w_k=fn(blk.bigla.w_k),
                        w_v=fn(blk.bigla.w_v), w_o=fn(blk.bigla.w_o),
                        w1=fn(blk.bigla.w1), w2=fn(blk.bigla.w2), b=fn(blk.bigla.b))
        blocks.append(replace(blk, norm1_gain=fn(blk.norm1_gain),
                              dw_filters=fn(blk.dw_filters), dw_bias=fn(blk.dw_bias),
                              bigla=bigla, gate2d_w=fn(blk.gate2d_w),
                              gate2d_b=fn(blk.gate2d_b), norm2_gain=fn(blk.norm2_gain),
                              ffn_w_gate=fn(blk.ffn_w_gate), ffn_w_up=fn(blk.ffn_w_up),
                              ffn_w_down=fn(blk.ffn_w_down)))
    return replace(params, embed_w1=fn(params.embed_w1), embed_b1=fn(params.embed_b1),
                   embed_w2=fn(params.embed_w2), embed_b2=fn(params.embed_b2),
                   pos_embed=fn(params.pos_embed), blocks=blocks,
                   final_norm_gain=fn(params.final_norm_gain),
                   head_w=fn(params.head_w), head_b=fn(params.head_b))


def patch_embed(img, params: ViGParams):
    """(..., H, W, 3) -> (..., H/16, W/16, d) token grid.

    Stage 1 is a 9x9 convolution with stride 8 (padding 4) into width d,
    followed by silu; stage 2 a 3x3 convolution with stride 2 (padding 1).
    """
    if img.shape[-3] % PATCH_SIZE or img.shape[-2] % PATCH_SIZE:
        raise ShapeError("image sides must be divisible by 16")
    h = F.silu(F.conv2d(img, params.embed_w1, params.embed_b1, stride=8, padding=4))
    return F.conv2d(h, params.embed_w2, params.embed_b2, stride=2, padding=1)


def vig_forward(img, params: ViGParams, config: ViGConfig,
                chunk: int = DEFAULT_CHUNK, impl: str = "fused",
                force_local: bool = False):
    """Image (..., H, W, 3) -> logits (..., num_classes)."""
    if img.shape[-3] != config.image_size or img.shape[-2] != config.image_size:
        raise ShapeError(
            f"expected {config.image_size}x{config.image_size} input, "
            f"got {img.shape[-3]}x{img.shape[-2]}")
    x = patch_embed(img, params)
    gh, gw, d = x.shape[-3], x.shape[-2], x.shape[-1]
    lead = x.shape[:-3]
    x = F.add(x, F.reshape(params.pos_embed, (gh, gw, d)))
    for blk in params.blocks:
        x = vig_block_forward(x, blk, chunk, impl, force_local)
    x = F.rmsnorm(x, params.final_norm_gain, NORM_EPS)
    pooled = F.mean(F.reshape(x, lead + (gh * gw, d)), -2)
    logits = F.matmul(F.reshape(pooled, lead + (1, d)), params.head_w)
    return F.reshape(F.add(logits, params.head_b), lead + (params.head_b.shape[0],))


def resample_pos_embed(pos: Array, grid_from: tuple[int, int],
                       grid_to: tuple[int, int]) -> Array:
    """Bilinearly resample position embeddings to a new token grid.

    Resampling onto the original grid is the identity (corner-aligned
    sample points land exactly on the source cells).
    """
    h0, w0 = grid_from
    h1, w1 = grid_to
    d = pos.shape[-1]
    grid = pos.reshape(h0, w0, d)

    def axis_coords(n_from: int, n_to: int) -> Array:
        if n_to == 1:
            return np.zeros(1)
        return np.arange(n_to) * (n_from - 1) / (n_to - 1)

    ys, xs = axis_coords(h0, h1), axis_coords(w0, w1)
    y0 = np.clip(np.floor(ys).astype(int), 0, max(h0 - 2, 0))
    x0 = np.clip(np.floor(xs).astype(int), 0, max(w0 - 2, 0))
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    y1 = np.minimum(y0 + 1, h0 - 1)
    x1 = np.minimum(x0 + 1, w0 - 1)
    out = ((1 - wy) * (1 - wx) * grid[np.ix_(y0, x0)]
           + (1 - wy) * wx * grid[np.ix_(y0, x1)]
           + wy * (1 - wx) * grid[np.ix_(y1, x0)]
           + wy * wx * grid[np.ix_(y1, x1)])
    return out.reshape(h1 * w1, d)


def param_shapes(config: ViGConfig) -> dict[str, tuple[int, ...]]:
    """Shapes of every learnable tensor, keyed by parameter name."""
    d, f, c = config.dim, ffn_hidden(config.dim), config.num_classes
    shapes: dict[str, tuple[int, ...]] = {
        "embed_w1": (9, 9, 3, d),
        "embed_b1": (d,),
        "embed_w2": (3, 3, d, d),
        "embed_b2": (d,),
        "pos_embed": (config.tokens, d),
    }
    for i in range(config.depth):
        p = f"blocks.{i}."
        shapes.update({
            p + "norm1_gain": (d,),
            p + "dw_filters": (3, 3, d),
            p + "dw_bias": (d,),
            p + "bigla.w_q": (d, d // 2),
            p + "bigla.w_k": (d, d // 2),
            p + "bigla.w_v": (d, d),
            p + "bigla.w_o": (d, d),
            p + "bigla.w1": (d, GATE_RANK),
            p + "bigla.w2": (GATE_RANK, d),
            p + "bigla.b": (1, d),
            p + "gate2d_w": (d, d),
            p + "gate2d_b": (1, d),
            p + "norm2_gain": (d,),
            p + "ffn_w_gate": (d, f),
            p + "ffn_w_up": (d, f),
            p + "ffn_w_down": (f, d),
        })
    shapes.update({
        "final_norm_gain": (d,),
        "head_w": (d, c),
        "head_b": (c,),
    })
    return shapes


def param_count(config: ViGConfig) -> tuple[int, dict[str, int]]:
    """Exact learnable-scalar count with a per-module breakdown."""
    breakdown: dict[str, int] = {}
    for name, shape in param_shapes(config).items():
        n = int(np.prod(shape))
        if name.startswith("blocks."):
            group = "blocks." + name.split(".")[1]
        elif name.startswith("embed_"):
            group = "patch_embed"
        elif name.startswith("head_"):
            group = "head"
        else:
            group = name
        breakdown[group] = breakdown.get(group, 0) + n
    return sum(breakdown.values()), breakdown
