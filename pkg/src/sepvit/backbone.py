"""Hierarchical four-stage SepViT backbone and its configuration presets."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import PWA_QK_MODES, BlockParams, TokenMode, WindowLayout, gsa_block, sepvit_block
from .errors import ConfigError, LayoutError, ShapeError
from .nn import LayerNorm, Linear, Module
from .tensor import DEFAULT_DTYPE, Rng, Tensor, conv2d, scope, xavier_uniform

DSSA = "DSSA"
GSA = "GSA"

# Block-type row shared by every published variant.
BLOCK_TYPES = (DSSA, f"{DSSA}&{GSA}", f"{DSSA}&{GSA}", DSSA)


def expand_block_pattern(stage_idx: int, depth: int, block_type_row: Sequence[str] = BLOCK_TYPES) -> tuple[str, ...]:
    """Per-block kinds for stage ``stage_idx`` (1-based).

    A "DSSA&GSA" entry alternates starting with DSSA; a plain entry repeats.
    """
    if depth < 1:
        raise ConfigError(f"stage depth must be >= 1, got {depth}")
    kinds = block_type_row[stage_idx - 1].split("&")
    for k in kinds:
        if k not in (DSSA, GSA):
            raise ConfigError(f"unknown block type {k!r}")
    return tuple(kinds[i % len(kinds)] for i in range(depth))


@dataclass(frozen=True)
class StageConfig:
    depth: int
    channels: int
    heads: int
    window: int
    group: int
    merge_stride: int
    merge_kernel: int
    block_pattern: tuple[str, ...]
    droppath_rates: tuple[float, ...] = ()

    @property
    def merge_pad(self) -> int:
        return self.merge_kernel // 2


@dataclass(frozen=True)
class ModelConfig:
    stages: tuple[StageConfig, ...]
    num_classes: int = 1000
    input_resolution: int = 224
    token_mode: str = TokenMode.LEARNABLE.value
    mlp_ratio: int = 4
    in_chans: int = 3
    pwa_qk: str = "shared"
    name: str = "custom"

    def __post_init__(self):
        TokenMode(self.token_mode)
        if self.pwa_qk not in PWA_QK_MODES:
            raise ConfigError(f"pwa_qk must be one of {PWA_QK_MODES}, got {self.pwa_qk!r}")
        if len(self.stages) != 4:
            raise ConfigError(f"expected 4 stages, got {len(self.stages)}")
        total = int(np.prod([s.merge_stride for s in self.stages]))
        if self.input_resolution % total:
            raise LayoutError(
                f"input resolution {self.input_resolution} not divisible by the total stride {total}"
            )
        for i, (s, side) in enumerate(zip(self.stages, self.stage_sides()), start=1):
            if len(s.block_pattern) != s.depth:
                raise ConfigError(f"stage {i}: pattern length {len(s.block_pattern)} != depth {s.depth}")
            if s.droppath_rates and len(s.droppath_rates) != s.depth:
                raise ConfigError(f"stage {i}: {len(s.droppath_rates)} droppath rates for depth {s.depth}")
            if s.heads < 1 or s.channels % s.heads:
                raise ConfigError(f"stage {i}: channels {s.channels} not divisible by heads {s.heads}")
            if s.merge_kernel % 2 == 0 or s.merge_kernel <= s.merge_stride:
                raise ConfigError(f"stage {i}: merge kernel {s.merge_kernel} must be odd and exceed stride {s.merge_stride}")
            for kind in set(s.block_pattern):
                g = s.group if kind == GSA else 1
                if side % (g * s.window):
                    raise LayoutError(f"stage {i}: {kind} window side {g * s.window} does not divide feature side {side}")

    def stage_sides(self) -> list[int]:
        sides, r = [], self.input_resolution
        for s in self.stages:
            r //= s.merge_stride
            sides.append(r)
        return sides

    def layout(self, stage_idx: int, kind: str) -> WindowLayout:
        s = self.stages[stage_idx]
        side = self.stage_sides()[stage_idx]
        return WindowLayout(side, side, s.window, s.group if kind == GSA else 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stages"] = list(d["stages"])
        for s in d["stages"]:
            s["block_pattern"] = list(s["block_pattern"])
            s["droppath_rates"] = list(s["droppath_rates"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        try:
            stages = tuple(
                StageConfig(
                    **{
                        **s,
                        "block_pattern": tuple(s["block_pattern"]),
                        "droppath_rates": tuple(s.get("droppath_rates", ())),
                    }
                )
                for s in d["stages"]
            )
            return cls(**{**d, "stages": stages})
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed model config: {exc}") from exc


_TABLE = {
    # name: (depths, channels, heads, window, group, resolution)
    "lite": ((1, 2, 6, 2), (32, 64, 128, 256), (1, 2, 4, 8), 7, 2, 224),
    "tiny": ((1, 2, 6, 2), (96, 192, 384, 768), (3, 6, 12, 24), 7, 2, 224),
    "small": ((1, 2, 14, 2), (96, 192, 384, 768), (3, 6, 12, 24), 7, 2, 224),
    "base": ((1, 2, 14, 2), (128, 256, 512, 1024), (4, 8, 16, 32), 7, 2, 224),
    "micro": ((1, 2, 2, 1), (16, 32, 64, 128), (1, 2, 4, 8), 2, 2, 64),
}

PRESETS = tuple(_TABLE)


def preset(
    name: str,
    num_classes: int | None = None,
    token_mode: str = TokenMode.LEARNABLE.value,
    max_droppath: float = 0.0,
    depths: Sequence[int] | None = None,
    pwa_qk: str = "shared",
) -> ModelConfig:
    """Configuration for a named variant.

    ``micro`` is a desk-scale variant (64 px input, 4 classes by default);
    the others default to 1000 classes at 224 px.
    """
    if name not in _TABLE:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    table_depths, channels, heads, window, group, res = _TABLE[name]
    depths = tuple(table_depths if depths is None else depths)
    if num_classes is None:
        num_classes = 4 if name == "micro" else 1000
    rates = droppath_schedule(depths, max_droppath)
    stages = []
    for i in range(4):
        stages.append(
            StageConfig(
                depth=depths[i],
                channels=channels[i],
                heads=heads[i],
                window=window,
                group=group,
                merge_stride=4 if i == 0 else 2,
                merge_kernel=7 if i == 0 else 3,
                block_pattern=expand_block_pattern(i + 1, depths[i]),
                droppath_rates=rates[i],
            )
        )
    return ModelConfig(
        stages=tuple(stages),
        num_classes=num_classes,
        input_resolution=res,
        token_mode=token_mode,
        pwa_qk=pwa_qk,
        name=name,
    )


def droppath_schedule(depths: Sequence[int], max_rate: float) -> list[tuple[float, ...]]:
    """Linearly increasing rates over the global block index, 0 -> max_rate."""
    total = sum(depths)
    flat = np.linspace(0.0, max_rate, total) if total > 1 else np.full(total, max_rate)
    out, i = [], 0
    for d in depths:
        out.append(tuple(float(r) for r in flat[i : i + d]))
        i += d
    return out


class PatchMerge(Module):
    """Overlapping strided conv (kernel > stride) followed by LN over channels."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int, rng: Rng, dtype=DEFAULT_DTYPE):
        self.stride = stride
        self.pad = kernel // 2
        fan_in, fan_out = in_ch * kernel * kernel, out_ch * kernel * kernel
        self.weight = Tensor(xavier_uniform((out_ch, in_ch, kernel, kernel), fan_in, fan_out, rng, dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True)
        self.norm = LayerNorm(out_ch, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        """[B, C_in, H, W] -> [B, C_out, H/s, W/s]."""
        y = conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)
        return self.norm(y.transpose(0, 2, 3, 1)).transpose(0, 3, 1, 2)


def overlapping_patch_merge(x: Tensor, merge: PatchMerge) -> Tensor:
    return merge(x)


class PosConv(Module):
    """Conditional position encoding: x + depthwise3x3(x), zero-initialized."""

    def __init__(self, channels: int, dtype=DEFAULT_DTYPE):
        self.channels = channels
        self.weight = Tensor(np.zeros((channels, 1, 3, 3), dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return x + conv2d(x, self.weight, self.bias, stride=1, pad=1, groups=self.channels)


def cpe(x: Tensor, pos: PosConv) -> Tensor:
    return pos(x)


class Block(Module):
    def __init__(self, kind: str, layout: WindowLayout, params: BlockParams, droppath: float):
        self.kind = kind
        self.layout = layout
        self.droppath = droppath
        self.params = params

    def __call__(self, x: Tensor, rng: Rng | None = None) -> Tensor:
        fn = gsa_block if self.kind == GSA else sepvit_block
        return fn(x, self.params, self.layout, self.droppath, self.training, rng)


class Stage(Module):
    def __init__(self, cfg: ModelConfig, idx: int, in_ch: int, rng: Rng, dtype):
        s = cfg.stages[idx]
        self.index = idx
        self.merge = PatchMerge(in_ch, s.channels, s.merge_kernel, s.merge_stride, rng, dtype)
        self.blocks = []
        for b, kind in enumerate(s.block_pattern):
            layout = cfg.layout(idx, kind)
            params = BlockParams(s.channels, s.heads, layout.N, rng, cfg.mlp_ratio, cfg.token_mode, dtype, cfg.pwa_qk)
            rate = s.droppath_rates[b] if s.droppath_rates else 0.0
            self.blocks.append(Block(kind, layout, params, rate))
        self.pos = PosConv(s.channels, dtype)

    def __call__(self, x: Tensor, rng: Rng | None = None) -> Tensor:
        """NCHW in, NCHW out."""
        with scope("merge"):
            x = self.merge(x).transpose(0, 2, 3, 1)
        for b, block in enumerate(self.blocks):
            with scope(f"block{b}.{block.kind}"):
                x = block(x, rng)
            if b == 0:
                with scope("cpe"):
                    x = self.pos(x.transpose(0, 3, 1, 2)).transpose(0, 2, 3, 1)
        if not self.blocks:
            with scope("cpe"):
                x = self.pos(x.transpose(0, 3, 1, 2)).transpose(0, 2, 3, 1)
        return x.transpose(0, 3, 1, 2)


class SepViT(Module):
    """Four stages of (patch merge, SepViT blocks, CPE) and a GAP -> LN -> linear head."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=DEFAULT_DTYPE):
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = Rng(seed)
        self.stages = []
        in_ch = config.in_chans
        for i in range(4):
            self.stages.append(Stage(config, i, in_ch, rng, dtype))
            in_ch = config.stages[i].channels
        self.head_norm = LayerNorm(in_ch, dtype)
        self.head = Linear(in_ch, config.num_classes, rng, dtype)

    def features(self, images: Tensor, rng: Rng | None = None) -> list[Tensor]:
        """Per-stage NCHW feature maps."""
        R = self.config.input_resolution
        if images.ndim != 4 or images.shape[1] != self.config.in_chans or images.shape[2:] != (R, R):
            raise ShapeError(f"expected images of shape (B, {self.config.in_chans}, {R}, {R}), got {images.shape}")
        outs, x = [], images
        for i, stage in enumerate(self.stages):
            with scope(f"stage{i + 1}"):
                x = stage(x, rng)
            outs.append(x)
        return outs

    def __call__(self, images: Tensor, rng: Rng | None = None) -> Tensor:
        x = self.features(images, rng)[-1]
        with scope("head"):
            pooled = x.mean(axis=(2, 3))
            return self.head(self.head_norm(pooled))


def forward(model: SepViT, images: Tensor, rng: Rng | None = None) -> Tensor:
    return model(images, rng)


def with_depths(config: ModelConfig, depths: Sequence[int]) -> ModelConfig:
    """Copy of ``config`` with per-stage depths replaced (patterns re-expanded)."""
    stages = tuple(
        replace(s, depth=d, block_pattern=expand_block_pattern(i + 1, d) if d else (), droppath_rates=())
        for i, (s, d) in enumerate(zip(config.stages, depths))
    )
    return replace(config, stages=stages)
