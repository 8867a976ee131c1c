"""Window bookkeeping and the depthwise separable self-attention block.

Feature maps inside a block are channels-last, ``[B, H, W, C]``. Windows are
``[B, N, S, C]`` with ``S = (g*M)**2`` pixel tokens per window; after the
window token is appended the token axis has ``S + 1`` entries, token ``S``
being the window token.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, LayoutError, ShapeError
from .nn import LayerNorm, Linear, Module
from .tensor import (
    DEFAULT_DTYPE,
    Rng,
    Tensor,
    broadcast_to,
    concat,
    gelu,
    scope,
    softmax_last,
)


@dataclass(frozen=True)
class WindowLayout:
    """Pixel grid ``H x W`` cut into square windows of side ``group * M``."""

    H: int
    W: int
    M: int
    group: int = 1

    def __post_init__(self):
        side = self.side
        if min(self.H, self.W, self.M, self.group) < 1:
            raise LayoutError(f"layout extents must be positive: H={self.H}, W={self.W}, M={self.M}, g={self.group}")
        if self.H % side or self.W % side:
            raise LayoutError(f"H={self.H}, W={self.W} not divisible by window side g*M={side}")

    @property
    def side(self) -> int:
        return self.group * self.M

    @property
    def S(self) -> int:
        return self.side * self.side

    @property
    def N(self) -> int:
        return (self.H * self.W) // self.S

    def check(self, x: Tensor) -> None:
        if x.ndim != 4 or x.shape[1] != self.H or x.shape[2] != self.W:
            raise LayoutError(f"feature map {x.shape} does not match layout H={self.H}, W={self.W}")


def window_partition(x: Tensor, layout: WindowLayout) -> Tensor:
    """[B, H, W, C] -> [B, N, S, C]; windows and pixels both row-major."""
    layout.check(x)
    B, H, W, C = x.shape
    s = layout.side
    x = x.reshape(B, H // s, s, W // s, s, C).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(B, layout.N, layout.S, C)


def window_reverse(wins: Tensor, layout: WindowLayout) -> Tensor:
    if wins.ndim != 4 or wins.shape[1] != layout.N or wins.shape[2] != layout.S:
        raise LayoutError(f"windows {wins.shape} inconsistent with layout (N={layout.N}, S={layout.S})")
    B, _, _, C = wins.shape
    s = layout.side
    x = wins.reshape(B, layout.H // s, layout.W // s, s, s, C).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(B, layout.H, layout.W, C)


class TokenMode(str, Enum):
    FIXED_ZERO = "fixed-zero"
    LEARNABLE = "learnable"


class WindowTokens(Module):
    """One C-vector per window, zero at construction in both modes.

    Fixed-zero tokens are constants (no gradient); learnable ones start at
    zero and are trained like any other parameter.
    """

    def __init__(self, n: int, dim: int, mode: TokenMode | str = TokenMode.LEARNABLE, dtype=DEFAULT_DTYPE):
        self.mode = TokenMode(mode)
        self.values = Tensor(np.zeros((n, dim), dtype=dtype), requires_grad=self.mode is TokenMode.LEARNABLE)

    @property
    def shape(self):
        return self.values.shape


def concat_window_tokens(wins: Tensor, wt: "WindowTokens | Tensor") -> Tensor:
    """Append each window's token as token index S: [B,N,S,C] -> [B,N,S+1,C]."""
    values = wt.values if isinstance(wt, WindowTokens) else wt
    B, N, _, C = wins.shape
    if values.shape != (N, C):
        raise ShapeError(f"window tokens {values.shape} do not match {N} windows of width {C}")
    tok = broadcast_to(values.reshape(1, N, 1, C), (B, N, 1, C))
    return concat([wins, tok], axis=2)


def slice_tokens(z: Tensor) -> tuple[Tensor, Tensor]:
    """Split [B,N,S+1,C] into pixel tokens [B,N,S,C] and window tokens [B,N,C]."""
    if z.ndim != 4 or z.shape[2] < 2:
        raise ShapeError(f"slice_tokens: need at least one pixel token plus the window token, got {z.shape}")
    return z[:, :, :-1, :], z[:, :, -1, :]


PWA_QK_MODES = ("shared", "dedicated")


class BlockParams(Module):
    """Learnable state of one block.

    Projections: q/k/v shared by pixel and window tokens (DWA), a query/key
    pair for window tokens (PWA), a single out_proj after PWA, and the two
    MLP layers. With ``pwa_qk="shared"`` PWA reuses the DWA q/k weights, so
    its query/key cost MACs but no parameters; ``"dedicated"`` gives PWA its
    own pwa_q/pwa_k.
    """

    def __init__(
        self,
        dim: int,
        heads: int,
        num_windows: int,
        rng: Rng,
        mlp_ratio: int = 4,
        token_mode: TokenMode | str = TokenMode.LEARNABLE,
        dtype=DEFAULT_DTYPE,
        pwa_qk: str = "shared",
    ):
        if heads < 1 or dim % heads:
            raise ConfigError(f"channels {dim} not divisible by heads {heads}")
        if pwa_qk not in PWA_QK_MODES:
            raise ConfigError(f"pwa_qk must be one of {PWA_QK_MODES}, got {pwa_qk!r}")
        self.dim = dim
        self.heads = heads
        self.ln1 = LayerNorm(dim, dtype)
        self.q = Linear(dim, dim, rng, dtype)
        self.k = Linear(dim, dim, rng, dtype)
        self.v = Linear(dim, dim, rng, dtype)
        self.ln_wt = LayerNorm(dim, dtype)
        if pwa_qk == "dedicated":
            self.pwa_q = Linear(dim, dim, rng, dtype)
            self.pwa_k = Linear(dim, dim, rng, dtype)
        else:
            self.pwa_q, self.pwa_k = self.q, self.k
        self.out_proj = Linear(dim, dim, rng, dtype)
        self.ln2 = LayerNorm(dim, dtype)
        self.fc1 = Linear(dim, mlp_ratio * dim, rng, dtype)
        self.fc2 = Linear(mlp_ratio * dim, dim, rng, dtype)
        self.window_tokens = WindowTokens(num_windows, dim, token_mode, dtype)

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads


def _split_heads(t: Tensor, heads: int) -> Tensor:
    # [B, N, T, C] -> [B, N, h, T, d]
    B, N, T, C = t.shape
    return t.reshape(B, N, T, heads, C // heads).transpose(0, 1, 3, 2, 4)


def dwa(z: Tensor, params: BlockParams) -> Tensor:
    """Multi-head attention confined to each window (pixel tokens + window token).

    No output projection: the only linear maps are q, k and v.
    """
    B, N, T, C = z.shape
    if C != params.dim:
        raise ShapeError(f"dwa: input width {C} != block width {params.dim}")
    h = params.heads
    scale = 1.0 / math.sqrt(params.head_dim)
    q = _split_heads(params.q(z), h)
    k = _split_heads(params.k(z), h)
    v = _split_heads(params.v(z), h)
    attn = softmax_last((q @ k.transpose(0, 1, 2, 4, 3)) * scale)
    out = attn @ v
    return out.transpose(0, 1, 3, 2, 4).reshape(B, N, T, C)


def pwa(feat: Tensor, wt: Tensor, params: BlockParams, return_attn: bool = False):
    """Attention across windows: queries/keys from window tokens, values are whole windows.

    Per head the value of window j is its S pixel tokens' head slice
    flattened to one S*d vector; out_proj then maps every token channelwise.
    """
    B, N, S, C = feat.shape
    if wt.shape != (B, N, C):
        raise ShapeError(f"pwa: window tokens {wt.shape} do not match feature windows {feat.shape}")
    h, d = params.heads, params.head_dim
    t = gelu(params.ln_wt(wt))
    q = params.pwa_q(t).reshape(B, N, h, d).transpose(0, 2, 1, 3)
    k = params.pwa_k(t).reshape(B, N, h, d).transpose(0, 2, 1, 3)
    attn = softmax_last((q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(d)))
    v = feat.reshape(B, N, S, h, d).transpose(0, 3, 1, 2, 4).reshape(B, h, N, S * d)
    mixed = (attn @ v).reshape(B, h, N, S, d).transpose(0, 2, 3, 1, 4).reshape(B, N, S, C)
    out = params.out_proj(mixed)
    if return_attn:
        return out, attn.data
    return out


def mlp(x: Tensor, params: BlockParams) -> Tensor:
    return params.fc2(gelu(params.fc1(x)))


def _drop_path(branch: Tensor, rate: float, rng: Rng | None) -> Tensor:
    if rng is None:
        raise ConfigError("droppath in training mode needs an rng")
    B = branch.shape[0]
    keep = (rng.random(B) >= rate).astype(branch.dtype) / (1.0 - rate)
    return branch * Tensor(keep.reshape((B,) + (1,) * (branch.ndim - 1)), dtype=branch.dtype)


def sepvit_block(
    x: Tensor,
    params: BlockParams,
    layout: WindowLayout,
    droppath: float = 0.0,
    training: bool = False,
    rng: Rng | None = None,
) -> Tensor:
    """One depthwise separable self-attention block on a [B, H, W, C] map."""
    layout.check(x)
    if not 0.0 <= droppath < 1.0:
        raise ConfigError(f"droppath rate must lie in [0, 1), got {droppath}")
    if params.window_tokens.shape[0] != layout.N:
        raise ShapeError(f"block holds {params.window_tokens.shape[0]} window tokens, layout has {layout.N} windows")
    stochastic = training and droppath > 0.0

    wins = window_partition(x, layout)
    z = concat_window_tokens(wins, params.window_tokens)
    with scope("dwa"):
        z = dwa(params.ln1(z), params)
    feat, wt = slice_tokens(z)
    with scope("pwa"):
        branch = window_reverse(pwa(feat, wt, params), layout)
    if stochastic:
        branch = _drop_path(branch, droppath, rng)
    x = branch + x
    with scope("mlp"):
        branch = mlp(params.ln2(x), params)
    if stochastic:
        branch = _drop_path(branch, droppath, rng)
    return branch + x


def gsa_block(
    x: Tensor,
    params: BlockParams,
    layout: WindowLayout,
    droppath: float = 0.0,
    training: bool = False,
    rng: Rng | None = None,
) -> Tensor:
    """Grouped self-attention: the same block over windows of g x g spliced M-windows.

    ``layout.group`` carries the splice factor; with ``group == 1`` this is
    exactly :func:`sepvit_block`.
    """
    return sepvit_block(x, params, layout, droppath, training, rng)
