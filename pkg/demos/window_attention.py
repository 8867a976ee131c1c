"""
Depthwise and pointwise window attention
========================================

A feature map is cut into M x M windows. Each window gets one extra token;
attention inside a window (DWA) lets that token summarize its window, and
attention between the tokens (PWA) mixes information across windows.
"""

import numpy as np

from sepvit.core import (
    BlockParams,
    WindowLayout,
    WindowTokens,
    concat_window_tokens,
    dwa,
    pwa,
    sepvit_block,
    slice_tokens,
    window_partition,
    window_reverse,
)
from sepvit.tensor import Rng, Tensor

rng = Rng(3)

# An 8x8 map with 16 channels and 2x2 windows gives 16 windows of 4 pixels
layout = WindowLayout(8, 8, 2)
print(f"windows: N={layout.N}, pixels per window S={layout.S}")

x = Tensor(rng.normal((1, 8, 8, 16)))
wins = window_partition(x, layout)
print("partitioned:", wins.shape)
assert window_reverse(wins, layout).data.tobytes() == x.data.tobytes()

# Append a window token to every window, run DWA, then split it back off
params = BlockParams(16, 2, layout.N, rng, dtype=np.float64)
tokens = WindowTokens(layout.N, 16, dtype=np.float64)
z = concat_window_tokens(params.ln1(wins), tokens.values)
feat, wt = slice_tokens(dwa(z, params))
print("DWA features:", feat.shape, " window tokens:", wt.shape)

# PWA builds an N x N map per head from the tokens and mixes whole windows
mixed, attn = pwa(feat, wt, params, return_attn=True)
print("PWA attention map per head:", attn.shape)
print("row sums (should be 1):", np.round(attn.sum(-1)[0, 0, :4], 6))

# The full block adds the residual branches and the MLP
out = sepvit_block(x, params, layout)
print("block output:", out.shape)

# A grouped block uses g*M windows over the same map
grouped = WindowLayout(8, 8, 2, group=2)
print(f"grouped layout: side {grouped.side}, N={grouped.N}")
