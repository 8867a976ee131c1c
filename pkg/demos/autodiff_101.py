"""
Reverse-mode autodiff in a few lines
====================================

Operations on tensors that require gradients are recorded on a tape while
it is active. ``backward`` walks the tape in reverse and fills ``.grad``.
"""

import numpy as np

from sepvit.tensor import Rng, Tape, Tensor, backward, finite_diff_grad, gelu, layer_norm, matmul

rng = Rng(0)

# A tiny two-layer computation in double precision
x = Tensor(rng.normal((4, 8)))
w = Tensor(rng.normal((8, 3)), requires_grad=True)
gamma = Tensor(np.ones(8), requires_grad=True)
beta = Tensor(np.zeros(8), requires_grad=True)


def loss():
    h = layer_norm(x, gamma, beta)
    return gelu(matmul(h, w)).sum()


with Tape() as tape:
    out = loss()
print("loss:", float(out.data))
print("tape holds", len(tape.nodes), "recorded ops")

backward(out, tape)
print("dL/dw has shape", w.grad.shape)

# Central differences give an independent estimate of the same gradient
numeric = finite_diff_grad(lambda _: loss(), w)
err = np.linalg.norm(w.grad - numeric.data) / np.linalg.norm(numeric.data)
print(f"relative error vs finite differences: {err:.2e}")

# Outside a tape nothing is recorded, so inference carries no bookkeeping
y = gelu(matmul(x, w))
print("inference output", y.shape)
