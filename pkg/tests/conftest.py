import numpy as np
import pytest

from sepvit.tensor import Rng, Tape, Tensor, backward, finite_diff_grad


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def randn(rng: Rng, *shape, scale=1.0) -> np.ndarray:
    return scale * rng.normal(shape)


def grad_check(f, inputs: list[Tensor], h: float = 1e-6) -> float:
    """Worst relative error between autodiff and central differences over ``inputs``."""
    for t in inputs:
        t.grad = None
    with Tape() as tape:
        out = f()
    backward(out, tape)
    worst = 0.0
    for t in inputs:
        numeric = finite_diff_grad(lambda _: f(), t, h)
        worst = max(worst, rel_err(t.grad, numeric.data))
    return worst


@pytest.fixture
def rng():
    return Rng(1234)
