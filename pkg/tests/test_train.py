import math

import numpy as np
import pytest

from sepvit.backbone import SepViT, preset
from sepvit.data import generate
from sepvit.errors import NumericError
from sepvit.tensor import Tensor
from sepvit.train import SGDW, clip_grad_norm, cosine_lr, metrics_csv, train


def test_cosine_without_warmup():
    assert cosine_lr(0.1, 0, 100) == 0.1
    assert cosine_lr(0.1, 50, 100) == pytest.approx(0.05)
    assert cosine_lr(0.1, 100, 100) == pytest.approx(0.0)


def test_warmup_is_linear_then_cosine():
    lrs = [cosine_lr(1.0, s, 20, warmup=4) for s in range(21)]
    np.testing.assert_allclose(lrs[:4], [0.25, 0.5, 0.75, 1.0])
    assert lrs[4] == 1.0
    assert lrs[12] == pytest.approx(0.5)
    assert lrs[20] == pytest.approx(0.0, abs=1e-15)
    assert all(a >= b for a, b in zip(lrs[4:], lrs[5:]))


def test_clip_grad_norm_scales_to_bound():
    a, b = Tensor(np.zeros(2), requires_grad=True), Tensor(np.zeros(1), requires_grad=True)
    a.grad, b.grad = np.array([3.0, 0.0]), np.array([4.0])
    assert clip_grad_norm([a, b], 1.0) == 5.0
    np.testing.assert_allclose(np.concatenate([a.grad, b.grad]), [0.6, 0.0, 0.8])


def test_clip_grad_norm_leaves_small_gradients():
    a = Tensor(np.zeros(2), requires_grad=True)
    a.grad = np.array([0.3, 0.4])
    assert clip_grad_norm([a], 1.0) == pytest.approx(0.5)
    np.testing.assert_array_equal(a.grad, [0.3, 0.4])


def test_sgdw_momentum_and_decoupled_decay():
    w = Tensor(np.ones((1, 2)), requires_grad=True)
    b = Tensor(np.ones(2), requires_grad=True)
    opt = SGDW([w, b], lr=0.1, momentum=0.5, weight_decay=0.1)
    for _ in range(2):
        w.grad, b.grad = np.ones((1, 2)), np.ones(2)
        opt.step()
    # step 1: v=1, w = 1*(1-0.01) - 0.1 = 0.89; step 2: v=1.5, w = 0.89*0.99 - 0.15
    np.testing.assert_allclose(w.data, 0.89 * 0.99 - 0.15)
    np.testing.assert_allclose(b.data, 1 - 0.1 - 0.15)


def test_train_history_and_csv():
    ds = generate(0, 4, 16, 64)
    hist = train(SepViT(preset("micro")), ds, epochs=2, batch=8, lr=0.01, seed=0, warmup_epochs=1)
    assert [m.epoch for m in hist] == [1, 2]
    assert all(0.0 <= m.train_acc <= 1.0 and math.isfinite(m.loss) for m in hist)
    rows = metrics_csv(hist).strip().split("\n")
    assert rows[0] == "epoch,lr,loss,train_acc" and len(rows) == 3
    assert float(rows[1].split(",")[1]) == hist[0].lr


def test_divergence_aborts():
    ds = generate(0, 4, 8, 64)
    with np.errstate(all="ignore"), pytest.raises(NumericError, match="non-finite"):
        train(SepViT(preset("micro")), ds, epochs=3, batch=8, lr=1e8, seed=0, momentum=0.0)
