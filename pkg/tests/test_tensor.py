import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sepvit.errors import ContractError, DTypeError, NumericError, ParameterError, ShapeError
from sepvit.tensor import (
    MacCounter,
    Rng,
    Tape,
    Tensor,
    backward,
    concat,
    conv2d,
    cross_entropy,
    finite_diff_grad,
    gelu,
    layer_norm,
    matmul,
    no_grad,
    softmax_last,
)

from conftest import grad_check, rel_err

F64 = np.float64


def t64(a, grad=False):
    return Tensor(np.asarray(a, dtype=F64), requires_grad=grad)


# -- oracles -----------------------------------------------------------------


def loop_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for p in range(k):
                s += a[i, p] * b[p, j]
            out[i, j] = s
    return out


def loop_conv(x, w, bias, stride, pad, groups):
    B, cin, H, W = x.shape
    cout, cg, kh, kw = w.shape
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    og = cout // groups
    out = np.zeros((B, cout, Ho, Wo))
    for b in range(B):
        for o in range(cout):
            g = o // og
            for i in range(Ho):
                for j in range(Wo):
                    s = 0.0 if bias is None else bias[o]
                    for c in range(cg):
                        for u in range(kh):
                            for v in range(kw):
                                y, xx = i * stride + u - pad, j * stride + v - pad
                                if 0 <= y < H and 0 <= xx < W:
                                    s += x[b, g * cg + c, y, xx] * w[o, c, u, v]
                    out[b, o, i, j] = s
    return out


# -- matmul ------------------------------------------------------------------


def test_matmul_identity():
    out = matmul(t64([[1, 0], [0, 1]]), t64([[3, 4], [5, 6]]))
    np.testing.assert_array_equal(out.data, [[3, 4], [5, 6]])


def test_matmul_dot():
    assert matmul(t64([[1, 2]]), t64([[3], [4]])).data.tolist() == [[11.0]]


def test_matmul_matches_triple_loop(rng):
    a, b = rng.normal((4, 5)), rng.normal((5, 6))
    out = matmul(t64(a), t64(b)).data
    assert np.abs(out - loop_matmul(a, b)).max() < 1e-12


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        matmul(t64(np.zeros((2, 3))), t64(np.zeros((4, 5))))


def test_matmul_batched_broadcast(rng):
    a, b = rng.normal((3, 2, 4, 5)), rng.normal((5, 6))
    np.testing.assert_allclose(matmul(t64(a), t64(b)).data, a @ b, atol=1e-12)


def test_matmul_associativity(rng):
    A, B, C = (t64(rng.normal((4, 4))) for _ in range(3))
    left = matmul(matmul(A, B), C).data
    right = matmul(A, matmul(B, C)).data
    assert np.abs(left - right).max() < 1e-8


def test_mixed_dtype_rejected():
    with pytest.raises(DTypeError):
        Tensor(np.ones(2, np.float32)) + Tensor(np.ones(2, np.float64))


# -- softmax -----------------------------------------------------------------


def test_softmax_uniform():
    np.testing.assert_allclose(softmax_last(t64([0, 0, 0])).data, [1 / 3] * 3, atol=1e-15)


def test_softmax_no_overflow():
    np.testing.assert_allclose(softmax_last(t64([1000, 1000])).data, [0.5, 0.5])


def test_softmax_scalar_oracle():
    x = [1.0, 2.0, 3.0]
    e = [math.exp(v - 3.0) for v in x]
    expected = [v / sum(e) for v in e]
    assert np.abs(softmax_last(t64(x)).data - expected).max() < 1e-12


def test_softmax_rejects_non_finite():
    with pytest.raises(NumericError):
        softmax_last(t64([1.0, np.inf]))


@settings(max_examples=50, deadline=None)
@given(arrays(F64, st.tuples(st.integers(1, 4), st.integers(1, 7)), elements=st.floats(-50, 50)))
def test_softmax_rows_are_distributions(x):
    y = softmax_last(Tensor(x)).data
    assert np.all(np.abs(y.sum(axis=-1) - 1.0) < 1e-6)
    assert np.all((y >= 0) & (y <= 1))


# -- layer norm --------------------------------------------------------------


def test_layer_norm_constant_row_collapses_to_beta():
    out = layer_norm(t64([1, 1, 1]), t64([1, 1, 1]), t64([0, 0, 0]), 1e-5)
    np.testing.assert_array_equal(out.data, [0, 0, 0])


def test_layer_norm_already_normalized():
    out = layer_norm(t64([-1, 1]), t64([1, 1]), t64([0, 0]), 1e-14)
    np.testing.assert_allclose(out.data, [-1, 1], atol=1e-12)


def test_layer_norm_scalar_oracle():
    x, gamma, beta, eps = [1.0, 2.0, 3.0], 2.0, 1.0, 1e-5
    mu = sum(x) / 3
    var = sum((v - mu) ** 2 for v in x) / 3
    expected = [gamma * (v - mu) / math.sqrt(var + eps) + beta for v in x]
    out = layer_norm(t64(x), t64([gamma] * 3), t64([beta] * 3), eps)
    assert np.abs(out.data - expected).max() < 1e-9


def test_layer_norm_eps_must_be_positive():
    with pytest.raises(ParameterError):
        layer_norm(t64([1, 2]), t64([1, 1]), t64([0, 0]), 0.0)


def test_layer_norm_affine_shape_mismatch():
    with pytest.raises(ShapeError):
        layer_norm(t64([1, 2, 3]), t64([1, 1]), t64([0, 0]))


# -- gelu --------------------------------------------------------------------


def test_gelu_zero():
    assert gelu(t64([0.0])).data[0] == 0.0


def test_gelu_large_x():
    assert abs(gelu(t64([10.0])).data[0] - 10.0) < 1e-6


@pytest.mark.parametrize("x", [1.0, -0.7, 2.5, 0.01])
def test_gelu_high_precision_oracle(x):
    mpmath.mp.dps = 40
    xm = mpmath.mpf(x)
    expected = float(xm * (1 + mpmath.erf(xm / mpmath.sqrt(2))) / 2)
    assert abs(gelu(t64([x])).data[0] - expected) < 1e-9


def test_gelu_at_one_is_phi_one():
    assert abs(gelu(t64([1.0])).data[0] - 0.8413447460685429) < 1e-9


# -- conv2d ------------------------------------------------------------------


def test_conv_1x1_identity():
    x = np.arange(16, dtype=F64).reshape(1, 1, 4, 4)
    out = conv2d(t64(x), t64(np.ones((1, 1, 1, 1))))
    np.testing.assert_array_equal(out.data, x)


def test_conv_box_sum_counts():
    out = conv2d(t64(np.ones((1, 1, 4, 4))), t64(np.ones((1, 1, 3, 3))), pad=1).data[0, 0]
    assert out[1, 1] == 9 and out[2, 2] == 9
    assert out[0, 0] == out[0, 3] == out[3, 0] == out[3, 3] == 4
    assert out[0, 1] == 6


def test_conv_matches_loop_oracle(rng):
    x, w, b = rng.normal((2, 3, 8, 8)), rng.normal((4, 3, 3, 3)), rng.normal(4)
    out = conv2d(t64(x), t64(w), t64(b), stride=2, pad=1).data
    assert out.shape == (2, 4, 4, 4)
    assert np.abs(out - loop_conv(x, w, b, 2, 1, 1)).max() < 1e-10


def test_grouped_conv_matches_loop_oracle(rng):
    x, w = rng.normal((1, 4, 6, 6)), rng.normal((6, 2, 3, 3))
    out = conv2d(t64(x), t64(w), stride=1, pad=1, groups=2).data
    assert np.abs(out - loop_conv(x, w, None, 1, 1, 2)).max() < 1e-10


@pytest.mark.parametrize("seed", range(3))
def test_depthwise_conv_is_per_channel_correlation(seed):
    r = Rng(seed)
    x, w = r.normal((2, 5, 7, 7)), r.normal((5, 1, 3, 3))
    out = conv2d(t64(x), t64(w), stride=1, pad=1, groups=5).data
    for c in range(5):
        single = loop_conv(x[:, c : c + 1], w[c : c + 1], None, 1, 1, 1)
        assert np.abs(out[:, c : c + 1] - single).max() < 1e-10


def test_conv_group_mismatch():
    with pytest.raises(ShapeError):
        conv2d(t64(np.zeros((1, 3, 4, 4))), t64(np.zeros((2, 2, 3, 3))), groups=2)


def test_conv_kernel_too_large():
    with pytest.raises(ShapeError):
        conv2d(t64(np.zeros((1, 1, 2, 2))), t64(np.zeros((1, 1, 5, 5))))


# -- backward / finite differences -------------------------------------------


def test_backward_sum_gives_ones():
    x = t64(np.arange(6.0).reshape(2, 3), grad=True)
    with Tape() as tape:
        loss = x.sum()
    backward(loss, tape)
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_backward_fan_out_accumulates():
    x = t64([1.0, -2.0, 3.0], grad=True)
    with Tape() as tape:
        loss = (x + x).sum()
    backward(loss, tape)
    np.testing.assert_array_equal(x.grad, [2.0, 2.0, 2.0])


def test_backward_matmul_vs_finite_differences(rng):
    A, B = t64(rng.normal((3, 4)), grad=True), t64(rng.normal((4, 2)), grad=True)
    assert grad_check(lambda: matmul(A, B).sum(), [A, B]) < 1e-6


def test_backward_rejects_non_scalar():
    x = t64([1.0, 2.0], grad=True)
    with Tape() as tape:
        y = x * 2.0
    with pytest.raises(ContractError):
        backward(y, tape)


def test_backward_clears_tape_unless_retained():
    x = t64([1.0, 2.0], grad=True)
    with Tape() as tape:
        loss = (x * x).sum()
    backward(loss, tape, retain=True)
    assert len(tape) > 0
    backward(loss, tape)
    np.testing.assert_array_equal(x.grad, [4.0, 8.0])
    assert len(tape) == 0


def test_no_recording_outside_tape():
    x = t64([1.0], grad=True)
    y = x * 3.0
    assert not y.requires_grad
    with Tape() as tape, no_grad():
        z = x * 3.0
    assert len(tape) == 0 and not z.requires_grad


def test_fd_sum_of_squares():
    g = finite_diff_grad(lambda x: (x * x).sum(), t64([1.0, 2.0]), 1e-5)
    np.testing.assert_allclose(g.data, [2.0, 4.0], atol=1e-6)


def test_fd_matches_autodiff_for_gelu():
    x = t64([0.5], grad=True)
    with Tape() as tape:
        loss = gelu(x).sum()
    backward(loss, tape)
    numeric = finite_diff_grad(lambda t: gelu(t).sum(), x, 1e-6)
    assert abs(numeric.data[0] - x.grad[0]) < 1e-6


def test_fd_constant_function():
    g = finite_diff_grad(lambda x: 3.0, t64([1.0, -1.0, 2.0]), 1e-5)
    assert np.abs(g.data).max() < 1e-9


def test_fd_requires_double():
    with pytest.raises(ParameterError):
        finite_diff_grad(lambda x: x.sum(), Tensor([1.0], dtype=np.float32))


# -- per-primitive gradient checks, 10 seeds ---------------------------------

SEEDS = range(10)


def _prim_cases(r: Rng):
    x = t64(r.normal((2, 3, 5)), grad=True)
    w = t64(r.normal((5, 4)), grad=True)
    proj = r.normal((2, 3, 5))
    gamma, beta = t64(r.normal(5), grad=True), t64(r.normal(5), grad=True)
    cx = t64(r.normal((2, 4, 6, 6)), grad=True)
    cw = t64(r.normal((6, 2, 3, 3)), grad=True)
    cb = t64(r.normal(6), grad=True)
    dw = t64(r.normal((4, 1, 3, 3)), grad=True)
    logits = t64(r.normal((4, 3)), grad=True)
    labels = np.array([0, 2, 1, 2])
    y = t64(r.normal((2, 2, 5)), grad=True)
    P = Tensor(proj)
    C = Tensor(r.normal((2, 6, 3, 3)))
    Pm = Tensor(r.normal((2, 3, 4)))
    Pc = Tensor(r.normal((2, 3, 3)))
    return {
        "matmul": (lambda: (matmul(x, w) * Pm).sum(), [x, w]),
        "softmax_last": (lambda: (softmax_last(x) * P).sum(), [x]),
        "layer_norm": (lambda: (layer_norm(x, gamma, beta) * P).sum(), [x, gamma, beta]),
        "gelu": (lambda: (gelu(x) * P).sum(), [x]),
        "conv2d": (lambda: (conv2d(cx, cw, cb, stride=2, pad=1, groups=2) * C).sum(), [cx, cw, cb]),
        "depthwise": (lambda: (conv2d(cx, dw, None, stride=1, pad=1, groups=4) * cx).sum(), [cx, dw]),
        "cross_entropy": (lambda: cross_entropy(logits, labels), [logits]),
        "concat_slice": (lambda: (concat([x, y], axis=1)[:, 1:4, ::2] * Pc).sum(), [x, y]),
        "reshape_transpose_mean": (lambda: ((x.transpose(2, 0, 1).reshape(5, 6) * x.reshape(5, 6)).mean()), [x]),
        "div": (lambda: (x / (gamma * gamma + 1.0)).sum(), [x, gamma]),
    }


@pytest.mark.parametrize("name", ["matmul", "softmax_last", "layer_norm", "gelu", "conv2d", "depthwise", "cross_entropy", "concat_slice", "reshape_transpose_mean", "div"])
@pytest.mark.parametrize("seed", SEEDS)
def test_primitive_gradients(name, seed):
    fn, inputs = _prim_cases(Rng(seed))[name]
    assert grad_check(fn, inputs) < 1e-6


# -- rng ---------------------------------------------------------------------


def test_splitmix64_reference_value():
    # first output for seed 0 of the published SplitMix64 reference code
    assert Rng(0).next_u64() == 0xE220A8397B1DCDAF


def test_rng_vectorized_matches_sequential():
    a, b = Rng(99), Rng(99)
    block = a.u64(17)
    assert [int(v) for v in block] == [b.next_u64() for _ in range(17)]
    assert a.state == b.state


def test_rng_determinism_bit_identical():
    x1, x2 = Rng(5).normal((3, 4)), Rng(5).normal((3, 4))
    assert x1.tobytes() == x2.tobytes()
    assert Rng(5).random(8).tobytes() != Rng(6).random(8).tobytes()


def test_rng_uniform_range():
    u = Rng(3).random(10_000)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.02


def test_mac_counter_counts_matmul_and_conv():
    with MacCounter() as c:
        matmul(t64(np.ones((2, 3, 4))), t64(np.ones((4, 5))))
        conv2d(t64(np.ones((1, 2, 4, 4))), t64(np.ones((3, 2, 3, 3))), pad=1)
    assert c.by_kind["matmul"] == 2 * 3 * 4 * 5
    assert c.by_kind["conv2d"] == 3 * 16 * 2 * 9
