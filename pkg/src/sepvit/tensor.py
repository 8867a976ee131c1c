"""Dense tensors on top of numpy with tape-based reverse-mode autodiff.

Operations record themselves on the innermost active :class:`Tape` whenever
one of their inputs requires a gradient. Outside a ``with Tape():`` block
nothing is recorded, which is the inference mode.

    >>> x = Tensor([1.0, 2.0], dtype=np.float64, requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = (x * x).sum()
    >>> _ = backward(loss, tape)
    >>> x.grad
    array([2., 4.])
"""

from __future__ import annotations

import contextlib
import math
from collections import defaultdict
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .errors import ContractError, DTypeError, NumericError, ParameterError, ShapeError

DEFAULT_DTYPE = np.float32
_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_TAPES: list = []
_COUNTERS: list = []
_SCOPES: list[str] = []


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_leaf", "__weakref__")

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype in _FLOAT_DTYPES else DEFAULT_DTYPE
        dtype = np.dtype(dtype)
        if dtype not in _FLOAT_DTYPES:
            raise DTypeError(f"unsupported dtype {dtype}; use float32 or float64")
        self.data = np.asarray(data, dtype=dtype, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._leaf = True

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # arithmetic ------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self)))

    def __rsub__(self, other):
        return add(_as_tensor(other, self), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    # shape helpers ---------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)


class _Node:
    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs, output, backward_fn):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended as operations execute, so the list is already in
    topological order and a reversed walk visits every node once.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def clear(self) -> None:
        self.nodes.clear()


@contextlib.contextmanager
def no_grad():
    """Suspend recording inside an enclosing tape."""
    _TAPES.append(None)
    try:
        yield
    finally:
        _TAPES.pop()


def _active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype), dtype=like.dtype)


def _check_dtypes(*tensors: Tensor) -> None:
    dt = tensors[0].dtype
    for t in tensors[1:]:
        if t.dtype != dt:
            raise DTypeError(f"mixed dtypes in one graph: {dt} and {t.dtype}")


def _contig(a) -> np.ndarray:
    # np.ascontiguousarray would promote 0-d arrays to 1-d
    return np.asarray(a, order="C")


def _make(data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data)
    out.grad = None
    out._leaf = True
    out.requires_grad = False
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._leaf = False
        tape.nodes.append(_Node(tuple(inputs), out, backward_fn))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ----------------------------------------------------------------------------
# MAC instrumentation
# ----------------------------------------------------------------------------


class MacCounter:
    """Accumulates multiply-accumulates of matmul/conv2d calls per scope path.

    One MAC is one multiply-accumulate; a p x q by q x r product is p*q*r.
    """

    def __init__(self):
        self.by_scope: dict[str, int] = defaultdict(int)
        self.by_kind: dict[str, int] = defaultdict(int)

    def __enter__(self):
        _COUNTERS.append(self)
        return self

    def __exit__(self, *exc):
        _COUNTERS.remove(self)
        return False

    def add(self, kind: str, macs: int) -> None:
        self.by_scope["/".join(_SCOPES)] += macs
        self.by_kind[kind] += macs

    @property
    def total(self) -> int:
        return sum(self.by_scope.values())

    def matching(self, predicate: Callable[[str], bool]) -> int:
        return sum(v for k, v in self.by_scope.items() if predicate(k))


@contextlib.contextmanager
def scope(name: str):
    """Label the MACs counted inside the block (names nest with '/')."""
    _SCOPES.append(name)
    try:
        yield
    finally:
        _SCOPES.pop()


def _count(kind: str, macs: int) -> None:
    for c in _COUNTERS:
        c.add(kind, int(macs))


# ----------------------------------------------------------------------------
# elementwise and structural ops
# ----------------------------------------------------------------------------


def add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    b = _as_tensor(b, a)
    _check_dtypes(a, b)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _make(a.data + b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    b = _as_tensor(b, a)
    _check_dtypes(a, b)
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(ad * bd, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.data
    return _make(out, (a,), lambda g: (-g * out * out,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(_contig(a.data.transpose(axes)), (a,), lambda g: (g.transpose(inv),))


def getitem(a: Tensor, idx) -> Tensor:
    src_shape, dt = a.shape, a.dtype

    basic = all(isinstance(i, (slice, int, type(Ellipsis))) for i in (idx if isinstance(idx, tuple) else (idx,)))

    def bw(g):
        full = np.zeros(src_shape, dtype=dt)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(_contig(a.data[idx]), (a,), bw)


def broadcast_to(a: Tensor, shape) -> Tensor:
    src = a.shape
    return _make(_contig(np.broadcast_to(a.data, shape)), (a,), lambda g: (_unbroadcast(g, src),))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    _check_dtypes(*tensors)
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != axis):
            raise ShapeError(f"concat: incompatible shapes {[x.shape for x in tensors]} on axis {axis}")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def bw(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))
        )

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis, keepdims) * (1.0 / n)


# ----------------------------------------------------------------------------
# layer primitives
# ----------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    _check_dtypes(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}") from exc
    _count("matmul", out.size * a.shape[-1])
    ad, bd = a.data, b.data

    def bw(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make(out, (a, b), bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ weight (+ bias); weight is stored (in_features, out_features)."""
    y = matmul(x, weight)
    return y if bias is None else y + bias


def softmax_last(x: Tensor) -> Tensor:
    if not np.isfinite(x.data).all():
        raise NumericError("softmax_last: non-finite input")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (x,), bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    if eps <= 0:
        raise ParameterError(f"layer_norm: eps must be positive, got {eps}")
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layer_norm: affine shapes {gamma.shape}/{beta.shape} do not match last axis {c}")
    _check_dtypes(x, gamma, beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gd = gamma.data
    lead = tuple(range(x.ndim - 1))

    def bw(g):
        gx = g * gd
        dx = rstd * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(xhat * gd + beta.data, (x, gamma, beta), bw)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x) with the error-function normal CDF."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))

    def bw(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * xd * xd)
        return (g * (cdf + xd * pdf),)

    return _make((xd * cdf).astype(xd.dtype, copy=False), (x,), bw)


def conv2d(
    x: Tensor,
    w: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    pad: int = 0,
    groups: int = 1,
) -> Tensor:
    """2-D cross-correlation over NCHW input; ``groups == C_in`` is depthwise.

    Output extent is ``(h + 2*pad - kh) // stride + 1``: trailing rows or
    columns that do not fill a whole stride are dropped.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D input and weight, got {x.shape} and {w.shape}")
    B, cin, H, W = x.shape
    cout, cg, kh, kw = w.shape
    if cin % groups or cout % groups or cg != cin // groups:
        raise ShapeError(f"conv2d: weight {w.shape} incompatible with {cin} input channels and groups={groups}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    span_h, span_w = H + 2 * pad - kh, W + 2 * pad - kw
    if stride < 1 or pad < 0 or span_h < 0 or span_w < 0:
        raise ShapeError(f"conv2d: kernel ({kh},{kw}) does not fit {x.shape} with s={stride}, p={pad}")
    tensors = (x, w) if bias is None else (x, w, bias)
    _check_dtypes(*tensors)
    Ho, Wo = span_h // stride + 1, span_w // stride + 1
    G, og, K = groups, cout // groups, cg * kh * kw

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = win.reshape(B, G, cg, Ho, Wo, kh, kw).transpose(0, 1, 3, 4, 2, 5, 6).reshape(B, G, Ho * Wo, K)
    wm = w.data.reshape(G, og, K).transpose(0, 2, 1)
    out = np.matmul(cols, wm).transpose(0, 1, 3, 2).reshape(B, cout, Ho, Wo)
    if bias is not None:
        out = out + bias.data[:, None, None]
    _count("conv2d", B * cout * Ho * Wo * K)
    xshape, pshape = x.shape, xp.shape

    def bw(g):
        gm = g.reshape(B, G, og, Ho * Wo).transpose(0, 1, 3, 2)
        dw = np.matmul(cols.transpose(0, 1, 3, 2), gm).sum(axis=0).transpose(0, 2, 1).reshape(w.shape)
        dcols = np.matmul(gm, wm.transpose(0, 2, 1))
        dcols = dcols.reshape(B, G, Ho, Wo, cg, kh, kw).transpose(0, 1, 4, 2, 3, 5, 6).reshape(B, cin, Ho, Wo, kh, kw)
        dxp = np.zeros(pshape, dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + stride * (Ho - 1) + 1 : stride, j : j + stride * (Wo - 1) + 1 : stride] += dcols[..., i, j]
        dx = dxp[:, :, pad : pad + xshape[2], pad : pad + xshape[3]]
        grads = (dx, dw)
        if bias is not None:
            grads += (g.sum(axis=(0, 2, 3)),)
        return grads

    return _make(_contig(out), tensors, bw)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    loss = -logp[np.arange(n), labels].mean()

    def bw(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return (g * p / n,)

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), bw)


# ----------------------------------------------------------------------------
# gradients
# ----------------------------------------------------------------------------


def backward(loss: Tensor, tape: Tape, retain: bool = False) -> dict[int, np.ndarray]:
    """Reverse sweep over ``tape`` seeded at the scalar ``loss``.

    Gradients are summed into ``.grad`` of every leaf tensor that requires
    one; callers zero them between steps. The tape is cleared unless
    ``retain`` is set. Returns ``{id(leaf): grad}`` for this sweep.
    """
    if loss.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("backward: loss does not depend on any tensor that requires grad")
    if not loss._leaf and not any(node.output is loss for node in reversed(tape.nodes)):
        raise ContractError("backward: loss was not produced on this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
    leaves: dict[int, Tensor] = {}
    if loss._leaf:
        leaves[id(loss)] = loss
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.backward_fn(g)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if t._leaf:
                leaves[key] = t
    result = {}
    for key, t in leaves.items():
        g = grads[key].astype(t.dtype, copy=False)
        t.grad = g.copy() if t.grad is None else t.grad + g
        result[key] = g
    if not retain:
        tape.clear()
    return result


def finite_diff_grad(
    f: Callable[[Tensor], "Tensor | float"],
    x: Tensor,
    h: float = 1e-6,
    indices: Iterable[int] | None = None,
) -> Tensor:
    """Central-difference gradient of scalar ``f`` at ``x``.

    ``x.data`` is perturbed in place and restored, so ``f`` may close over
    ``x`` (e.g. a model parameter). ``indices`` restricts the flat positions
    probed; the others stay zero.
    """
    if h <= 0:
        raise ParameterError(f"finite_diff_grad: h must be positive, got {h}")
    if x.dtype != np.float64:
        raise ParameterError("finite_diff_grad: double precision required")
    flat = x.data.reshape(-1)
    out = np.zeros_like(flat)
    positions = range(flat.size) if indices is None else indices

    def value() -> float:
        with no_grad():
            v = f(x)
        return float(v.data) if isinstance(v, Tensor) else float(v)

    for i in positions:
        orig = flat[i]
        flat[i] = orig + h
        fp = value()
        flat[i] = orig - h
        fm = value()
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * h)
    return Tensor(out.reshape(x.shape), dtype=np.float64)


# ----------------------------------------------------------------------------
# deterministic RNG
# ----------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


class Rng:
    """SplitMix64 generator.

    The state advances by a fixed odd constant per draw, so a block of ``n``
    draws is computed in one vectorized pass and matches ``n`` sequential
    :meth:`next_u64` calls exactly.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self.state = self.seed

    @staticmethod
    def _mix(z: np.ndarray) -> np.ndarray:
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def u64(self, n: int) -> np.ndarray:
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            states = np.uint64(self.state) + steps * np.uint64(_GAMMA)
            out = self._mix(states)
        self.state = (self.state + n * _GAMMA) & _MASK64
        return out

    def random(self, shape) -> np.ndarray:
        """Uniform float64 in [0, 1) from the top 53 bits of each draw."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64))
        return ((self.u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53).reshape(shape)

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return low + (high - low) * self.random(shape)

    def normal(self, shape) -> np.ndarray:
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64))
        u = self.random(2 * n).reshape(2, n)
        r = np.sqrt(-2.0 * np.log1p(-u[0]))
        return (r * np.cos(2.0 * np.pi * u[1])).reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.u64(n), kind="stable")

    def fork(self) -> "Rng":
        return Rng(self.next_u64())


def xavier_uniform(shape, fan_in: int, fan_out: int, rng: Rng, dtype=DEFAULT_DTYPE) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(shape, -bound, bound).astype(dtype)
