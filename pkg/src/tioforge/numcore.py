"""Reverse-mode automatic differentiation over dense float64 arrays.

The operator set is exactly what the odometry model and its losses need:
matrix products, a strided 2-d convolution, elementwise nonlinearities,
concatenation/slicing, average pooling, dropout, and a handful of
piecewise-linear helpers used to build robust losses. Everything is
float64 and deterministic; randomness (dropout) takes an explicit seed.

Tensors are immutable values. Building an op records parent links and a
vector-Jacobian closure on the output tensor; `backward` topologically
sorts that implicit tape and visits each node exactly once. There is no
broadcasting except scalar-with-tensor; mismatched shapes raise
ShapeError rather than being coerced.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, NumericError, ParameterError, PoolError, ShapeError

_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph recording (pure evaluation)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    """Immutable dense float64 array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64, copy=True)
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], tuple] | None = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # Convenience operators; scalars are lifted to 0-d tensors.
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _lift(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (int, float, np.floating, np.integer)):
        return Tensor(float(x))
    raise TypeError(f"cannot lift {type(x).__name__} to Tensor")


def _node(data: np.ndarray, parents: tuple[Tensor, ...], vjp, op: str) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
        out._op = op
    return out


def _is_scalar(t: Tensor) -> bool:
    return t.ndim == 0


def _binary_shapes(a: Tensor, b: Tensor, op: str):
    """Allow equal shapes or scalar-with-tensor; anything else is an error."""
    if a.shape == b.shape or _is_scalar(a) or _is_scalar(b):
        return
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # Only scalar broadcasting exists, so reduction is a full sum or identity.
    if shape == grad.shape:
        return grad
    return np.asarray(grad.sum()).reshape(shape)


# ---------------------------------------------------------------------------
# arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "add")
    data = a.data + b.data

    def vjp(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _node(data, (a, b), vjp, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "sub")
    data = a.data - b.data

    def vjp(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return _node(data, (a, b), vjp, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "mul")
    data = a.data * b.data

    def vjp(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return _node(data, (a, b), vjp, "mul")


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix/vector product for 1-d and 2-d operands (no batching)."""
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ShapeError(f"matmul: operands must be 1-d or 2-d, got {a.shape} and {b.shape}")
    ak = a.shape[-1]
    bk = b.shape[0]
    if ak != bk:
        raise ShapeError(f"matmul: inner dimensions disagree, {a.shape} vs {b.shape}")
    data = a.data @ b.data

    def vjp(g):
        if a.ndim == 2 and b.ndim == 2:
            return g @ b.data.T, a.data.T @ g
        if a.ndim == 2 and b.ndim == 1:
            return np.outer(g, b.data), a.data.T @ g
        if a.ndim == 1 and b.ndim == 2:
            return b.data @ g, np.outer(a.data, g)
        return g * b.data, g * a.data

    return _node(data, (a, b), vjp, "matmul")


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a length-n bias row to every row of a (B, n) matrix."""
    if x.ndim != 2 or b.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ShapeError(f"add_bias: expected (B, n) and (n,), got {x.shape} and {b.shape}")
    data = x.data + b.data[None, :]

    def vjp(g):
        return g, g.sum(axis=0)

    return _node(data, (x, b), vjp, "add_bias")


# ---------------------------------------------------------------------------
# nonlinearities and piecewise-linear helpers


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    out = np.empty_like(xd, dtype=np.float64)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    out[~pos] = ex / (1.0 + ex)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _node(out, (x,), vjp, "sigmoid")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return _node(out, (x,), vjp, "tanh")


def leaky_relu(x: Tensor, slope: float = 0.1) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, slope * x.data)

    def vjp(g):
        return (g * np.where(mask, 1.0, slope),)

    return _node(out, (x,), vjp, "leaky_relu")


def absolute(x: Tensor) -> Tensor:
    # Subgradient 0 at the origin.
    sign = np.sign(x.data)

    def vjp(g):
        return (g * sign,)

    return _node(np.abs(x.data), (x,), vjp, "absolute")


def min_const(x: Tensor, c: float) -> Tensor:
    """Elementwise min(x, c); gradient passes where x <= c."""
    mask = x.data <= c

    def vjp(g):
        return (g * mask,)

    return _node(np.minimum(x.data, c), (x,), vjp, "min_const")


def max_const(x: Tensor, c: float) -> Tensor:
    """Elementwise max(x, c); gradient passes where x > c.

    The complementary boundary conventions of min_const/max_const make the
    composed robust losses exactly C1 at their knots.
    """
    mask = x.data > c

    def vjp(g):
        return (g * mask,)

    return _node(np.maximum(x.data, c), (x,), vjp, "max_const")


_TWO_PI = 2.0 * np.pi


def wrap_angle(x: Tensor) -> Tensor:
    """Wrap each element to (-pi, pi]; gradient is the identity a.e."""
    data = x.data - _TWO_PI * np.ceil((x.data - np.pi) / _TWO_PI)

    def vjp(g):
        return (g,)

    return _node(data, (x,), vjp, "wrap_angle")


# ---------------------------------------------------------------------------
# shape ops


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = list(tensors)
    if not ts:
        raise ShapeError("concat: need at least one tensor")
    base = list(ts[0].shape)
    for t in ts[1:]:
        other = list(t.shape)
        if len(other) != len(base):
            raise ShapeError(f"concat: rank mismatch {ts[0].shape} vs {t.shape}")
        for d in range(len(base)):
            if d != (axis % len(base)) and other[d] != base[d]:
                raise ShapeError(f"concat: extent mismatch on axis {d}: {ts[0].shape} vs {t.shape}")
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(
            np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis) for i in range(len(ts))
        )

    return _node(data, tuple(ts), vjp, "concat")


def slice_along(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    n = x.shape[axis]
    if not (0 <= start < stop <= n):
        raise ShapeError(f"slice_along: [{start}:{stop}] out of range for extent {n}")
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    data = x.data[idx]

    def vjp(g):
        full = np.zeros(x.shape, dtype=np.float64)
        full[idx] = g
        return (full,)

    return _node(data, (x,), vjp, "slice")


def reshape(x: Tensor, shape: Iterable[int]) -> Tensor:
    shape = tuple(shape)
    data = x.data.reshape(shape)

    def vjp(g):
        return (g.reshape(x.shape),)

    return _node(data, (x,), vjp, "reshape")


def avg_pool(x: Tensor, factor: int, axis: int = -1) -> Tensor:
    """Mean over consecutive groups of `factor` elements along `axis`."""
    if factor < 1:
        raise ParameterError(f"avg_pool: factor must be >= 1, got {factor}")
    axis = axis % x.ndim
    n = x.shape[axis]
    if n % factor != 0:
        raise PoolError(f"avg_pool: extent {n} not divisible by factor {factor}")
    newshape = x.shape[:axis] + (n // factor, factor) + x.shape[axis + 1 :]
    data = x.data.reshape(newshape).mean(axis=axis + 1)

    def vjp(g):
        expanded = np.repeat(np.expand_dims(g, axis + 1), factor, axis=axis + 1) / factor
        return (expanded.reshape(x.shape),)

    return _node(data, (x,), vjp, "avg_pool")


def dropout(x: Tensor, rate: float, training: bool, seed: int) -> Tensor:
    """Inverted dropout with an explicit per-call seed; identity in eval mode."""
    if not (0.0 <= rate < 1.0):
        raise ParameterError(f"dropout: rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    rng = np.random.Generator(np.random.PCG64(seed))
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def vjp(g):
        return (g * keep,)

    return _node(x.data * keep, (x,), vjp, "dropout")


# ---------------------------------------------------------------------------
# convolution


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int):
    i0 = np.repeat(np.arange(kh), kw)
    j0 = np.tile(np.arange(kw), kh)
    i1 = stride * np.repeat(np.arange(ho), wo)
    j1 = stride * np.tile(np.arange(wo), ho)
    rows = i0[:, None] + i1[None, :]
    cols = j0[:, None] + j1[None, :]
    patches = xp[:, :, rows, cols]  # (B, C, kh*kw, ho*wo)
    b, c = xp.shape[0], xp.shape[1]
    return patches.reshape(b, c * kh * kw, ho * wo), rows, cols


def conv2d(x: Tensor, w: Tensor, b: Tensor | None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d convolution, x (B, Cin, H, W) with kernel (Cout, Cin, kh, kw)."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-d input and kernel, got {x.shape} and {w.shape}")
    bsz, cin, h, wd = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d: channel mismatch, input {x.shape} vs kernel {w.shape}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {w.shape} too large for input {x.shape}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols, rows_idx, cols_idx = _im2col(xp, kh, kw, stride, ho, wo)
    wmat = w.data.reshape(cout, -1)
    out = np.matmul(wmat, cols)  # (B, Cout, ho*wo)
    if b is not None:
        if b.shape != (cout,):
            raise ShapeError(f"conv2d: bias shape {b.shape} does not match {cout} output channels")
        out = out + b.data[None, :, None]
    out = out.reshape(bsz, cout, ho, wo)
    parents = (x, w) if b is None else (x, w, b)

    def vjp(g):
        gmat = g.reshape(bsz, cout, ho * wo)
        dw = np.einsum("bol,bkl->ok", gmat, cols).reshape(w.shape)
        dcols = np.matmul(wmat.T, gmat)  # (B, Cin*kh*kw, L)
        dxp = np.zeros_like(xp)
        dpatches = dcols.reshape(bsz, cin, kh * kw, ho * wo)
        np.add.at(dxp, (slice(None), slice(None), rows_idx, cols_idx), dpatches)
        dx = dxp[:, :, padding : padding + h, padding : padding + wd] if padding else dxp
        if b is None:
            return dx, dw
        return dx, dw, gmat.sum(axis=(0, 2))

    return _node(out, parents, vjp, "conv2d")


# ---------------------------------------------------------------------------
# reductions


def sum_all(x: Tensor) -> Tensor:
    def vjp(g):
        return (np.full(x.shape, float(g)),)

    return _node(np.asarray(x.data.sum()), (x,), vjp, "sum")


def mean_all(x: Tensor) -> Tensor:
    n = x.size

    def vjp(g):
        return (np.full(x.shape, float(g) / n),)

    return _node(np.asarray(x.data.mean()), (x,), vjp, "mean")


# ---------------------------------------------------------------------------
# backward pass


def _toposort(root: Tensor) -> list[Tensor]:
    # Iterative DFS; eval graphs over long sequences exceed the recursion limit.
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate .grad on every requires_grad tensor reachable from `loss`.

    Gradients are fresh per call (previous .grad values on reachable nodes
    are discarded); a tensor consumed by several ops accumulates the sum of
    its uses' contributions.
    """
    if loss.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _toposort(loss)
    for node in order:
        node.grad = np.zeros(node.shape, dtype=np.float64)
    loss.grad = np.ones(loss.shape, dtype=np.float64)
    for node in reversed(order):
        if node._vjp is None:
            continue
        gs = node._vjp(node.grad)
        for parent, g in zip(node._parents, gs):
            if parent.requires_grad and g is not None:
                parent.grad = parent.grad + g


def gradients(loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of `loss` for each param; zeros for unreachable params."""
    if loss.size != 1:
        raise ContractError(f"gradients: loss must be scalar, got shape {loss.shape}")
    reachable: set[int] = set()
    if loss.requires_grad:
        order = _toposort(loss)
        reachable = {id(n) for n in order}
        backward(loss)
    out = []
    for p in params:
        if id(p) in reachable and p.grad is not None:
            out.append(np.array(p.grad, copy=True))
        else:
            out.append(np.zeros(p.shape, dtype=np.float64))
    return out


def finite_diff_check(
    f: Callable[[list[Tensor]], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    `f` must be a pure function of its parameter list returning a scalar
    Tensor. Relative error per coordinate is |g_ad - g_fd| / max(1, |g_fd|).
    """
    if eps <= 0:
        raise ParameterError(f"finite_diff_check: eps must be positive, got {eps}")
    params = [Tensor(p.data, requires_grad=True) for p in params]
    base = f(params)
    if base.size != 1:
        raise ContractError("finite_diff_check: objective must be scalar")
    if not np.isfinite(base.data).all():
        raise NumericError("finite_diff_check: objective is non-finite at the base point")
    g_ad = gradients(base, params)

    def eval_at(pidx: int, coord: int, value: float) -> float:
        arrays = [np.array(p.data, copy=True) for p in params]
        arrays[pidx].reshape(-1)[coord] = value
        with no_grad():
            out = f([Tensor(a) for a in arrays])
        v = out.item()
        if not np.isfinite(v):
            raise NumericError("finite_diff_check: objective non-finite at a probe point")
        return v

    worst = 0.0
    for pidx, p in enumerate(params):
        flat = p.data.reshape(-1)
        gflat = g_ad[pidx].reshape(-1)
        for coord in range(flat.size):
            x0 = float(flat[coord])
            g_fd = (eval_at(pidx, coord, x0 + eps) - eval_at(pidx, coord, x0 - eps)) / (2.0 * eps)
            rel = abs(float(gflat[coord]) - g_fd) / max(1.0, abs(g_fd))
            if rel > worst:
                worst = rel
    return worst
