"""Dense float64 tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array plus, when gradients are enabled, a
record of the primitive application that produced it.  :class:`GradTape`
linearizes that record in topological order so :func:`backward` can push
gradients from a scalar loss back to every trainable leaf.

Conventions:

* everything is float64; construction rejects NaN/Inf so non-finite
  values can only arise from arithmetic (where divergence guards can
  observe them through :meth:`Tensor.is_finite`);
* 1-D signals are laid out channels x width;
* evaluation is single-threaded per graph, and separate graphs may run
  concurrently (the only shared state is the per-context autograd
  switch).
"""

from __future__ import annotations

from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

__all__ = [
    "Tensor",
    "GradTape",
    "no_grad",
    "elementwise",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "conv1d",
    "channelwise_conv1d",
    "maxpool1d",
    "activation",
    "relu",
    "sum_all",
    "mean_all",
    "reshape",
    "concat",
    "gather_rows",
    "take_column",
    "rowscale",
    "softmax_rows",
    "backward",
    "grad_check",
]

ACTIVATION_KINDS = ("relu", "tanh", "linear")
PADDING_MODES = ("same", "valid")

_grad_enabled: ContextVar[bool] = ContextVar("gcnn_grad_enabled", default=True)

# rule(grad_of_result) -> per-parent gradients, aligned with the parents
# tuple; None marks a parent that needs no gradient.
BackwardRule = Callable[[np.ndarray], tuple]


@contextmanager
def no_grad():
    """Disable gradient recording inside the block (forward values only)."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


class Tensor:
    """Dense float64 array, optionally tracked for reverse-mode gradients.

    Leaves are built directly (``Tensor(data, requires_grad=True)``);
    primitives produce tensors that remember their operands and backward
    rule.  ``grad`` is (re)populated by :func:`backward` on trainable
    leaves; it is never accumulated across calls.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_rule")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if any(d <= 0 for d in arr.shape):
            raise ShapeError(f"tensor dimensions must be positive, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("tensor values must be finite (NaN/Inf rejected)")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._rule: BackwardRule | None = None

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
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def is_finite(self) -> bool:
        """Flag NaN/Inf produced by upstream arithmetic."""
        return bool(np.isfinite(self.data).all())

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # Arithmetic sugar; all routing goes through the module primitives.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _record(data: np.ndarray, parents: tuple[Tensor, ...], rule_factory) -> Tensor:
    """Wrap an op result; attach the backward rule only when it can matter."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    if _grad_enabled.get() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._rule = rule_factory()
    else:
        out.requires_grad = False
        out._parents = ()
        out._rule = None
    return out


@dataclass
class TapeEntry:
    """One recorded primitive application: operands, produced value, rule."""

    result: Tensor
    parents: tuple[Tensor, ...]
    rule: BackwardRule


class GradTape:
    """Topologically ordered record of the primitives behind a tensor.

    Every entry's operands precede it, so a single reverse sweep
    propagates gradients correctly.
    """

    def __init__(self, entries: list[TapeEntry]):
        self.entries = entries

    @classmethod
    def from_root(cls, root: Tensor) -> "GradTape":
        entries: list[TapeEntry] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                if node._rule is not None:
                    entries.append(TapeEntry(node, node._parents, node._rule))
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))
        return cls(entries)

    def backward(
        self, root: Tensor, leaves: Sequence[Tensor] | None = None
    ) -> dict[Tensor, np.ndarray]:
        """Accumulate gradients from ``root`` down to the trainable leaves.

        Returns a map keyed by leaf tensor; requested ``leaves`` that the
        graph never touched get zero gradients.  Leaf ``.grad`` fields are
        overwritten (no accumulation across calls).
        """
        grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
        found: dict[int, Tensor] = {}
        if root._rule is None and root.requires_grad:
            found[id(root)] = root
        for entry in reversed(self.entries):
            g = grads.pop(id(entry.result), None)
            if g is None:
                continue
            parent_grads = entry.rule(g)
            for parent, pg in zip(entry.parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                acc = grads.get(id(parent))
                if acc is None:
                    # own the buffer: rules may hand back shared/aliased views
                    grads[id(parent)] = np.array(pg)
                else:
                    acc += pg
                if parent._rule is None:
                    found[id(parent)] = parent
        result: dict[Tensor, np.ndarray] = {}
        for key, leaf in found.items():
            leaf.grad = grads.get(key, np.zeros_like(leaf.data))
            result[leaf] = leaf.grad
        if leaves is not None:
            for leaf in leaves:
                if not leaf.requires_grad:
                    raise ValueError("requested leaf is not marked trainable")
                if leaf not in result:
                    leaf.grad = np.zeros_like(leaf.data)
                    result[leaf] = leaf.grad
        return result


def backward(loss: Tensor, leaves: Sequence[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    """Reverse-mode gradients of a scalar loss over its trainable leaves."""
    if loss.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    return GradTape.from_root(loss).backward(loss, leaves=leaves)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def _as_scalar_operand(b) -> np.ndarray | None:
    """Return a 0-d array for scalar-like operands, else None."""
    if isinstance(b, Tensor):
        return b.data.reshape(()) if b.size == 1 else None
    if isinstance(b, (int, float, np.integer, np.floating)):
        return np.float64(b)
    raise TypeError(f"unsupported operand type: {type(b).__name__}")


def elementwise(op: str, a: Tensor, b) -> Tensor:
    """Pointwise ``a op b`` where ``b`` is a same-shape tensor or a scalar.

    Scalars may be Python numbers or single-element tensors; the result
    always has ``a``'s shape.  Mismatched shapes raise :class:`ShapeError`.
    """
    if op not in ("add", "sub", "mul", "div"):
        raise ValueError(f"unknown elementwise op {op!r}")
    if not isinstance(a, Tensor):
        raise TypeError("first operand must be a Tensor")

    if isinstance(b, Tensor) and b.shape == a.shape and b.size != 1:
        ad, bd = a.data, b.data
        if op == "add":
            data = ad + bd
            rule = lambda: lambda g: (g, g)
        elif op == "sub":
            data = ad - bd
            rule = lambda: lambda g: (g, -g)
        elif op == "mul":
            data = ad * bd
            rule = lambda: lambda g: (g * bd, g * ad)
        else:
            data = ad / bd
            rule = lambda: lambda g: (g / bd, -g * ad / (bd * bd))
        return _record(data, (a, b), rule)

    b0 = _as_scalar_operand(b)
    if b0 is None:
        raise ShapeError(f"elementwise {op}: shapes {a.shape} and {b.shape} do not match")
    ad = a.data
    b_shape = b.shape if isinstance(b, Tensor) else None

    def scalar_grad(arr):
        return arr.sum().reshape(b_shape) if b_shape is not None else None

    if op == "add":
        data = ad + b0
        rule = lambda: lambda g: (g, scalar_grad(g))
    elif op == "sub":
        data = ad - b0
        rule = lambda: lambda g: (g, scalar_grad(-g))
    elif op == "mul":
        data = ad * b0
        rule = lambda: lambda g: (g * b0, scalar_grad(g * ad))
    else:
        data = ad / b0
        rule = lambda: lambda g: (g / b0, scalar_grad(-g * ad / (b0 * b0)))
    parents = (a, b) if isinstance(b, Tensor) else (a,)
    return _record(data, parents, rule)


def add(a: Tensor, b) -> Tensor:
    return elementwise("add", a, b)


def sub(a: Tensor, b) -> Tensor:
    return elementwise("sub", a, b)


def mul(a: Tensor, b) -> Tensor:
    return elementwise("mul", a, b)


def div(a: Tensor, b) -> Tensor:
    return elementwise("div", a, b)


def neg(a: Tensor) -> Tensor:
    return _record(-a.data, (a,), lambda: lambda g: (-g,))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data

    def rule_factory():
        need_a, need_b = a.requires_grad, b.requires_grad

        def rule(g):
            ga = g @ bd.T if need_a else None
            gb = ad.T @ g if need_b else None
            return ga, gb

        return rule

    return _record(ad @ bd, (a, b), rule_factory)


# ---------------------------------------------------------------------------
# convolution and pooling


def _padding_amounts(padding: str, kw: int) -> tuple[int, int]:
    if padding == "same":
        left = (kw - 1) // 2
        return left, kw - 1 - left
    if padding == "valid":
        return 0, 0
    raise ValueError(f"unknown padding mode {padding!r}")


def conv1d(x: Tensor, kernels: Tensor, bias: Tensor, padding: str = "same") -> Tensor:
    """Sliding inner product of a channels x width signal, stride 1.

    ``kernels`` is (out_channels, in_channels, kernel_width); output width
    is preserved under "same" padding and shrinks by kernel_width - 1
    under "valid".  The orientation is cross-correlation: the kernel is
    applied as stored, without flipping.
    """
    if x.ndim != 2 or kernels.ndim != 3:
        raise ShapeError(f"conv1d needs (C,W) input and (O,C,kw) kernels, got {x.shape}, {kernels.shape}")
    cin, width = x.shape
    cout, kcin, kw = kernels.shape
    if kcin != cin:
        raise ShapeError(f"conv1d channel mismatch: input has {cin}, kernels expect {kcin}")
    if bias.shape != (cout,):
        raise ShapeError(f"conv1d bias must have shape ({cout},), got {bias.shape}")
    pl, pr = _padding_amounts(padding, kw)
    if kw > width + pl + pr:
        raise ShapeError(f"kernel width {kw} exceeds padded input width {width + pl + pr}")

    xp = np.pad(x.data, ((0, 0), (pl, pr)))
    windows = sliding_window_view(xp, kw, axis=1)  # (cin, wout, kw)
    kd = kernels.data
    data = np.einsum("iwk,oik->ow", windows, kd) + bias.data[:, None]
    wout = data.shape[1]

    def rule_factory():
        need_x = x.requires_grad
        need_k = kernels.requires_grad
        need_b = bias.requires_grad

        def rule(g):
            gx = gk = gb = None
            if need_b:
                gb = g.sum(axis=1)
            if need_k:
                gk = np.einsum("ow,iwk->oik", g, windows)
            if need_x:
                gxp = np.zeros_like(xp)
                for dt in range(kw):
                    gxp[:, dt : dt + wout] += np.einsum("ow,oi->iw", g, kd[:, :, dt])
                gx = gxp[:, pl : pl + width]
            return gx, gk, gb

        return rule

    return _record(data, (x, kernels, bias), rule_factory)


def channelwise_conv1d(x: Tensor, kernel: Tensor, padding: str = "same") -> Tensor:
    """Convolve every channel of ``x`` with one shared 1-D kernel.

    ``kernel`` is a flat (kw,) tensor applied independently (and
    identically) to each row; no cross-channel mixing happens.
    """
    if x.ndim != 2 or kernel.ndim != 1:
        raise ShapeError(f"channelwise_conv1d needs (C,W) input and (kw,) kernel, got {x.shape}, {kernel.shape}")
    cin, width = x.shape
    kw = kernel.shape[0]
    pl, pr = _padding_amounts(padding, kw)
    if kw > width + pl + pr:
        raise ShapeError(f"kernel width {kw} exceeds padded input width {width + pl + pr}")

    xp = np.pad(x.data, ((0, 0), (pl, pr)))
    windows = sliding_window_view(xp, kw, axis=1)
    kd = kernel.data
    data = windows @ kd
    wout = data.shape[1]

    def rule_factory():
        need_x = x.requires_grad
        need_k = kernel.requires_grad

        def rule(g):
            gx = gk = None
            if need_k:
                gk = np.einsum("cw,cwk->k", g, windows)
            if need_x:
                gxp = np.zeros_like(xp)
                for dt in range(kw):
                    gxp[:, dt : dt + wout] += g * kd[dt]
                gx = gxp[:, pl : pl + width]
            return gx, gk

        return rule

    return _record(data, (x, kernel), rule_factory)


def maxpool1d(x: Tensor, window: int, stride: int) -> Tensor:
    """Per-channel windowed maximum; gradient goes to the first argmax."""
    if window <= 0 or stride <= 0:
        raise ValueError(f"window and stride must be positive, got {window}, {stride}")
    if x.ndim != 2:
        raise ShapeError(f"maxpool1d needs a (C,W) input, got {x.shape}")
    channels, width = x.shape
    if window > width:
        raise ShapeError(f"pooling window {window} exceeds input width {width}")

    wins = sliding_window_view(x.data, window, axis=1)[:, ::stride, :]
    data = wins.max(axis=2)
    arg = wins.argmax(axis=2)  # first occurrence on ties
    wout = data.shape[1]
    cols = np.arange(wout) * stride + arg
    rows = np.broadcast_to(np.arange(channels)[:, None], (channels, wout))

    def rule_factory():
        def rule(g):
            gx = np.zeros((channels, width))
            np.add.at(gx, (rows, cols), g)
            return (gx,)

        return rule

    return _record(data, (x,), rule_factory)


# ---------------------------------------------------------------------------
# activations


def activation(x: Tensor, kind: str) -> Tensor:
    """Elementwise nonlinearity with a recorded derivative."""
    if kind == "relu":
        data = np.maximum(x.data, 0.0)
        mask = x.data > 0  # subgradient 0 at the kink
        return _record(data, (x,), lambda: lambda g: (g * mask,))
    if kind == "tanh":
        data = np.tanh(x.data)
        return _record(data, (x,), lambda: lambda g: (g * (1.0 - data * data),))
    if kind == "linear":
        return _record(x.data.copy(), (x,), lambda: lambda g: (g,))
    raise ValueError(f"unknown activation kind {kind!r}")


def relu(x: Tensor) -> Tensor:
    return activation(x, "relu")


# ---------------------------------------------------------------------------
# reductions and reshaping


def sum_all(x: Tensor) -> Tensor:
    """Sum of all elements, as a 0-d tensor."""
    data = np.asarray(x.data.sum())
    shape = x.shape
    return _record(data, (x,), lambda: lambda g: (np.full(shape, float(g)),))


def mean_all(x: Tensor) -> Tensor:
    """Mean of all elements, as a 0-d tensor."""
    data = np.asarray(x.data.mean())
    shape, n = x.shape, x.size
    return _record(data, (x,), lambda: lambda g: (np.full(shape, float(g) / n),))


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    shape = tuple(int(d) for d in shape)
    if any(d <= 0 for d in shape):
        raise ShapeError(f"reshape target must have positive dimensions, got {shape}")
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} (size {x.size}) to {shape}")
    old = x.shape
    return _record(x.data.reshape(shape), (x,), lambda: lambda g: (g.reshape(old),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along ``axis``; gradient splits back to each operand."""
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    ndim = tensors[0].ndim
    if any(t.ndim != ndim for t in tensors):
        raise ShapeError("concat operands must share the same rank")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def rule_factory():
        def rule(g):
            return tuple(np.split(g, offsets, axis=axis))

        return rule

    return _record(data, tuple(tensors), rule_factory)


def gather_rows(x: Tensor, indices: Sequence[int]) -> Tensor:
    """Select entries (1-D) or rows (n-D) by index, preserving order."""
    idx = [int(i) for i in indices]
    if not idx:
        raise ValueError("gather_rows needs at least one index")
    n = x.shape[0]
    if any(i < 0 or i >= n for i in idx):
        raise IndexError(f"gather index out of range for leading dimension {n}")
    data = x.data[idx]
    shape = x.shape
    idx_arr = np.asarray(idx)

    def rule_factory():
        def rule(g):
            gx = np.zeros(shape)
            np.add.at(gx, idx_arr, g)
            return (gx,)

        return rule

    return _record(data, (x,), rule_factory)


def take_column(x: Tensor, j: int) -> Tensor:
    """Column ``j`` of a 2-D tensor, as a 1-D tensor."""
    if x.ndim != 2:
        raise ShapeError(f"take_column needs a 2-D tensor, got {x.shape}")
    j = int(j)
    if j < 0 or j >= x.shape[1]:
        raise IndexError(f"column {j} out of range for shape {x.shape}")
    data = x.data[:, j].copy()
    shape = x.shape

    def rule_factory():
        def rule(g):
            gx = np.zeros(shape)
            gx[:, j] = g
            return (gx,)

        return rule

    return _record(data, (x,), rule_factory)


def rowscale(x: Tensor, s: Tensor) -> Tensor:
    """Scale row ``i`` of a (C,W) tensor by ``s[i]``."""
    if x.ndim != 2 or s.ndim != 1 or s.shape[0] != x.shape[0]:
        raise ShapeError(f"rowscale needs (C,W) and (C,), got {x.shape} and {s.shape}")
    xd, sd = x.data, s.data
    data = xd * sd[:, None]

    def rule_factory():
        need_x, need_s = x.requires_grad, s.requires_grad

        def rule(g):
            gx = g * sd[:, None] if need_x else None
            gs = (g * xd).sum(axis=1) if need_s else None
            return gx, gs

        return rule

    return _record(data, (x, s), rule_factory)


def softmax_rows(z: Tensor) -> Tensor:
    """Row-wise softmax of a 2-D tensor; each output row is a probability
    vector (entries in [0,1] summing to 1 up to rounding)."""
    if z.ndim != 2:
        raise ShapeError(f"softmax_rows needs a 2-D tensor, got {z.shape}")
    shifted = z.data - z.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=1, keepdims=True)

    def rule_factory():
        def rule(g):
            inner = (g * data).sum(axis=1, keepdims=True)
            return (data * (g - inner),)

        return rule

    return _record(data, (z,), rule_factory)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f: Callable[[], Tensor], leaves: Sequence[Tensor], h: float = 1e-5) -> float:
    """Worst relative discrepancy between recorded and numerical gradients.

    ``f`` must rebuild its graph from the current leaf values and return a
    scalar tensor.  Each leaf coordinate is perturbed in place by ±h and
    restored; the numerical gradient is the central difference
    (f(x+h) - f(x-h)) / 2h.  Per-coordinate error is |a - n| scaled by
    max(1, |a|, |n|), i.e. absolute for small gradients and relative for
    large ones.  Returns the maximum over all coordinates of all leaves.
    """
    out = f()
    grads = backward(out, leaves=leaves)
    worst = 0.0
    with no_grad():
        for leaf in leaves:
            analytic = grads[leaf].reshape(-1)
            flat = leaf.data.reshape(-1)
            for i in range(flat.size):
                orig = float(flat[i])
                flat[i] = orig + h
                fp = f().item()
                flat[i] = orig - h
                fm = f().item()
                flat[i] = orig
                num = (fp - fm) / (2.0 * h)
                a = float(analytic[i])
                err = abs(a - num) / max(1.0, abs(a), abs(num))
                if err > worst:
                    worst = err
    return worst
