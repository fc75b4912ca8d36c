"""Minimal reverse-mode autodiff over a float64 numpy substrate.

A Tensor wraps a numpy array plus an optional gradient. Ops are free
functions that build the graph as they evaluate: each op records its parent
tensors and a backward closure on the output. `Tensor.backward()` walks the
graph once in reverse topological order and accumulates gradients into every
tensor created with `requires_grad=True`.

Ops are pure: no op mutates an input array. Re-running a graph with the same
inputs reproduces bit-identical values.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ShapeError
from .rng import Rng


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward: Callable[[], None] | None = None
        self._parents: tuple[Tensor, ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable grad-tracked leaf.

        Without an explicit seed gradient, self must be a scalar.
        """
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed gradient needs a scalar")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != self.data.shape:
                raise ShapeError(
                    f"seed gradient shape {grad.shape} does not match tensor shape {self.data.shape}"
                )

        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))

        _accumulate(self, grad)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _wire(out: Tensor, parents: Sequence[Tensor], backward: Callable[[], None]) -> Tensor:
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum with numpy broadcasting."""
    try:
        out = Tensor(a.data + b.data)
    except ValueError as exc:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}") from exc

    def backward() -> None:
        g = out.grad
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.data.shape))

    return _wire(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    try:
        out = Tensor(a.data * b.data)
    except ValueError as exc:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}") from exc

    def backward() -> None:
        g = out.grad
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _wire(out, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out = Tensor(a.data * s)

    def backward() -> None:
        _accumulate(a, out.grad * s)

    return _wire(out, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product: [m,k] @ [k,n] -> [m,n]."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} vs {b.shape}")
    out = Tensor(a.data @ b.data)

    def backward() -> None:
        g = out.grad
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    return _wire(out, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))

    def backward() -> None:
        _accumulate(x, out.grad * (x.data > 0.0))

    return _wire(out, (x,), backward)


def silu(x: Tensor) -> Tensor:
    """x * sigmoid(x)."""
    # evaluate sigmoid on the non-positive branch via exp(x)/(1+exp(x)) so
    # large negative inputs cannot overflow exp
    z = x.data
    sig = np.empty_like(z)
    pos = z >= 0.0
    sig[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    sig[~pos] = ez / (1.0 + ez)
    out = Tensor(x.data * sig)

    def backward() -> None:
        _accumulate(x, out.grad * (sig * (1.0 + x.data * (1.0 - sig))))

    return _wire(out, (x,), backward)


def mse(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error over all elements, as a scalar tensor."""
    if pred.data.shape != target.data.shape:
        raise ShapeError(f"mse: shapes differ, {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    out = Tensor(np.mean(diff * diff))

    def backward() -> None:
        g = out.grad * (2.0 / diff.size) * diff
        if pred.requires_grad:
            _accumulate(pred, g)
        if target.requires_grad:
            _accumulate(target, -g)

    return _wire(out, (pred, target), backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = Tensor(x.data.reshape(tuple(shape)))
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from exc

    def backward() -> None:
        _accumulate(x, out.grad.reshape(x.data.shape))

    return _wire(out, (x,), backward)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concatenate along an axis; backward splits the gradient."""
    if not parts:
        raise ShapeError("concat needs at least one tensor")
    try:
        out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    except ValueError as exc:
        raise ShapeError("concat: incompatible shapes") from exc
    ax = axis if axis >= 0 else out.data.ndim + axis
    widths = [p.data.shape[ax] for p in parts]

    def backward() -> None:
        offset = 0
        for p, w in zip(parts, widths):
            if p.requires_grad:
                index = [slice(None)] * out.data.ndim
                index[ax] = slice(offset, offset + w)
                _accumulate(p, out.grad[tuple(index)])
            offset += w

    return _wire(out, tuple(parts), backward)


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation.

    x is [c_in, H, W] or [B, c_in, H, W]; kernel is [c_out, c_in, kh, kw].
    Output spatial size is (H + 2*padding - kh) // stride + 1 per side.
    """
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {stride}")
    if padding < 0:
        raise ShapeError(f"conv2d: padding must be >= 0, got {padding}")
    if kernel.data.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be 4-D, got {kernel.shape}")
    unbatched = x.data.ndim == 3
    xd = x.data[None] if unbatched else x.data
    if xd.ndim != 4:
        raise ShapeError(f"conv2d: input must be 3-D or 4-D, got {x.shape}")
    batch, c_in, height, width = xd.shape
    c_out, kc, kh, kw = kernel.data.shape
    if kc != c_in:
        raise ShapeError(f"conv2d: input has {c_in} channels, kernel expects {kc}")
    ph, pw = height + 2 * padding, width + 2 * padding
    if kh > ph or kw > pw:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} exceeds padded input {ph}x{pw}")
    out_h = (ph - kh) // stride + 1
    out_w = (pw - kw) // stride + 1

    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]  # [B, c_in, out_h, out_w, kh, kw]
    y = np.einsum("bchwij,ocij->bohw", windows, kernel.data, optimize=True)
    out = Tensor(y[0] if unbatched else y)

    def backward() -> None:
        g = out.grad[None] if unbatched else out.grad
        if kernel.requires_grad:
            gk = np.einsum("bohw,bchwij->ocij", g, windows, optimize=True)
            _accumulate(kernel, gk)
        if x.requires_grad:
            gcols = np.einsum("bohw,ocij->bchwij", g, kernel.data, optimize=True)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride] += gcols[
                        :, :, :, :, i, j
                    ]
            gx = gxp[:, :, padding : padding + height, padding : padding + width]
            _accumulate(x, gx[0] if unbatched else gx)

    return _wire(out, (x, kernel), backward)


def gaussian(rng: Rng, shape: Sequence[int]) -> Tensor:
    """Standard normal draw as a constant tensor."""
    return Tensor(rng.normal(tuple(shape)))
