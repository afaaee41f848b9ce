"""Reverse-mode differentiable primitives on numpy arrays.

Every learnable operation in this package is assembled from the ops in this
module.  The contract is deliberately small: each op computes its forward
value eagerly and records a rule mapping the output cotangent to input
cotangents.  ``Tensor.backward()`` replays those rules in reverse
topological order.  There is no graph compiler, no fusion, no device
placement; ops are pure functions of immutable inputs and are safe to call
from multiple threads.

All ops preserve the dtype of their inputs.  Tests and gradient checks run
in float64; training may run in float32 for speed (see the harness config).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "GradientReport",
    "astensor",
    "affine",
    "softmax",
    "log_softmax",
    "cross_entropy",
    "relu",
    "sigmoid",
    "tanh",
    "matmul",
    "conv2d",
    "avg_pool2d",
    "embedding_lookup",
    "take_rows",
    "grad_check",
    "relative_error",
]


class Tensor:
    """An ndarray-valued node in a reverse-mode computation graph.

    ``data`` is the forward value, ``grad`` accumulates the cotangent after
    ``backward()``.  Non-leaf tensors hold references to their parents and a
    vjp rule; leaves hold neither.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype.kind in "iub":
            arr = arr.astype(np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("Tensor data must be finite (no NaN/Inf)")
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

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
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Accumulate gradients of this (normally scalar) tensor into leaves."""
        if seed is None:
            if self.data.size != 1:
                raise ValueError(
                    f"backward() without a seed requires a scalar, got shape {self.shape}"
                )
            seed = np.ones_like(self.data)
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
        self.grad = np.asarray(seed, dtype=self.data.dtype)
        for node in reversed(order):
            if node._vjp is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._vjp(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += g

    # arithmetic sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(other, mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return _getitem(self, key)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, shape[0] if len(shape) == 1 and not isinstance(shape[0], int) else shape)

    def transpose(self, *axes) -> "Tensor":
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def astensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._vjp = vjp
    else:
        out._parents = ()
        out._vjp = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# elementwise ----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    data = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(data, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    data = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(data, (a, b), vjp)


def relu(x) -> Tensor:
    x = astensor(x)
    data = np.maximum(x.data, 0)

    def vjp(g):
        return ((x.data > 0) * g,)

    return _make(data, (x,), vjp)


def sigmoid(x) -> Tensor:
    x = astensor(x)
    # evaluate on the negative half-line only, to avoid exp overflow
    d = x.data
    data = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))

    def vjp(g):
        return (g * data * (1.0 - data),)

    return _make(data, (x,), vjp)


def tanh(x) -> Tensor:
    x = astensor(x)
    data = np.tanh(x.data)

    def vjp(g):
        return (g * (1.0 - data * data),)

    return _make(data, (x,), vjp)


# shape manipulation ---------------------------------------------------


def reshape(x, shape) -> Tensor:
    x = astensor(x)
    data = x.data.reshape(shape)

    def vjp(g):
        return (g.reshape(x.shape),)

    return _make(data, (x,), vjp)


def transpose(x, axes=None) -> Tensor:
    x = astensor(x)
    data = np.transpose(x.data, axes)
    inv = None if axes is None else np.argsort(axes)

    def vjp(g):
        return (np.transpose(g, inv),)

    return _make(data, (x,), vjp)


def _getitem(x: Tensor, key) -> Tensor:
    data = x.data[key]
    if isinstance(data, np.ndarray) and data.base is not None:
        data = data.copy()

    def vjp(g):
        full = np.zeros_like(x.data)
        full[key] = g
        return (full,)

    return _make(np.asarray(data), (x,), vjp)


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = astensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, x.shape).copy(),)

    return _make(np.asarray(data), (x,), vjp)


def tmean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = astensor(x)
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


# linear algebra -------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    data = a.data @ b.data

    def vjp(g):
        bd, ad = b.data, a.data
        if ad.ndim == 1 and bd.ndim == 1:
            return g * bd, g * ad
        if ad.ndim == 1:
            ga = (g[..., None, :] @ np.swapaxes(bd, -1, -2)).reshape(bd.shape[:-2] + ad.shape)
            ga = _unbroadcast(ga, ad.shape)
            gb = ad[:, None] * g[..., None, :]
            return ga, _unbroadcast(gb, bd.shape)
        if bd.ndim == 1:
            ga = g[..., :, None] * bd
            gb = np.swapaxes(ad, -1, -2) @ g[..., :, None]
            return _unbroadcast(ga, ad.shape), _unbroadcast(gb[..., 0], bd.shape)
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make(data, (a, b), vjp)


def affine(x, weight, bias) -> Tensor:
    """y = W x + b with W of shape (n_out, n_in), batched over leading axes of x."""
    x, weight, bias = astensor(x), astensor(weight), astensor(bias)
    if weight.ndim != 2:
        raise ValueError(f"affine weight must be 2-D, got shape {weight.shape}")
    n_out, n_in = weight.shape
    if x.shape[-1] != n_in:
        raise ValueError(
            f"affine shape mismatch: input shape {x.shape} vs weight shape {weight.shape}"
        )
    if bias.shape != (n_out,):
        raise ValueError(
            f"affine shape mismatch: bias shape {bias.shape} vs weight shape {weight.shape}"
        )
    return add(matmul(x, transpose(weight)), bias)


# softmax / losses -----------------------------------------------------


def softmax(x, axis: int = -1) -> Tensor:
    x = astensor(x)
    if x.size == 0:
        raise ValueError("softmax of an empty tensor")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        return (data * (g - inner),)

    return _make(data, (x,), vjp)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = astensor(x)
    if x.size == 0:
        raise ValueError("log_softmax of an empty tensor")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - lse
    sm = np.exp(data)

    def vjp(g):
        return (g - sm * g.sum(axis=axis, keepdims=True),)

    return _make(data, (x,), vjp)


def cross_entropy(logits, target) -> Tensor:
    """-log softmax(logits)[target].

    ``logits`` may be a vector with an integer target, or a (B, N) batch with
    a length-B integer target array; the batch form returns the mean loss.
    """
    logits = astensor(logits)
    if logits.ndim == 1:
        n = logits.shape[0]
        t = int(target)
        if not 0 <= t < n:
            raise ValueError(f"cross_entropy target {t} out of range [0, {n})")
        lp = log_softmax(logits, axis=-1)
        return mul(lp[t], -1.0)
    if logits.ndim == 2:
        b, n = logits.shape
        t = np.asarray(target, dtype=np.intp)
        if t.shape != (b,):
            raise ValueError(f"cross_entropy targets shape {t.shape} does not match batch {b}")
        if t.min() < 0 or t.max() >= n:
            raise ValueError(f"cross_entropy target out of range [0, {n})")
        lp = log_softmax(logits, axis=-1)
        picked = _getitem(lp, (np.arange(b), t))
        return mul(tmean(picked), -1.0)
    raise ValueError(f"cross_entropy expects 1-D or 2-D logits, got shape {logits.shape}")


# gathers --------------------------------------------------------------


def take_rows(x, idx) -> Tensor:
    """Gather rows of a 2-D (or higher) tensor along axis 0 by an integer index array."""
    x = astensor(x)
    idx = np.asarray(idx, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise ValueError(f"row index out of range [0, {x.shape[0]})")
    data = x.data[idx]

    def vjp(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx.reshape(-1), g.reshape((-1,) + x.shape[1:]))
        return (full,)

    return _make(data, (x,), vjp)


def embedding_lookup(table, ids) -> Tensor:
    """Row lookup where id 0 is a frozen all-zero padding row.

    The forward ignores the stored values of row 0 (reads zeros) and the
    backward never writes a gradient into it, so the padding row stays
    exactly zero under any optimizer that scales gradients and decayed
    weights multiplicatively.
    """
    table = astensor(table)
    ids = np.asarray(ids, dtype=np.intp)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValueError(f"token id out of range [0, {table.shape[0]})")
    data = table.data[ids]
    pad = ids == 0
    if pad.any():
        data = data.copy()
        data[pad] = 0.0

    def vjp(g):
        full = np.zeros_like(table.data)
        keep = ~pad.reshape(-1)
        flat_ids = ids.reshape(-1)[keep]
        flat_g = g.reshape((-1,) + table.shape[1:])[keep]
        np.add.at(full, flat_ids, flat_g)
        return (full,)

    return _make(data, (table,), vjp)


# convolution / pooling ------------------------------------------------


def _im2col(x: np.ndarray, kh: int, kw: int, pad: int) -> np.ndarray:
    """(B, C, H, W) -> (B, Ho, Wo, C*kh*kw) patch matrix for a stride-1 conv."""
    b, c, h, w = x.shape
    ho, wo = h + 2 * pad - kh + 1, w + 2 * pad - kw + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    # win: (B, C, Ho, Wo, kh, kw) -> (B, Ho, Wo, C, kh, kw)
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(b, ho, wo, c * kh * kw)


def conv2d(x, weight, bias, pad: int = 1) -> Tensor:
    """Stride-1 2-D cross-correlation with zero padding.

    x: (B, C, H, W); weight: (O, C, kh, kw); bias: (O,).  Output (B, O, H', W')
    with H' = H + 2*pad - kh + 1.
    """
    x, weight, bias = astensor(x), astensor(weight), astensor(bias)
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and kernel, got {x.shape} and {weight.shape}")
    b, c, h, w = x.shape
    o, c2, kh, kw = weight.shape
    if c != c2:
        raise ValueError(f"conv2d channel mismatch: input shape {x.shape} vs kernel shape {weight.shape}")
    if bias.shape != (o,):
        raise ValueError(f"conv2d bias shape {bias.shape} does not match kernel shape {weight.shape}")
    ho, wo = h + 2 * pad - kh + 1, w + 2 * pad - kw + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d kernel {weight.shape} larger than padded input {x.shape}")
    col = _im2col(x.data, kh, kw, pad)  # (B, Ho, Wo, C*kh*kw) when pad keeps size
    col2 = col.reshape(-1, c * kh * kw)
    wmat = weight.data.reshape(o, -1)
    out = (col2 @ wmat.T).reshape(b, ho, wo, o).transpose(0, 3, 1, 2) + bias.data[:, None, None]
    out = np.ascontiguousarray(out)

    def vjp(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (gmat.T @ col2).reshape(weight.shape)
        gb = gmat.sum(axis=0)
        # dx is a full correlation of g with the spatially flipped kernel,
        # with roles of input/output channels swapped
        wf = weight.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)  # (C, O, kh, kw)
        gcol = _im2col(g, kh, kw, kh - 1 - pad)
        gx = (gcol.reshape(-1, o * kh * kw) @ wf.reshape(c, -1).T).reshape(b, h, w, c)
        return gx.transpose(0, 3, 1, 2), gw, gb

    return _make(out, (x, weight, bias), vjp)


def avg_pool2d(x, k: int = 2) -> Tensor:
    """Non-overlapping k x k average pooling; spatial dims must divide by k."""
    x = astensor(x)
    b, c, h, w = x.shape
    if h % k or w % k:
        raise ValueError(f"avg_pool2d: spatial dims of {x.shape} not divisible by {k}")
    data = x.data.reshape(b, c, h // k, k, w // k, k).mean(axis=(3, 5))

    def vjp(g):
        g2 = np.repeat(np.repeat(g, k, axis=2), k, axis=3)
        return (g2 / (k * k),)

    return _make(data, (x,), vjp)


# gradient verification ------------------------------------------------


@dataclass
class GradientReport:
    """Worst-coordinate comparison of analytic vs central-difference gradients."""

    max_rel_err: float
    worst_index: int
    analytic: float
    numeric: float

    def __str__(self) -> str:
        return (
            f"max_rel_err={self.max_rel_err:.3e} at flat index {self.worst_index} "
            f"(analytic={self.analytic:.6e}, numeric={self.numeric:.6e})"
        )


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> GradientReport:
    """Compare the analytic gradient of scalar ``f`` at ``x`` against central differences.

    Every coordinate of ``x`` is perturbed by ±eps; the report carries the
    worst coordinate.  Raises if any evaluation is non-finite.
    """
    if eps <= 0:
        raise ValueError("grad_check requires eps > 0")
    x0 = np.array(x.data, dtype=np.float64, copy=True)
    probe = Tensor(x0, requires_grad=True)
    out = f(probe)
    if out.size != 1:
        raise ValueError(f"grad_check requires a scalar function, got output shape {out.shape}")
    if not np.isfinite(out.data).all():
        raise ValueError("grad_check: function value is non-finite at x")
    out.backward()
    analytic = probe.grad if probe.grad is not None else np.zeros_like(x0)
    analytic = analytic.reshape(-1)

    flat = x0.reshape(-1)
    worst = GradientReport(-1.0, 0, 0.0, 0.0)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(Tensor(x0)).data
        flat[i] = orig - eps
        lo = f(Tensor(x0)).data
        flat[i] = orig
        if not (np.isfinite(hi).all() and np.isfinite(lo).all()):
            raise ValueError(f"grad_check: non-finite evaluation at coordinate {i}")
        numeric = float((hi - lo) / (2.0 * eps))
        err = relative_error(float(analytic[i]), numeric)
        if err > worst.max_rel_err:
            worst = GradientReport(err, i, float(analytic[i]), numeric)
    if worst.max_rel_err < 0:  # zero-size input
        worst = GradientReport(0.0, 0, 0.0, 0.0)
    return worst
