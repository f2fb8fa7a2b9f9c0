"""Dense float64 tensors with reverse-mode gradient accumulation.

A `Tensor` wraps a C-order ``numpy.float64`` array plus tape bookkeeping.
Operations build a DAG; calling :meth:`Tensor.backward` on a scalar result
accumulates gradients into every reachable tensor that has
``requires_grad=True``.

Broadcasting is deliberately restricted: elementwise ops accept operands of
identical shape, or a matrix ``(m, n)`` combined with a row vector ``(n,)``
(the vector is applied to every row).  Python scalars are accepted as
constant factors/offsets.  Anything else raises :class:`ShapeError` so that
every gradient path stays auditable.

All public operations verify that their results are finite; disable with
``set_finite_checks(False)`` for throughput runs.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError, NumericError, ShapeError

_FINITE_CHECKS = True


def set_finite_checks(enabled: bool) -> None:
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


def _check_finite(data: np.ndarray, op: str) -> None:
    if _FINITE_CHECKS and not np.isfinite(data).all():
        raise NumericError(f"{op} produced non-finite values")


class Tensor:
    """A node in the computation graph."""

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents = ()

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single value, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        """Same values, cut off from the tape."""
        return Tensor(self.data)

    # -- autodiff ------------------------------------------------------
    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar node."""
        if self.data.size != 1:
            raise ShapeError(
                f"backward() requires a scalar loss, got shape {self.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited or not node.requires_grad:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def _make(data, parents, backward, op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast_row(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a full-shape gradient back to a row vector if needed."""
    if g.shape == tuple(shape):
        return g
    return g.sum(axis=0)


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape:
        return
    if a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
        return  # documented broadcast: row vector over matrix rows
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# ----------------------------------------------------------------------
# arithmetic
# ----------------------------------------------------------------------
def add(a: Tensor, b) -> Tensor:
    if isinstance(b, (int, float)):
        a = _as_tensor(a)
        out_data = a.data + float(b)

        def backward():
            a._accumulate(out.grad)

        out = _make(out_data, (a,), backward, "add")
        return out
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "add")
    out_data = a.data + b.data

    def backward():
        a._accumulate(out.grad)
        b._accumulate(_unbroadcast_row(out.grad, b.shape))

    out = _make(out_data, (a, b), backward, "add")
    return out


def sub(a: Tensor, b) -> Tensor:
    if isinstance(b, (int, float)):
        return add(a, -float(b))
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "sub")
    out_data = a.data - b.data

    def backward():
        a._accumulate(out.grad)
        b._accumulate(-_unbroadcast_row(out.grad, b.shape))

    out = _make(out_data, (a, b), backward, "sub")
    return out


def mul(a: Tensor, b) -> Tensor:
    if isinstance(b, (int, float)):
        a = _as_tensor(a)
        k = float(b)
        out_data = a.data * k

        def backward():
            a._accumulate(out.grad * k)

        out = _make(out_data, (a,), backward, "mul")
        return out
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "mul")
    out_data = a.data * b.data

    def backward():
        a._accumulate(out.grad * b.data)
        b._accumulate(_unbroadcast_row(out.grad * a.data, b.shape))

    out = _make(out_data, (a, b), backward, "mul")
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out_data = a.data @ b.data

    def backward():
        a._accumulate(out.grad @ b.data.T)
        b._accumulate(a.data.T @ out.grad)

    out = _make(out_data, (a, b), backward, "matmul")
    return out


# ----------------------------------------------------------------------
# activations
# ----------------------------------------------------------------------
def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward():
        a._accumulate(out.grad * y * (1.0 - y))

    out = _make(y, (a,), backward, "sigmoid")
    return out


def tanh(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.data)

    def backward():
        a._accumulate(out.grad * (1.0 - y * y))

    out = _make(y, (a,), backward, "tanh")
    return out


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    y = np.maximum(a.data, 0.0)

    def backward():
        a._accumulate(out.grad * (a.data > 0.0))

    out = _make(y, (a,), backward, "relu")
    return out


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    a = _as_tensor(a)
    y = np.where(a.data > 0.0, a.data, slope * a.data)

    def backward():
        a._accumulate(out.grad * np.where(a.data > 0.0, 1.0, slope))

    out = _make(y, (a,), backward, "leaky_relu")
    return out


def softplus(a: Tensor) -> Tensor:
    """log(1 + e^x), computed stably; softplus(-x) = -log(sigmoid(x))."""
    a = _as_tensor(a)
    x = a.data
    y = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def backward():
        s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                     np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        a._accumulate(out.grad * s)

    out = _make(y, (a,), backward, "softplus")
    return out


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    a = _as_tensor(a)
    y = np.clip(a.data, lo, hi)

    def backward():
        inside = (a.data > lo) & (a.data < hi)
        a._accumulate(out.grad * inside)

    out = _make(y, (a,), backward, "clamp")
    return out


# ----------------------------------------------------------------------
# reductions and shape ops
# ----------------------------------------------------------------------
def tsum(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    y = np.asarray(a.data.sum())

    def backward():
        a._accumulate(np.full_like(a.data, float(out.grad)))

    out = _make(y, (a,), backward, "sum")
    return out


def tmean(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    y = np.asarray(a.data.mean())
    n = a.data.size

    def backward():
        a._accumulate(np.full_like(a.data, float(out.grad) / n))

    out = _make(y, (a,), backward, "mean")
    return out


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    y = a.data.reshape(shape)

    def backward():
        a._accumulate(out.grad.reshape(a.shape))

    out = _make(y, (a,), backward, "reshape")
    return out


def transpose(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")
    y = np.ascontiguousarray(a.data.T)

    def backward():
        a._accumulate(out.grad.T)

    out = _make(y, (a,), backward, "transpose")
    return out


def concat_cols(parts) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if any(p.data.ndim != 2 for p in parts):
        raise ShapeError("concat_cols expects matrices")
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols: row counts differ: "
                         f"{[p.shape for p in parts]}")
    y = np.concatenate([p.data for p in parts], axis=1)
    widths = [p.shape[1] for p in parts]

    def backward():
        ofs = 0
        for p, w in zip(parts, widths):
            p._accumulate(out.grad[:, ofs:ofs + w])
            ofs += w

    out = _make(y, tuple(parts), backward, "concat_cols")
    return out


def reverse_time(a: Tensor) -> Tensor:
    """Reverse along axis 0 (the timestep axis of a [T, ...] tensor)."""
    a = _as_tensor(a)
    y = np.ascontiguousarray(a.data[::-1])

    def backward():
        a._accumulate(out.grad[::-1])

    out = _make(y, (a,), backward, "reverse_time")
    return out


def take_time(a: Tensor, index: int) -> Tensor:
    """Select one timestep from a [T, ...] tensor."""
    a = _as_tensor(a)
    if not -a.shape[0] <= index < a.shape[0]:
        raise ShapeError(f"take_time: index {index} out of range for {a.shape}")
    y = a.data[index].copy()

    def backward():
        g = np.zeros_like(a.data)
        g[index] = out.grad
        a._accumulate(g)

    out = _make(y, (a,), backward, "take_time")
    return out


def tile_rows(a: Tensor, reps: int) -> Tensor:
    """Stack ``reps`` copies of a matrix vertically."""
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"tile_rows expects a matrix, got shape {a.shape}")
    y = np.tile(a.data, (reps, 1))
    rows = a.shape[0]

    def backward():
        a._accumulate(out.grad.reshape(reps, rows, -1).sum(axis=0))

    out = _make(y, (a,), backward, "tile_rows")
    return out


def mix_time(alpha: Tensor, h: Tensor) -> Tensor:
    """Weighted sum over timesteps: out[b, k] = sum_t alpha[b, t] * h[t, b, k]."""
    alpha, h = _as_tensor(alpha), _as_tensor(h)
    if alpha.data.ndim != 2 or h.data.ndim != 3 or \
            alpha.shape[0] != h.shape[1] or alpha.shape[1] != h.shape[0]:
        raise ShapeError(f"mix_time: incompatible shapes {alpha.shape} and {h.shape}")
    y = np.einsum("bt,tbk->bk", alpha.data, h.data)

    def backward():
        alpha._accumulate(np.einsum("bk,tbk->bt", out.grad, h.data))
        h._accumulate(np.einsum("bt,bk->tbk", alpha.data, out.grad))

    out = _make(y, (alpha, h), backward, "mix_time")
    return out


# ----------------------------------------------------------------------
# softmax and losses
# ----------------------------------------------------------------------
def softmax_rows(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"softmax_rows expects a matrix, got shape {a.shape}")
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def backward():
        g = out.grad
        dot = (g * y).sum(axis=1, keepdims=True)
        a._accumulate(y * (g - dot))

    out = _make(y, (a,), backward, "softmax_rows")
    return out


def softmax_cross_entropy(logits: Tensor, one_hot: np.ndarray):
    """Mean cross-entropy over rows, with max-subtraction stabilization.

    Returns ``(loss, probabilities)``; the probabilities are a plain array
    (they are a by-product, not part of the tape).
    """
    logits = _as_tensor(logits)
    targets = np.asarray(one_hot, dtype=np.float64)
    if logits.data.ndim != 2 or targets.shape != logits.shape:
        raise ShapeError(f"softmax_cross_entropy: logits {logits.shape} "
                         f"vs targets {targets.shape}")
    ones_per_row = (targets == 1.0).sum(axis=1)
    if not (np.all(ones_per_row == 1) and
            np.allclose(targets.sum(axis=1), 1.0, atol=1e-12)):
        raise DataError("targets must be one-hot rows")
    n = logits.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsumexp
    probs = np.exp(logp)
    loss_val = np.asarray(-(targets * logp).sum() / n)

    def backward():
        logits._accumulate((probs - targets) * (float(out.grad) / n))

    out = _make(loss_val, (logits,), backward, "softmax_cross_entropy")
    return out, probs


def mse(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes differ, {a.shape} vs {b.shape}")
    d = sub(a, b)
    return tmean(mul(d, d))
