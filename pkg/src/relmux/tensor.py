"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

Every value in the model (parameters and activations) is a Tensor wrapping a
row-major numpy float64 array. Operations record a backward closure; calling
``backward()`` on a scalar walks the tape in reverse topological order and
accumulates gradients into every reachable tensor with ``requires_grad``.

The engine is deliberately small: 2-D matmul, elementwise arithmetic with
broadcasting, row softmax, layer norm, relu/tanh, cross entropy, and the
slicing/concatenation plumbing the model needs. No higher-order derivatives.
"""

from __future__ import annotations

import numpy as np

# Additive mask value standing in for -infinity. exp(NEG_INF + s) underflows
# to exactly 0.0 for any score s of sane magnitude, so masked positions get
# exactly zero attention weight and zero gradient without inf/nan arithmetic.
NEG_INF = -1.0e9

LN_EPS = 1e-5


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.op = op
        self._parents = _parents
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Reverse-mode sweep from this scalar through the recorded tape."""
        if self.data.size != 1:
            raise ShapeError(f"backward() requires a scalar, got shape {self.shape}")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operator sugar; the free functions below do the work.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _toposort(root: Tensor) -> list[Tensor]:
    # Iterative DFS; per-step graphs can be thousands of nodes deep in chains,
    # which would overflow Python's recursion limit.
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
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _needs_grad(*tensors: Tensor) -> bool:
    return any(t.requires_grad for t in tensors)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcasted gradient back to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def add(a: Tensor, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data, _needs_grad(a, b), (a, b), "add")

    def _bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    out._backward = _bw if out.requires_grad else None
    return out


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data, a.requires_grad, (a,), "neg")
    if out.requires_grad:
        out._backward = lambda g: a._accumulate(-g)
    return out


def mul(a: Tensor, b) -> Tensor:
    """Elementwise (broadcasting) product; also covers scaling by a float."""
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data, _needs_grad(a, b), (a, b), "mul")

    def _bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    out._backward = _bw if out.requires_grad else None
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes incompatible: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data, _needs_grad(a, b), (a, b), "matmul")

    def _bw(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    out._backward = _bw if out.requires_grad else None
    return out


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a 2-D tensor, got {a.shape}")
    out = Tensor(a.data.T.copy(), a.requires_grad, (a,), "transpose")
    if out.requires_grad:
        out._backward = lambda g: a._accumulate(g.T)
    return out


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis (gradient scattered back, rest zero)."""
    if a.data.ndim != 2 or axis not in (0, 1):
        raise ShapeError(f"narrow expects a 2-D tensor, got {a.shape}")
    if start < 0 or start + length > a.shape[axis]:
        raise ShapeError(f"narrow [{start}:{start + length}) out of range for {a.shape} axis {axis}")
    sl = (slice(start, start + length), slice(None)) if axis == 0 else (slice(None), slice(start, start + length))
    out = Tensor(a.data[sl].copy(), a.requires_grad, (a,), "narrow")

    def _bw(g):
        full = np.zeros_like(a.data)
        full[sl] = g
        a._accumulate(full)

    out._backward = _bw if out.requires_grad else None
    return out


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ShapeError("concat of empty list")
    datas = [t.data for t in tensors]
    out = Tensor(np.concatenate(datas, axis=axis), _needs_grad(*tensors), tuple(tensors), "concat")

    def _bw(g):
        offset = 0
        for t in tensors:
            length = t.shape[axis]
            sl = (slice(offset, offset + length), slice(None)) if axis == 0 else (slice(None), slice(offset, offset + length))
            if t.requires_grad:
                t._accumulate(g[sl])
            offset += length

    out._backward = _bw if out.requires_grad else None
    return out


def gather_rows(table: Tensor, indices) -> Tensor:
    """Row lookup table[i] for each index; gradient scatter-adds into the table."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError("gather_rows expects a flat index list")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(f"gather_rows index out of range for table {table.shape}")
    out = Tensor(table.data[idx].copy(), table.requires_grad, (table,), "gather_rows")

    def _bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        table._accumulate(full)

    out._backward = _bw if out.requires_grad else None
    return out


def repeat_rows(a: Tensor, n: int) -> Tensor:
    """Tile a (1, d) row into (n, d); gradient sums back over the copies."""
    if a.data.ndim != 2 or a.shape[0] != 1:
        raise ShapeError(f"repeat_rows expects shape (1, d), got {a.shape}")
    out = Tensor(np.repeat(a.data, n, axis=0), a.requires_grad, (a,), "repeat_rows")
    if out.requires_grad:
        out._backward = lambda g: a._accumulate(g.sum(axis=0, keepdims=True))
    return out


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(a.data.reshape(shape).copy(), a.requires_grad, (a,), "reshape")
    if out.requires_grad:
        out._backward = lambda g: a._accumulate(g.reshape(a.shape))
    return out


def tsum(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum(), a.requires_grad, (a,), "sum")
    if out.requires_grad:
        out._backward = lambda g: a._accumulate(np.full_like(a.data, float(g)))
    return out


def add_n(tensors: list[Tensor]) -> Tensor:
    """n-ary sum of same-shape tensors; keeps the tape shallow for batch losses."""
    if not tensors:
        raise ShapeError("add_n of empty list")
    acc = tensors[0].data.copy()
    for t in tensors[1:]:
        if t.shape != tensors[0].shape:
            raise ShapeError(f"add_n shape mismatch: {t.shape} vs {tensors[0].shape}")
        acc += t.data
    out = Tensor(acc, _needs_grad(*tensors), tuple(tensors), "add_n")

    def _bw(g):
        for t in tensors:
            if t.requires_grad:
                t._accumulate(g)

    out._backward = _bw if out.requires_grad else None
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0), a.requires_grad, (a,), "relu")
    if out.requires_grad:
        # subgradient 0 at exactly 0
        out._backward = lambda g: a._accumulate(g * (a.data > 0.0))
    return out


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    out = Tensor(t, a.requires_grad, (a,), "tanh")
    if out.requires_grad:
        out._backward = lambda g: a._accumulate(g * (1.0 - t * t))
    return out


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax over the trailing dimension, stabilized by max subtraction.

    Rows are nonnegative and sum to 1 within accumulated rounding. NaN input
    is rejected rather than propagated.
    """
    if a.data.ndim < 1 or a.shape[-1] < 1:
        raise ShapeError(f"softmax_rows needs a trailing dimension, got {a.shape}")
    if np.isnan(a.data).any():
        raise ValueError("softmax_rows: NaN in input")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(p, a.requires_grad, (a,), "softmax_rows")

    def _bw(g):
        dot = (g * p).sum(axis=-1, keepdims=True)
        a._accumulate((g - dot) * p)

    out._backward = _bw if out.requires_grad else None
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    """Per-row standardization followed by an elementwise affine map."""
    d = x.shape[-1]
    if d < 2:
        raise ShapeError("layer_norm over a single feature is degenerate")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm affine params must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    out = Tensor(gain.data * y + bias.data, _needs_grad(x, gain, bias), (x, gain, bias), "layer_norm")

    def _bw(g):
        if gain.requires_grad:
            gain._accumulate(_unbroadcast(g * y, gain.shape))
        if bias.requires_grad:
            bias._accumulate(_unbroadcast(g, bias.shape))
        if x.requires_grad:
            gy = g * gain.data
            m1 = gy.mean(axis=-1, keepdims=True)
            m2 = (gy * y).mean(axis=-1, keepdims=True)
            x._accumulate((gy - m1 - y * m2) * inv)

    out._backward = _bw if out.requires_grad else None
    return out


def cross_entropy(logits: Tensor, gold: int, mask: np.ndarray | None = None) -> Tensor:
    """Negative log softmax probability of the gold class.

    ``logits`` may be any shape that ravels to the class axis. ``mask`` is an
    optional additive mask (0 for allowed, NEG_INF for excluded); a masked
    gold index is an unsatisfiable target and raises.
    """
    flat = logits.data.reshape(-1)
    n = flat.size
    if not 0 <= gold < n:
        raise IndexError(f"gold index {gold} out of range for {n} classes")
    if np.isnan(flat).any():
        raise ValueError("cross_entropy: NaN in logits")
    if mask is not None:
        mask = np.asarray(mask, dtype=np.float64).reshape(-1)
        if mask.shape != flat.shape:
            raise ShapeError(f"mask shape {mask.shape} does not match logits {flat.shape}")
        if mask[gold] != 0.0:
            raise ValueError(f"gold index {gold} is masked out")
        flat = flat + mask
    shifted = flat - flat.max()
    e = np.exp(shifted)
    p = e / e.sum()
    loss = -(shifted[gold] - np.log(e.sum()))
    out = Tensor(loss, logits.requires_grad, (logits,), "cross_entropy")

    def _bw(g):
        d = p.copy()
        d[gold] -= 1.0
        logits._accumulate((float(g) * d).reshape(logits.shape))

    out._backward = _bw if out.requires_grad else None
    return out
