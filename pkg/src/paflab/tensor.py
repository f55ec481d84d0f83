"""Dense float64 tensors with reverse-mode automatic differentiation.

Gradients flow to any leaf marked ``requires_grad`` -- network weights,
shared activation parameters, and attack inputs alike.  A leaf used at
several sites of the same graph accumulates the sum of all site-local
gradients, which is the contract shared activation parameters rely on.

Broadcasting is deliberately restricted to scalar-vs-tensor; batch-level
broadcasts are explicit ops (``broadcast_rows``).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when operand shapes violate an op's contract."""


def stable_sigmoid(z: np.ndarray) -> np.ndarray:
    """1/(1+exp(-z)) computed via a sign branch so |z| > 40 cannot overflow."""
    z = np.asarray(z, dtype=np.float64)
    ez = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))


class Tensor:
    """N-d float64 array node in a dynamically built backward graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._backward = None
        self.op = op

    # -- introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    # -- graph plumbing ------------------------------------------------

    def _track(self) -> bool:
        return self.requires_grad

    def backward(self):
        """Accumulate d(self)/d(leaf) into every reachable requires_grad leaf.

        Only valid on single-element tensors.  Repeated calls accumulate;
        use zero_grad to reset leaves.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar, got shape {self.data.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        accumulate_grad(self, np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        return _binary(self, other, "add", lambda a, b: a + b,
                       lambda a, b, g: g, lambda a, b, g: g)

    __radd__ = __add__

    def __sub__(self, other):
        return _binary(self, other, "sub", lambda a, b: a - b,
                       lambda a, b, g: g, lambda a, b, g: -g)

    def __rsub__(self, other):
        return _binary(_const(other), self, "sub", lambda a, b: a - b,
                       lambda a, b, g: g, lambda a, b, g: -g)

    def __mul__(self, other):
        return _binary(self, other, "mul", lambda a, b: a * b,
                       lambda a, b, g: g * b, lambda a, b, g: g * a)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _binary(self, other, "div", lambda a, b: a / b,
                       lambda a, b, g: g / b, lambda a, b, g: -g * a / (b * b))

    def __rtruediv__(self, other):
        return _binary(_const(other), self, "div", lambda a, b: a / b,
                       lambda a, b, g: g / b, lambda a, b, g: -g * a / (b * b))

    def __neg__(self):
        return _unary(self, "neg", lambda a: -a, lambda a, y, g: -g)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- elementwise nonlinearities -------------------------------------

    def exp(self):
        return _unary(self, "exp", np.exp, lambda a, y, g: g * y)

    def log1p(self):
        return _unary(self, "log1p", np.log1p, lambda a, y, g: g / (1.0 + a))

    def sigmoid(self):
        return _unary(self, "sigmoid", stable_sigmoid, lambda a, y, g: g * y * (1.0 - y))

    def abs(self):
        # subgradient at 0 is 0 (np.sign convention)
        return _unary(self, "abs", np.abs, lambda a, y, g: g * np.sign(a))

    def maximum(self, scalar: float):
        """Elementwise max with a constant; gradient is 0 at a tie."""
        c = float(scalar)
        return _unary(self, "maximum", lambda a: np.maximum(a, c),
                      lambda a, y, g: g * (a > c).astype(np.float64))

    # -- reductions ------------------------------------------------------

    def sum(self, axis: int | None = None):
        _check_axis(self, axis)
        out = Tensor(np.sum(self.data, axis=axis), _parents=(self,), op="sum")
        out.requires_grad = self._track()

        def _bw(g):
            if axis is None:
                accumulate_grad(self, np.full_like(self.data, float(g)))
            else:
                accumulate_grad(self, np.broadcast_to(np.expand_dims(g, axis), self.data.shape).copy())

        out._backward = _bw
        return out

    def mean(self, axis: int | None = None):
        _check_axis(self, axis)
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)

    def max(self, axis: int | None = None):
        """Max reduction; backward routes to the lowest-flat-index argmax."""
        _check_axis(self, axis)
        if axis is None:
            idx = int(np.argmax(self.data))
            out = Tensor(self.data.reshape(-1)[idx], _parents=(self,), op="max")
            out.requires_grad = self._track()

            def _bw(g):
                buf = np.zeros_like(self.data)
                buf.reshape(-1)[idx] = float(g)
                accumulate_grad(self, buf)

            out._backward = _bw
            return out
        idx = np.argmax(self.data, axis=axis)
        out = Tensor(np.max(self.data, axis=axis), _parents=(self,), op="max")
        out.requires_grad = self._track()

        def _bw_axis(g):
            buf = np.zeros_like(self.data)
            np.put_along_axis(buf, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis)
            accumulate_grad(self, buf)

        out._backward = _bw_axis
        return out

    # -- shape ops -------------------------------------------------------

    def reshape(self, shape):
        old = self.data.shape
        out = Tensor(self.data.reshape(shape), _parents=(self,), op="reshape")
        out.requires_grad = self._track()
        out._backward = lambda g: accumulate_grad(self, g.reshape(old))
        return out

    def broadcast_rows(self, n: int):
        """Tile a 1-d tensor into n identical rows; backward sums the rows."""
        if self.data.ndim != 1:
            raise ShapeError(f"broadcast_rows needs a 1-d tensor, got shape {self.data.shape}")
        out = Tensor(np.broadcast_to(self.data, (n, self.data.shape[0])).copy(),
                     _parents=(self,), op="broadcast_rows")
        out.requires_grad = self._track()
        out._backward = lambda g: accumulate_grad(self, g.sum(axis=0))
        return out


# -- helpers -------------------------------------------------------------


def accumulate_grad(t: Tensor, g: np.ndarray) -> None:
    """Add a gradient contribution to t.grad, reducing scalar broadcasts.

    Non-tracking tensors are skipped, which both prunes dead subgraphs and
    keeps frozen parameters clean while attacking inputs.
    """
    if not t.requires_grad:
        return
    g = np.asarray(g, dtype=np.float64)
    if g.shape != t.data.shape:
        if t.data.size == 1:
            g = np.sum(g).reshape(t.data.shape)
        else:
            raise ShapeError(f"gradient shape {g.shape} does not match tensor shape {t.data.shape}")
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _const(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _check_axis(t: Tensor, axis) -> None:
    if axis is not None and not (-t.data.ndim <= axis < t.data.ndim):
        raise ShapeError(f"axis {axis} invalid for shape {t.data.shape}")


def _binary(a, b, op, fwd, bwd_a, bwd_b) -> Tensor:
    a = _const(a)
    b = _const(b)
    if a.data.shape != b.data.shape and a.data.size != 1 and b.data.size != 1:
        raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape} are not "
                         f"equal and neither operand is a scalar")
    out = Tensor(fwd(a.data, b.data), _parents=(a, b), op=op)
    out.requires_grad = a._track() or b._track()

    def _bw(g):
        accumulate_grad(a, bwd_a(a.data, b.data, g))
        accumulate_grad(b, bwd_b(a.data, b.data, g))

    out._backward = _bw
    return out


def _unary(a: Tensor, op, fwd, bwd) -> Tensor:
    out = Tensor(fwd(a.data), _parents=(a,), op=op)
    out.requires_grad = a._track()
    out._backward = lambda g: accumulate_grad(a, bwd(a.data, out.data, g))
    return out


def where(mask: np.ndarray, a, b) -> Tensor:
    """Select a where mask holds, b elsewhere; mask itself is constant."""
    mask = np.asarray(mask, dtype=bool)
    a = _const(a)
    b = _const(b)
    for t in (a, b):
        if t.data.shape != mask.shape and t.data.size != 1:
            raise ShapeError(f"where: branch shape {t.data.shape} does not match mask {mask.shape}")
    out = Tensor(np.where(mask, a.data, b.data), _parents=(a, b), op="where")
    out.requires_grad = a._track() or b._track()

    def _bw(g):
        accumulate_grad(a, g * mask)
        accumulate_grad(b, g * (~mask))

    out._backward = _bw
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a = _const(a)
    b = _const(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}")
    out = Tensor(a.data @ b.data, _parents=(a, b), op="matmul")
    out.requires_grad = a._track() or b._track()

    def _bw(g):
        accumulate_grad(a, g @ b.data.T)
        accumulate_grad(b, a.data.T @ g)

    out._backward = _bw
    return out


def conv2d(x: Tensor, k: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of NCHW input with OCkk kernels."""
    x = _const(x)
    k = _const(k)
    if x.data.ndim != 4 or k.data.ndim != 4:
        raise ShapeError(f"conv2d: need 4-d input and kernel, got {x.data.shape} and {k.data.shape}")
    n, c, h, w = x.data.shape
    o, kc, kh, kw = k.data.shape
    if kc != c:
        raise ShapeError(f"conv2d: input has {c} channels but kernel expects {kc}")
    s, p = int(stride), int(padding)
    if kh > h + 2 * p or kw > w + 2 * p:
        raise ShapeError(f"conv2d: kernel {(kh, kw)} larger than padded input {(h + 2 * p, w + 2 * p)}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s, :, :]
    out_data = np.einsum("ncijuv,ocuv->noij", windows, k.data, optimize=True)
    parents = (x, k) if bias is None else (x, k, bias)
    out = Tensor(out_data, _parents=parents, op="conv2d")
    out.requires_grad = any(t._track() for t in parents)
    if bias is not None:
        if bias.data.shape != (o,):
            raise ShapeError(f"conv2d: bias shape {bias.data.shape} does not match {o} output channels")
        out.data += bias.data.reshape(1, o, 1, 1)
    oh, ow = out.data.shape[2], out.data.shape[3]

    def _bw(g):
        accumulate_grad(k, np.einsum("noij,ncijuv->ocuv", g, windows, optimize=True))
        dxp = np.zeros_like(xp)
        for u in range(kh):
            for v in range(kw):
                dxp[:, :, u:u + s * oh:s, v:v + s * ow:s] += np.einsum(
                    "noij,oc->ncij", g, k.data[:, :, u, v], optimize=True)
        accumulate_grad(x, dxp[:, :, p:p + h, p:p + w])
        if bias is not None:
            accumulate_grad(bias, g.sum(axis=(0, 2, 3)))

    out._backward = _bw
    return out


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of row-wise softmax against integer labels."""
    logits = _const(logits)
    if logits.data.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy: logits must be 2-d, got {logits.data.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    n, kk = logits.data.shape
    if labels.shape != (n,):
        raise ShapeError(f"softmax_cross_entropy: {n} rows but labels shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= kk:
        raise ValueError(f"label out of range [0, {kk}): {labels.min()}..{labels.max()}")
    logp = _log_softmax(logits.data)
    loss = -logp[np.arange(n), labels].mean()
    out = Tensor(loss, _parents=(logits,), op="softmax_cross_entropy")
    out.requires_grad = logits._track()

    def _bw(g):
        grad = np.exp(logp)
        grad[np.arange(n), labels] -= 1.0
        accumulate_grad(logits, grad * (float(g) / n))

    out._backward = _bw
    return out


def kl_divergence(p_logits: Tensor, q_logits: Tensor) -> Tensor:
    """Mean over rows of KL(softmax(p) || softmax(q)); differentiable in both."""
    p_logits = _const(p_logits)
    q_logits = _const(q_logits)
    if p_logits.data.shape != q_logits.data.shape or p_logits.data.ndim != 2:
        raise ShapeError(f"kl_divergence: need matching 2-d shapes, got "
                         f"{p_logits.data.shape} and {q_logits.data.shape}")
    n = p_logits.data.shape[0]
    logp = _log_softmax(p_logits.data)
    logq = _log_softmax(q_logits.data)
    pp = np.exp(logp)
    kl_rows = (pp * (logp - logq)).sum(axis=1)
    out = Tensor(kl_rows.mean(), _parents=(p_logits, q_logits), op="kl_divergence")
    out.requires_grad = p_logits._track() or q_logits._track()

    def _bw(g):
        scale = float(g) / n
        accumulate_grad(p_logits, scale * pp * ((logp - logq) - kl_rows[:, None]))
        accumulate_grad(q_logits, scale * (np.exp(logq) - pp))

    out._backward = _bw
    return out
