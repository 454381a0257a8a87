"""Dense float64 tensors on a recorded tape with reverse-mode differentiation.

A :class:`Tape` owns an ordered list of :class:`Node` objects. Every op appends
one node whose inputs were created earlier, so creation order is already a
topological order and :meth:`Tape.backward` just walks the list in reverse.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

EPS_NORM = 1e-12
MAX_RANK = 3


class ShapeError(ValueError):
    pass


class NonFiniteError(ValueError):
    pass


class DomainError(ValueError):
    pass


@dataclass(eq=False)
class Node:
    id: int
    op: str
    inputs: tuple[int, ...]
    value: np.ndarray
    grad: np.ndarray
    requires_grad: bool
    backward_fn: Callable[[np.ndarray], None] | None = field(default=None, repr=False)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError(f"item() on node of shape {self.shape}")
        return float(self.value.reshape(-1)[0])


def _check_shape(shape: Sequence[int]) -> tuple[int, ...]:
    dims = tuple(int(d) for d in shape)
    if len(dims) > MAX_RANK:
        raise ShapeError(f"rank {len(dims)} exceeds {MAX_RANK}")
    if any(d < 1 for d in dims):
        raise ShapeError(f"non-positive extent in {dims}")
    return dims


class Tape:
    """Single-use computation graph; build per batch, call backward once."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def _push(self, op, inputs, value, backward_fn=None, requires_grad=None) -> Node:
        if requires_grad is None:
            requires_grad = any(n.requires_grad for n in inputs)
        value = np.asarray(value, dtype=np.float64)
        node = Node(
            id=len(self.nodes),
            op=op,
            inputs=tuple(n.id for n in inputs),
            value=value,
            grad=np.zeros_like(value),
            requires_grad=requires_grad,
            backward_fn=backward_fn if requires_grad else None,
        )
        self.nodes.append(node)
        return node

    # -- leaves ---------------------------------------------------------

    def tensor(self, data, shape: Sequence[int] | None = None, requires_grad: bool = False) -> Node:
        arr = np.array(data, dtype=np.float64)
        if shape is not None:
            dims = _check_shape(shape)
            if arr.size != int(np.prod(dims, dtype=np.int64)):
                raise ShapeError(f"{arr.size} values do not fill shape {dims}")
            arr = arr.reshape(dims)
        else:
            _check_shape(arr.shape)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor data contains non-finite values")
        return self._push("leaf", (), arr, requires_grad=requires_grad)

    def constant(self, data) -> Node:
        return self.tensor(data, requires_grad=False)

    # -- linear algebra -------------------------------------------------

    def matmul(self, a: Node, b: Node) -> Node:
        if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul {a.shape} @ {b.shape}")
        av, bv = a.value, b.value

        def back(g):
            if a.requires_grad:
                a.grad += g @ bv.T
            if b.requires_grad:
                b.grad += av.T @ g

        return self._push("matmul", (a, b), av @ bv, back)

    def transpose(self, a: Node) -> Node:
        if a.value.ndim != 2:
            raise ShapeError(f"transpose expects a matrix, got {a.shape}")

        def back(g):
            a.grad += g.T

        return self._push("transpose", (a,), a.value.T.copy(), back)

    # -- elementwise ----------------------------------------------------

    def _same_shape(self, op, a: Node, b: Node) -> None:
        if a.shape != b.shape:
            raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")

    def add(self, a: Node, b: Node) -> Node:
        self._same_shape("add", a, b)

        def back(g):
            if a.requires_grad:
                a.grad += g
            if b.requires_grad:
                b.grad += g

        return self._push("add", (a, b), a.value + b.value, back)

    def sub(self, a: Node, b: Node) -> Node:
        self._same_shape("sub", a, b)

        def back(g):
            if a.requires_grad:
                a.grad += g
            if b.requires_grad:
                b.grad -= g

        return self._push("sub", (a, b), a.value - b.value, back)

    def mul(self, a: Node, b: Node) -> Node:
        self._same_shape("mul", a, b)
        av, bv = a.value, b.value

        def back(g):
            if a.requires_grad:
                a.grad += g * bv
            if b.requires_grad:
                b.grad += g * av

        return self._push("mul", (a, b), av * bv, back)

    def add_bias(self, a: Node, bias: Node) -> Node:
        """Add a vector along the last axis of ``a``."""
        if bias.value.ndim != 1 or a.shape[-1] != bias.shape[0]:
            raise ShapeError(f"add_bias {a.shape} + {bias.shape}")
        lead = tuple(range(a.value.ndim - 1))

        def back(g):
            if a.requires_grad:
                a.grad += g
            if bias.requires_grad:
                bias.grad += g.sum(axis=lead)

        return self._push("add_bias", (a, bias), a.value + bias.value, back)

    def scale(self, a: Node, c: float | Node) -> Node:
        """Multiply by a python float or by a single-element node."""
        if isinstance(c, Node):
            if c.value.size != 1:
                raise ShapeError(f"scale factor must be scalar, got {c.shape}")
            cv = c.item()
            av = a.value

            def back(g):
                if a.requires_grad:
                    a.grad += g * cv
                if c.requires_grad:
                    c.grad += np.sum(g * av).reshape(c.shape)

            return self._push("scale", (a, c), av * cv, back)

        cf = float(c)
        if not np.isfinite(cf):
            raise NonFiniteError("scale factor is not finite")

        def back_const(g):
            a.grad += g * cf

        return self._push("scale", (a,), a.value * cf, back_const)

    def exp(self, a: Node) -> Node:
        out = np.exp(a.value)

        def back(g):
            a.grad += g * out

        return self._push("exp", (a,), out, back)

    def log(self, a: Node) -> Node:
        if np.any(a.value <= 0):
            raise DomainError("log of non-positive value")
        av = a.value

        def back(g):
            a.grad += g / av

        return self._push("log", (a,), np.log(av), back)

    def tanh(self, a: Node) -> Node:
        out = np.tanh(a.value)

        def back(g):
            a.grad += g * (1.0 - out * out)

        return self._push("tanh", (a,), out, back)

    def elementwise(self, kind: str, *operands) -> Node:
        ops = {
            "add": self.add, "sub": self.sub, "mul": self.mul, "scale": self.scale,
            "exp": self.exp, "log": self.log, "tanh": self.tanh,
        }
        if kind not in ops:
            raise ValueError(f"unknown elementwise kind {kind!r}")
        return ops[kind](*operands)

    # -- reductions -----------------------------------------------------

    def sum(self, a: Node) -> Node:
        def back(g):
            a.grad += g.reshape(())

        return self._push("sum", (a,), a.value.sum(), back)

    def mean(self, a: Node) -> Node:
        n = a.value.size

        def back(g):
            a.grad += g.reshape(()) / n

        return self._push("mean", (a,), a.value.mean(), back)

    def reduce(self, kind: str, a: Node) -> Node:
        if kind == "sum":
            return self.sum(a)
        if kind == "mean":
            return self.mean(a)
        raise ValueError(f"unknown reduction {kind!r}")

    def sum_axis(self, a: Node, axis: int) -> Node:
        axis = axis % a.value.ndim
        if a.value.ndim < 2:
            raise ShapeError("sum_axis needs rank >= 2")

        def back(g):
            a.grad += np.expand_dims(g, axis)

        return self._push("sum_axis", (a,), a.value.sum(axis=axis), back)

    def mean_axis(self, a: Node, axis: int) -> Node:
        axis = axis % a.value.ndim
        if a.value.ndim < 2:
            raise ShapeError("mean_axis needs rank >= 2")
        n = a.shape[axis]

        def back(g):
            a.grad += np.expand_dims(g, axis) / n

        return self._push("mean_axis", (a,), a.value.mean(axis=axis), back)

    # -- normalisation, similarity, softmax -------------------------------

    def row_l2_normalize(self, m: Node) -> Node:
        if m.value.ndim != 2:
            raise ShapeError(f"row_l2_normalize expects a matrix, got {m.shape}")
        norms = np.sqrt(np.sum(m.value * m.value, axis=1, keepdims=True))
        if np.any(norms <= EPS_NORM):
            raise DomainError("row with near-zero L2 norm")
        out = m.value / norms

        def back(g):
            # d(x/|x|) = (g - y (y.g)) / |x|
            m.grad += (g - out * np.sum(out * g, axis=1, keepdims=True)) / norms

        return self._push("row_l2_normalize", (m,), out, back)

    def cosine_sim_matrix(self, a: Node, b: Node) -> Node:
        if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[1]:
            raise ShapeError(f"cosine_sim_matrix {a.shape} vs {b.shape}")
        an = self.row_l2_normalize(a)
        bn = an if b is a else self.row_l2_normalize(b)
        return self.matmul(an, self.transpose(bn))

    def row_cosine(self, a: Node, b: Node) -> Node:
        """Cosine between row i of ``a`` and row i of ``b``; shape (n,)."""
        self._same_shape("row_cosine", a, b)
        return self.sum_axis(self.mul(self.row_l2_normalize(a), self.row_l2_normalize(b)), 1)

    def softmax(self, a: Node) -> Node:
        """Softmax over the last axis."""
        z = a.value - a.value.max(axis=-1, keepdims=True)
        e = np.exp(z)
        out = e / e.sum(axis=-1, keepdims=True)

        def back(g):
            a.grad += out * (g - np.sum(g * out, axis=-1, keepdims=True))

        return self._push("softmax", (a,), out, back)

    def row_log_softmax_ce(self, logits: Node, targets: Sequence[int]) -> Node:
        """Mean over rows of -log softmax(row)[target], max-subtracted."""
        lv = logits.value
        if lv.ndim != 2 or lv.shape[0] != lv.shape[1]:
            raise ShapeError(f"row_log_softmax_ce expects square logits, got {logits.shape}")
        n = lv.shape[0]
        t = np.asarray(targets, dtype=np.int64)
        if t.shape != (n,):
            raise ShapeError(f"expected {n} targets, got shape {t.shape}")
        if np.any(t < 0) or np.any(t >= n):
            raise IndexError("target index out of range")
        z = lv - lv.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1))
        rows = np.arange(n)
        loss = np.mean(lse - z[rows, t])
        probs = np.exp(z - lse[:, None])

        def back(g):
            d = probs.copy()
            d[rows, t] -= 1.0
            logits.grad += g.reshape(()) * d / n

        return self._push("row_log_softmax_ce", (logits,), loss, back)

    # -- attention pooling helpers ---------------------------------------

    def frames_dot(self, x: Node, q: Node) -> Node:
        """(N,T,E) frames dotted with an (E,) query -> (N,T) scores."""
        if x.value.ndim != 3 or q.value.ndim != 1 or x.shape[2] != q.shape[0]:
            raise ShapeError(f"frames_dot {x.shape} . {q.shape}")
        xv, qv = x.value, q.value

        def back(g):
            if x.requires_grad:
                x.grad += g[:, :, None] * qv
            if q.requires_grad:
                q.grad += np.einsum("nt,nte->e", g, xv)

        return self._push("frames_dot", (x, q), xv @ qv, back)

    def weighted_frames(self, w: Node, x: Node) -> Node:
        """(N,T) weights times (N,T,E) frames summed over T -> (N,E)."""
        if x.value.ndim != 3 or w.shape != x.shape[:2]:
            raise ShapeError(f"weighted_frames {w.shape} x {x.shape}")
        wv, xv = w.value, x.value

        def back(g):
            if w.requires_grad:
                w.grad += np.einsum("ne,nte->nt", g, xv)
            if x.requires_grad:
                x.grad += wv[:, :, None] * g[:, None, :]

        return self._push("weighted_frames", (w, x), np.einsum("nt,nte->ne", wv, xv), back)

    # -- backward -------------------------------------------------------

    def backward(self, root: Node) -> dict[int, np.ndarray]:
        """Seed ``root`` with 1 and return gradients of requires_grad leaves."""
        if root.value.size != 1:
            raise ShapeError(f"backward needs a scalar root, got {root.shape}")
        if self.nodes[root.id] is not root:
            raise ValueError("root does not belong to this tape")
        for node in self.nodes:
            node.grad[...] = 0.0
        root.grad[...] = 1.0
        for node in reversed(self.nodes[: root.id + 1]):
            if node.backward_fn is not None:
                node.backward_fn(node.grad)
        return {
            n.id: n.grad.copy()
            for n in self.nodes[: root.id + 1]
            if n.op == "leaf" and n.requires_grad
        }


def finite_diff_check(
    build: Callable[[Tape, Mapping[str, Node]], Node],
    params: Mapping[str, np.ndarray],
    h: float = 1e-6,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``build(tape, leaves)`` must construct a scalar loss from the leaf nodes it
    is handed. The denominator is ``max(|analytic|, |numeric|, 1e-12)``.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def evaluate(values, requires_grad):
        tape = Tape()
        leaves = {k: tape.tensor(v, requires_grad=requires_grad) for k, v in values.items()}
        loss = build(tape, leaves)
        return tape, leaves, loss

    tape, leaves, loss = evaluate(base, True)
    grads = tape.backward(loss)

    worst = 0.0
    for name, arr in base.items():
        analytic = grads[leaves[name].id]
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = evaluate(base, False)[2].item()
            flat[i] = orig - h
            down = evaluate(base, False)[2].item()
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NonFiniteError(f"non-finite loss probing {name}[{i}]")
            numeric = (up - down) / (2.0 * h)
            a = analytic.reshape(-1)[i]
            denom = max(abs(a), abs(numeric), 1e-12)
            worst = max(worst, abs(a - numeric) / denom)
    return worst
