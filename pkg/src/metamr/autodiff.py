"""Minimal reverse-mode automatic differentiation.

Float64 everywhere. A ``Tape`` records every primitive application; calling
``backward`` walks the record once in reverse and accumulates vector-Jacobian
products. Primitives are methods on the tape:

    add, multiply, affine, matmul, tanh, sigmoid, softmax_rows,
    embedding_lookup, stack_steps, slice_cols, concat_rows,
    attn_scores, attn_context, cross_entropy

Every primitive checks its output for NaN/Inf and raises NonFinite on the
spot, so a diverging run dies loudly at the first bad op instead of
producing a poisoned checkpoint. Heavy numeric work is delegated to the
selected kernel backend (see metamr.kernels); results are deterministic for
a fixed backend.
"""
from __future__ import annotations

import numpy as np

from . import kernels as K


class ShapeMismatch(Exception):
    pass


class NonFinite(Exception):
    """A primitive produced NaN or Inf."""


class NotScalarLoss(Exception):
    """backward() needs a scalar (shape ()) loss tensor."""


class Tensor:
    """A float64 array with identity semantics on the tape.

    Treat instances as immutable once created; the engine never writes to
    ``data`` after construction.
    """

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return "Tensor(shape=%r)" % (self.shape,)


def _finite(arr, op: str):
    if not np.isfinite(arr).all():
        raise NonFinite("non-finite values out of %s" % op)


class Tape:
    """Records primitive applications for one backward pass."""

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], object]] = []

    def _emit(self, data, inputs, vjp, op):
        out = Tensor(data)
        _finite(out.data, op)
        self._nodes.append((out, inputs, vjp))
        return out

    # -- arithmetic ----------------------------------------------------

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        """Elementwise add; also (N, D) + (D,) row-broadcast for biases."""
        if a.shape == b.shape:
            def vjp(g):
                return g, g
            return self._emit(K.ewadd(a.data, b.data), (a, b), vjp, "add")
        if len(a.shape) == 2 and b.shape == (a.shape[1],):
            def vjp(g):
                return g, K.colsum(g)
            return self._emit(K.add_rowbias(a.data, b.data), (a, b), vjp,
                              "add")
        raise ShapeMismatch("add %r + %r" % (a.shape, b.shape))

    def multiply(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeMismatch("multiply %r * %r" % (a.shape, b.shape))

        def vjp(g):
            return K.ewmul(g, b.data), K.ewmul(g, a.data)

        return self._emit(K.ewmul(a.data, b.data), (a, b), vjp, "multiply")

    def affine(self, a: Tensor, mul: float, add: float) -> Tensor:
        """mul * a + add with python-float coefficients."""
        def vjp(g):
            return (K.affine(g, mul, 0.0),)

        return self._emit(K.affine(a.data, float(mul), float(add)), (a,),
                          vjp, "affine")

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if len(a.shape) != 2 or len(b.shape) != 2 or a.shape[1] != b.shape[0]:
            raise ShapeMismatch("matmul %r @ %r" % (a.shape, b.shape))

        def vjp(g):
            return K.matmul_nt(g, b.data), K.matmul_tn(a.data, g)

        return self._emit(K.matmul(a.data, b.data), (a, b), vjp, "matmul")

    # -- nonlinearities ------------------------------------------------

    def tanh(self, a: Tensor) -> Tensor:
        out_data = K.tanh(a.data)

        def vjp(g):
            return (K.tanh_vjp(out_data, g),)

        return self._emit(out_data, (a,), vjp, "tanh")

    def sigmoid(self, a: Tensor) -> Tensor:
        out_data = K.sigmoid(a.data)

        def vjp(g):
            return (K.sigmoid_vjp(out_data, g),)

        return self._emit(out_data, (a,), vjp, "sigmoid")

    def softmax_rows(self, a: Tensor) -> Tensor:
        if len(a.shape) != 2:
            raise ShapeMismatch("softmax_rows needs 2-D, got %r" % (a.shape,))
        out_data = K.softmax_rows(a.data)

        def vjp(g):
            return (K.softmax_rows_vjp(out_data, g),)

        return self._emit(out_data, (a,), vjp, "softmax_rows")

    # -- structure -----------------------------------------------------

    def embedding_lookup(self, table: Tensor, ids) -> Tensor:
        ids = np.ascontiguousarray(ids, dtype=np.int64)
        if ids.ndim != 1:
            raise ShapeMismatch("ids must be 1-D, got %r" % (ids.shape,))
        rows, dim = table.shape
        if ids.size and (ids.min() < 0 or ids.max() >= rows):
            raise ShapeMismatch("id out of range for table with %d rows"
                                % rows)

        def vjp(g):
            return (K.embedding_vjp(rows, dim, ids, g),)

        return self._emit(K.embedding_fwd(table.data, ids), (table,), vjp,
                          "embedding_lookup")

    def stack_steps(self, steps: list[Tensor]) -> Tensor:
        """Stack T tensors of shape (B, H) into (B, T, H)."""
        if not steps:
            raise ShapeMismatch("stack_steps of nothing")

        def vjp(g):
            return tuple(np.ascontiguousarray(g[:, t, :])
                         for t in range(len(steps)))

        data = np.stack([s.data for s in steps], axis=1)
        return self._emit(data, tuple(steps), vjp, "stack_steps")

    def slice_cols(self, a: Tensor, start: int, stop: int) -> Tensor:
        if len(a.shape) != 2 or not (0 <= start < stop <= a.shape[1]):
            raise ShapeMismatch("slice_cols [%d:%d] of %r"
                                % (start, stop, a.shape))

        def vjp(g):
            out = np.zeros(a.shape)
            out[:, start:stop] = g
            return (out,)

        return self._emit(np.ascontiguousarray(a.data[:, start:stop]), (a,),
                          vjp, "slice_cols")

    def concat_rows(self, a: Tensor, b: Tensor) -> Tensor:
        """Concatenate two 2-D tensors along columns: (B,X)+(B,Y)->(B,X+Y)."""
        if len(a.shape) != 2 or len(b.shape) != 2 or a.shape[0] != b.shape[0]:
            raise ShapeMismatch("concat_rows %r | %r" % (a.shape, b.shape))
        cut = a.shape[1]

        def vjp(g):
            return (np.ascontiguousarray(g[:, :cut]),
                    np.ascontiguousarray(g[:, cut:]))

        data = np.concatenate([a.data, b.data], axis=1)
        return self._emit(data, (a, b), vjp, "concat_rows")

    # -- attention -----------------------------------------------------

    def attn_scores(self, enc: Tensor, q: Tensor) -> Tensor:
        """Dot products of each encoder state with the query: -> (B, T)."""
        if len(enc.shape) != 3 or enc.shape[::2] != q.shape:
            raise ShapeMismatch("attn_scores %r . %r" % (enc.shape, q.shape))

        def vjp(g):
            return K.attn_scores_vjp(enc.data, q.data, g)

        return self._emit(K.attn_scores(enc.data, q.data), (enc, q), vjp,
                          "attn_scores")

    def attn_context(self, enc: Tensor, w: Tensor) -> Tensor:
        """Weighted sum of encoder states: (B,T,H) x (B,T) -> (B, H)."""
        if len(enc.shape) != 3 or enc.shape[:2] != w.shape:
            raise ShapeMismatch("attn_context %r x %r" % (enc.shape, w.shape))

        def vjp(g):
            return K.attn_context_vjp(enc.data, w.data, g)

        return self._emit(K.attn_context(enc.data, w.data), (enc, w), vjp,
                          "attn_context")

    # -- loss ----------------------------------------------------------

    def cross_entropy(self, logits: Tensor, ids, ignore_id: int = -1) -> Tensor:
        """Summed token cross-entropy, skipping rows where ids == ignore_id.

        Returns a scalar tensor. Divide by the kept-row count yourself if a
        mean is wanted (the count is static, so this stays differentiable).
        """
        ids = np.ascontiguousarray(ids, dtype=np.int64)
        if len(logits.shape) != 2 or ids.shape != (logits.shape[0],):
            raise ShapeMismatch("cross_entropy %r vs ids %r"
                                % (logits.shape, ids.shape))
        kept = ids[ids != ignore_id]
        if kept.size and (kept.min() < 0 or kept.max() >= logits.shape[1]):
            raise ShapeMismatch("target id out of range for %d classes"
                                % logits.shape[1])
        loss, probs = K.cross_entropy_fwd(logits.data, ids, ignore_id)

        def vjp(g):
            return (K.cross_entropy_vjp(probs, ids, ignore_id, float(g)),)

        return self._emit(np.float64(loss), (logits,), vjp, "cross_entropy")


def backward(tape: Tape, loss: Tensor, wrt) -> list[np.ndarray]:
    """Gradients of ``loss`` with respect to each tensor in ``wrt``.

    Visits the tape once in reverse creation order. Tensors in ``wrt`` that
    the loss never touched get zero gradients.
    """
    if loss.shape != ():
        raise NotScalarLoss("loss has shape %r" % (loss.shape,))
    grads: dict[int, np.ndarray] = {id(loss): np.float64(1.0)}
    for out, inputs, vjp in reversed(tape._nodes):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        contribs = vjp(g)
        for inp, c in zip(inputs, contribs):
            if c is None:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + c
            else:
                grads[key] = c
    return [np.asarray(grads.get(id(w), np.zeros(w.shape))) for w in wrt]


def grad_check(f, inputs, eps: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``f(tape, *tensors) -> scalar Tensor`` is evaluated once for the tape
    gradient and twice per input component for the finite difference. The
    relative error denominator is floored at 1e-4 so near-zero gradients
    compare on absolute terms.
    """
    tape = Tape()
    tensors = [Tensor(x) for x in inputs]
    loss = f(tape, *tensors)
    grads = backward(tape, loss, tensors)

    worst = 0.0
    for pos, x in enumerate(inputs):
        x = np.asarray(x, dtype=np.float64)
        for idx in np.ndindex(*x.shape):
            def value(delta):
                bumped = [np.array(v, dtype=np.float64) for v in inputs]
                bumped[pos][idx] += delta
                return f(Tape(), *[Tensor(v) for v in bumped]).item()

            fd = (value(eps) - value(-eps)) / (2 * eps)
            ad = float(np.asarray(grads[pos])[idx])
            err = abs(ad - fd) / max(abs(ad), abs(fd), 1e-4)
            worst = max(worst, err)
    return worst
