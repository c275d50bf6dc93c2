"""Dense float64 matrices and a reverse-mode differentiation tape.

Everything is 64-bit, row-major, and strictly finite: an op whose result
contains NaN/Inf raises NumericError instead of propagating it. The batch
dimension is always the row dimension. ReLU's subgradient at exactly 0 is
defined as 0.

Matrices are immutable values. A Tape records a forward graph of primitive
ops in topological order and is single-owner: build, call backward, discard.
Parallelism belongs across tapes, never inside one.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .exceptions import ContractError, DimensionError, NumericError


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


class Matrix:
    """Immutable 2-D float64 value; construction rejects non-finite entries."""

    __slots__ = ("_a",)

    def __init__(self, data):
        a = np.array(data, dtype=np.float64, order="C")
        if a.ndim == 1:
            a = a.reshape(1, -1)
        if a.ndim != 2:
            raise DimensionError(f"Matrix requires 1-D or 2-D data, got ndim={a.ndim}")
        if not np.isfinite(a).all():
            raise NumericError("Matrix entries must be finite")
        a.setflags(write=False)
        self._a = a

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "Matrix":
        return cls(np.zeros((rows, cols)))

    @property
    def rows(self) -> int:
        return self._a.shape[0]

    @property
    def cols(self) -> int:
        return self._a.shape[1]

    @property
    def shape(self):
        return self._a.shape

    @property
    def data(self) -> np.ndarray:
        """Read-only ndarray view of the entries."""
        return self._a

    def tolist(self):
        return self._a.tolist()

    def __repr__(self):
        return f"Matrix({self.rows}x{self.cols})"


def _data(m) -> np.ndarray:
    if isinstance(m, Matrix):
        return m.data
    return _freeze(np.atleast_2d(np.asarray(m, dtype=np.float64)))


def _check_finite(a: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(a).all():
        raise NumericError(f"{op} produced a non-finite value (overflow or domain error)")
    return a


# ---------------------------------------------------------------------------
# Eager ops (no tape): used at inference time and as plain building blocks.
# ---------------------------------------------------------------------------

def affine(x: Matrix, w: Matrix, b: Matrix) -> Matrix:
    """x @ w + b, with b a single row broadcast over the rows of x."""
    if x.cols != w.rows:
        raise DimensionError(
            f"affine: x is {x.rows}x{x.cols} but w is {w.rows}x{w.cols}"
            " (x.cols must equal w.rows)"
        )
    if b.rows != 1 or b.cols != w.cols:
        raise DimensionError(
            f"affine: b is {b.rows}x{b.cols} but w is {w.rows}x{w.cols}"
            " (b must be 1 x w.cols)"
        )
    k = kernels.get()
    out = _check_finite(k.affine(x.data, w.data, b.data), "affine")
    return Matrix(out)


def relu(x: Matrix) -> Matrix:
    """Elementwise max(0, x)."""
    return Matrix(kernels.get().relu(x.data))


def matmul(a: Matrix, b: Matrix, trans_a: bool = False, trans_b: bool = False) -> Matrix:
    ka = a.rows if trans_a else a.cols
    kb = b.cols if trans_b else b.rows
    if ka != kb:
        raise DimensionError(
            f"matmul: a is {a.rows}x{a.cols} (trans={trans_a}), "
            f"b is {b.rows}x{b.cols} (trans={trans_b}); inner dims {ka} vs {kb}"
        )
    out = _check_finite(kernels.get().matmul(a.data, b.data, trans_a, trans_b), "matmul")
    return Matrix(out)


def dot(a, b) -> float:
    """Inner product of two equal-length vectors."""
    av = np.asarray(a, dtype=np.float64).ravel()
    bv = np.asarray(b, dtype=np.float64).ravel()
    if av.shape != bv.shape:
        raise DimensionError(f"dot: lengths differ, {av.shape[0]} vs {bv.shape[0]}")
    return float(_check_finite(np.array([av @ bv]), "dot")[0])


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

class Tape:
    """Forward graph recorder.

    Node ids are plain ints issued in topological order; every op validates
    shapes on the way in and finiteness on the way out. ``param`` marks a
    leaf as trainable so ``backward`` returns a gradient for it.
    """

    def __init__(self, backend: str | None = None):
        self._K = kernels.get(backend)
        self._ops: list[str] = []
        self._inputs: list[tuple[int, ...]] = []
        self._values: list[np.ndarray] = []
        self._aux: list = []
        self._param_ids: list[int] = []
        self.adjoints: list = []

    def __len__(self):
        return len(self._ops)

    @property
    def kernels(self):
        """The backend module this tape was pinned to at construction."""
        return self._K

    def value(self, nid: int) -> np.ndarray:
        return self._values[nid]

    def _push(self, op, inputs, value, aux=None) -> int:
        value = _check_finite(np.ascontiguousarray(value, dtype=np.float64), op)
        value.setflags(write=False)
        self._ops.append(op)
        self._inputs.append(inputs)
        self._values.append(value)
        self._aux.append(aux)
        return len(self._ops) - 1

    def _shape(self, nid):
        return self._values[nid].shape

    def _same_shape(self, op, a, b):
        if self._shape(a) != self._shape(b):
            raise DimensionError(
                f"{op}: operand shapes differ, {self._shape(a)} vs {self._shape(b)}"
            )

    # -- leaves --------------------------------------------------------

    def input(self, m) -> int:
        return self._push("input", (), _data(m))

    def param(self, m) -> int:
        nid = self._push("param", (), _data(m))
        self._param_ids.append(nid)
        return nid

    @property
    def param_ids(self) -> tuple[int, ...]:
        return tuple(self._param_ids)

    # -- primitive ops ---------------------------------------------------

    def affine(self, x: int, w: int, b: int) -> int:
        xs, ws, bs = self._shape(x), self._shape(w), self._shape(b)
        if xs[1] != ws[0]:
            raise DimensionError(
                f"affine: x is {xs[0]}x{xs[1]} but w is {ws[0]}x{ws[1]}"
                " (x.cols must equal w.rows)"
            )
        if bs != (1, ws[1]):
            raise DimensionError(
                f"affine: b is {bs[0]}x{bs[1]} but w is {ws[0]}x{ws[1]}"
                " (b must be 1 x w.cols)"
            )
        v = self._K.affine(self._values[x], self._values[w], self._values[b])
        return self._push("affine", (x, w, b), v)

    def matmul(self, a: int, b: int, trans_b: bool = False) -> int:
        ashp, bshp = self._shape(a), self._shape(b)
        kb = bshp[1] if trans_b else bshp[0]
        if ashp[1] != kb:
            raise DimensionError(
                f"matmul: a is {ashp[0]}x{ashp[1]}, b is {bshp[0]}x{bshp[1]}"
                f" (trans_b={trans_b}); inner dims {ashp[1]} vs {kb}"
            )
        v = self._K.matmul(self._values[a], self._values[b], False, trans_b)
        return self._push("matmul", (a, b), v, aux=trans_b)

    def relu(self, x: int) -> int:
        return self._push("relu", (x,), self._K.relu(self._values[x]))

    def exp(self, x: int) -> int:
        return self._push("exp", (x,), self._K.exp(self._values[x]))

    def log(self, x: int) -> int:
        return self._push("log", (x,), self._K.log(self._values[x]))

    def sqrt(self, x: int) -> int:
        return self._push("sqrt", (x,), self._K.sqrt(self._values[x]))

    def add(self, a: int, b: int) -> int:
        self._same_shape("add", a, b)
        return self._push("add", (a, b), self._K.add(self._values[a], self._values[b]))

    def sub(self, a: int, b: int) -> int:
        self._same_shape("sub", a, b)
        return self._push("sub", (a, b), self._K.sub(self._values[a], self._values[b]))

    def mul(self, a: int, b: int) -> int:
        self._same_shape("mul", a, b)
        return self._push("mul", (a, b), self._K.mul(self._values[a], self._values[b]))

    def div(self, a: int, b: int) -> int:
        self._same_shape("div", a, b)
        return self._push("div", (a, b), self._K.div(self._values[a], self._values[b]))

    def scale(self, x: int, c: float) -> int:
        return self._push("scale", (x,), self._K.scale(self._values[x], float(c)), aux=float(c))

    def add_scalar(self, x: int, c: float) -> int:
        return self._push("add_scalar", (x,), self._K.add_scalar(self._values[x], float(c)))

    def reduce_sum(self, x: int) -> int:
        v = np.array([[self._K.total_sum(self._values[x])]])
        return self._push("reduce_sum", (x,), v)

    def dot(self, a: int, b: int) -> int:
        ashp, bshp = self._shape(a), self._shape(b)
        if ashp[0] != 1 or bshp[0] != 1 or ashp != bshp:
            raise DimensionError(f"dot: expected equal 1-row vectors, got {ashp} and {bshp}")
        v = np.array([[self._K.total_sum(self._K.mul(self._values[a], self._values[b]))]])
        return self._push("dot", (a, b), v)

    def slice_cols(self, x: int, start: int, stop: int) -> int:
        cols = self._shape(x)[1]
        if not (0 <= start < stop <= cols):
            raise ContractError(f"slice_cols: [{start}:{stop}] out of range for {cols} cols")
        v = np.ascontiguousarray(self._values[x][:, start:stop])
        return self._push("slice_cols", (x,), v, aux=(start, stop))

    def gather(self, x: int, rows, cols) -> int:
        """Pick entries (rows[i], cols[i]) into a column vector; repeats allowed."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        if rows.shape != cols.shape or rows.ndim != 1:
            raise ContractError("gather: rows and cols must be equal-length 1-D index arrays")
        xv = self._values[x]
        if rows.size and (rows.min() < 0 or rows.max() >= xv.shape[0]
                          or cols.min() < 0 or cols.max() >= xv.shape[1]):
            raise ContractError(f"gather: index out of range for shape {xv.shape}")
        v = xv[rows, cols].reshape(-1, 1)
        return self._push("gather", (x,), v, aux=(rows, cols))


def backward(tape: Tape, loss: int) -> dict[int, Matrix]:
    """Reverse sweep from a scalar loss node.

    Returns gradients keyed by param node id; params the loss does not
    reach get zero gradients. Adjoints are recomputed from scratch on
    every call, so several losses on one tape can be differentiated
    independently.
    """
    K = tape._K
    if tape._shape(loss) != (1, 1):
        raise ContractError(f"backward: loss node must be 1x1, got {tape._shape(loss)}")
    n = len(tape)
    adj: list = [None] * n
    adj[loss] = np.ones((1, 1))

    def acc(i, delta):
        adj[i] = delta if adj[i] is None else K.add(adj[i], delta)

    for i in range(loss, -1, -1):
        g = adj[i]
        if g is None:
            continue
        op = tape._ops[i]
        ins = tape._inputs[i]
        vals = tape._values
        if op in ("input", "param"):
            continue
        if op == "affine":
            x, w, b = ins
            acc(x, K.matmul(g, vals[w], False, True))
            acc(w, K.matmul(vals[x], g, True, False))
            acc(b, K.col_sum(g))
        elif op == "matmul":
            a, b = ins
            if tape._aux[i]:  # value = A @ B^T
                acc(a, K.matmul(g, vals[b], False, False))
                acc(b, K.matmul(g, vals[a], True, False))
            else:  # value = A @ B
                acc(a, K.matmul(g, vals[b], False, True))
                acc(b, K.matmul(vals[a], g, True, False))
        elif op == "relu":
            acc(ins[0], K.relu_bwd(vals[ins[0]], g))
        elif op == "exp":
            acc(ins[0], K.mul(vals[i], g))
        elif op == "log":
            acc(ins[0], K.div(g, vals[ins[0]]))
        elif op == "sqrt":
            acc(ins[0], K.div(K.scale(g, 0.5), vals[i]))
        elif op == "add":
            acc(ins[0], g)
            acc(ins[1], g)
        elif op == "sub":
            acc(ins[0], g)
            acc(ins[1], K.scale(g, -1.0))
        elif op == "mul":
            a, b = ins
            acc(a, K.mul(g, vals[b]))
            acc(b, K.mul(g, vals[a]))
        elif op == "div":
            a, b = ins
            acc(a, K.div(g, vals[b]))
            acc(b, K.scale(K.mul(g, K.div(vals[i], vals[b])), -1.0))
        elif op == "scale":
            acc(ins[0], K.scale(g, tape._aux[i]))
        elif op == "add_scalar":
            acc(ins[0], g)
        elif op == "reduce_sum":
            acc(ins[0], np.full(vals[ins[0]].shape, g[0, 0]))
        elif op == "dot":
            a, b = ins
            s = g[0, 0]
            acc(a, K.scale(vals[b], s))
            acc(b, K.scale(vals[a], s))
        elif op == "slice_cols":
            start, stop = tape._aux[i]
            buf = np.zeros(vals[ins[0]].shape)
            buf[:, start:stop] = g
            acc(ins[0], buf)
        elif op == "gather":
            rows, cols = tape._aux[i]
            buf = np.zeros(vals[ins[0]].shape)
            np.add.at(buf, (rows, cols), g[:, 0])
            acc(ins[0], buf)
        else:  # pragma: no cover
            raise ContractError(f"backward: unknown op {op!r}")

    tape.adjoints = adj
    grads = {}
    for p in tape._param_ids:
        if adj[p] is None:
            grads[p] = Matrix.zeros(*tape._shape(p))
        else:
            grads[p] = Matrix(adj[p])
    return grads
