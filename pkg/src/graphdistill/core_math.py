"""Dense matrix kernels and a small tape-based reverse-mode autodiff engine.

Matrices are plain 2-D ``float64`` numpy arrays. Scalars produced on the tape
have shape ``(1, 1)``. The matrix product accumulates in a fixed order
(``k = 0 .. K-1``) so results do not depend on the BLAS build or the thread
count.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numba
import numpy as np
import scipy.sparse as sp

__all__ = [
    "Adam",
    "Tape",
    "Var",
    "as_matrix",
    "check_finite",
    "grad",
    "kl_divergence",
    "log_softmax",
    "matmul",
    "softmax",
    "softmax_cross_entropy",
]


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a C-contiguous 2-D float64 array (1-D input becomes a row)."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


def check_finite(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        bad = np.argwhere(~np.isfinite(a))[0]
        raise FloatingPointError(f"{name} has a non-finite entry at {tuple(int(i) for i in bad)}")
    return a


_TILE = 32


@numba.njit(cache=True, nogil=True)
def _matmul_kernel(a, b, out):
    # Row and inner-dimension tiles keep operands in cache. Every out[i, j]
    # still accumulates over p in ascending order, so results match the plain loop.
    m, k = a.shape
    n = b.shape[1]
    for i0 in range(0, m, _TILE):
        i1 = min(i0 + _TILE, m)
        for p0 in range(0, k, _TILE):
            p1 = min(p0 + _TILE, k)
            for i in range(i0, i1):
                for p in range(p0, p1):
                    av = a[i, p]
                    for j in range(n):
                        out[i, j] += av * b[p, j]


@numba.njit(cache=True, nogil=True)
def _matmul_narrow_kernel(a, b, out):
    # few output columns: four rows share each load of b[p, :]
    m, k = a.shape
    n = b.shape[1]
    i = 0
    while i + 4 <= m:
        for p in range(k):
            a0, a1, a2, a3 = a[i, p], a[i + 1, p], a[i + 2, p], a[i + 3, p]
            for j in range(n):
                bv = b[p, j]
                out[i, j] += a0 * bv
                out[i + 1, j] += a1 * bv
                out[i + 2, j] += a2 * bv
                out[i + 3, j] += a3 * bv
        i += 4
    for r in range(i, m):
        for p in range(k):
            av = a[r, p]
            for j in range(n):
                out[r, j] += av * b[p, j]


def matmul(a, b) -> np.ndarray:
    """Matrix product with sequential accumulation over the inner dimension.

    Bit-identical to the textbook triple loop ``acc += a[i, p] * b[p, j]``.
    """
    a = check_finite(as_matrix(a, "a"), "a")
    b = check_finite(as_matrix(b, "b"), "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.float64)
    if a.size and b.size:
        (_matmul_narrow_kernel if b.shape[1] < 16 else _matmul_kernel)(a, b, out)
    return out


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
    return shifted / shifted.sum(axis=1, keepdims=True)


# --------------------------------------------------------------------------
# tape


@dataclass(eq=False)
class Var:
    """A value recorded on a :class:`Tape`."""

    tape: "Tape"
    index: int
    value: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __matmul__(self, other):
        return self.tape.matmul(self, other)

    def __add__(self, other):
        return self.tape.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return self.tape.add(self, self.tape.scale(self.tape._wrap(other), -1.0))

    def __mul__(self, other):
        if np.isscalar(other):
            return self.tape.scale(self, float(other))
        return self.tape.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return self.tape.scale(self, -1.0)

    @property
    def T(self):
        return self.tape.transpose(self)


@dataclass(eq=False)
class _Node:
    op: str
    parents: tuple[int, ...]
    # maps upstream gradient -> one gradient per parent
    backward: Callable[[np.ndarray], Sequence[np.ndarray]] | None
    requires_grad: bool


@dataclass(eq=False)
class Tape:
    """Records primitive operations in topological order.

    Each primitive validates operand shapes when it is recorded, so shape
    errors surface at construction rather than during the backward sweep.
    """

    nodes: list[_Node] = field(default_factory=list)

    def _push(self, op, value, parents=(), backward=None) -> Var:
        req = any(self.nodes[p].requires_grad for p in parents)
        self.nodes.append(_Node(op, tuple(parents), backward if req else None, req))
        return Var(self, len(self.nodes) - 1, value)

    def _wrap(self, x) -> Var:
        if isinstance(x, Var):
            if x.tape is not self:
                raise ValueError("variable belongs to a different tape")
            return x
        return self.constant(x)

    # leaves ---------------------------------------------------------------

    def leaf(self, value) -> Var:
        """A differentiable input."""
        v = as_matrix(value, "leaf").copy()
        self.nodes.append(_Node("leaf", (), None, True))
        return Var(self, len(self.nodes) - 1, v)

    def constant(self, value) -> Var:
        v = as_matrix(value, "constant")
        self.nodes.append(_Node("const", (), None, False))
        return Var(self, len(self.nodes) - 1, v)

    # primitives -----------------------------------------------------------

    def matmul(self, a, b) -> Var:
        a, b = self._wrap(a), self._wrap(b)
        out = matmul(a.value, b.value)
        av, bv = a.value, b.value
        ra, rb = self.nodes[a.index].requires_grad, self.nodes[b.index].requires_grad
        return self._push(
            "matmul", out, (a.index, b.index),
            lambda g: (matmul(g, bv.T) if ra else None, matmul(av.T, g) if rb else None),
        )

    def spmm(self, mat: sp.csr_matrix, x) -> Var:
        """Product of a constant sparse matrix with a tape value."""
        x = self._wrap(x)
        if mat.shape[1] != x.shape[0]:
            raise ValueError(f"spmm shape mismatch: {mat.shape} x {x.shape}")
        out = np.asarray(mat @ x.value)
        mt = mat.T.tocsr()
        return self._push("spmm", out, (x.index,), lambda g: (np.asarray(mt @ g),))

    def add(self, a, b) -> Var:
        """Elementwise sum; ``b`` may be a ``1 x n`` row broadcast over rows of ``a``."""
        a, b = self._wrap(a), self._wrap(b)
        if a.shape == b.shape:
            return self._push("add", a.value + b.value, (a.index, b.index), lambda g: (g, g))
        if b.shape == (1, a.shape[1]):
            return self._push(
                "add", a.value + b.value, (a.index, b.index),
                lambda g: (g, g.sum(axis=0, keepdims=True)),
            )
        raise ValueError(f"add shape mismatch: {a.shape} + {b.shape}")

    def mul(self, a, b) -> Var:
        a, b = self._wrap(a), self._wrap(b)
        if a.shape != b.shape:
            raise ValueError(f"mul shape mismatch: {a.shape} * {b.shape}")
        av, bv = a.value, b.value
        return self._push("mul", av * bv, (a.index, b.index), lambda g: (g * bv, g * av))

    def scale(self, a, c: float) -> Var:
        a = self._wrap(a)
        return self._push("scale", a.value * c, (a.index,), lambda g: (g * c,))

    def relu(self, a) -> Var:
        a = self._wrap(a)
        mask = a.value > 0
        return self._push("relu", np.where(mask, a.value, 0.0), (a.index,), lambda g: (g * mask,))

    def log(self, a) -> Var:
        a = self._wrap(a)
        av = a.value
        return self._push("log", np.log(av), (a.index,), lambda g: (g / av,))

    def exp(self, a) -> Var:
        a = self._wrap(a)
        out = np.exp(a.value)
        return self._push("exp", out, (a.index,), lambda g: (g * out,))

    def softmax_rows(self, a) -> Var:
        a = self._wrap(a)
        s = softmax(a.value)

        def back(g):
            return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

        return self._push("softmax", s, (a.index,), back)

    def log_softmax_rows(self, a) -> Var:
        a = self._wrap(a)
        ls = log_softmax(a.value)
        s = np.exp(ls)
        return self._push(
            "log_softmax", ls, (a.index,),
            lambda g: (g - s * g.sum(axis=1, keepdims=True),),
        )

    def concat_cols(self, a, b) -> Var:
        a, b = self._wrap(a), self._wrap(b)
        if a.shape[0] != b.shape[0]:
            raise ValueError(f"concat row mismatch: {a.shape} | {b.shape}")
        k = a.shape[1]
        return self._push(
            "concat", np.hstack([a.value, b.value]), (a.index, b.index),
            lambda g: (g[:, :k], g[:, k:]),
        )

    def take_rows(self, a, rows) -> Var:
        a = self._wrap(a)
        rows = np.asarray(rows, dtype=np.int64)
        n = a.shape

        def back(g):
            out = np.zeros(n)
            np.add.at(out, rows, g)
            return (out,)

        return self._push("take_rows", a.value[rows], (a.index,), back)

    def transpose(self, a) -> Var:
        a = self._wrap(a)
        return self._push("transpose", np.ascontiguousarray(a.value.T), (a.index,), lambda g: (g.T,))

    def sum(self, a) -> Var:
        a = self._wrap(a)
        shape = a.shape
        return self._push(
            "sum", np.array([[a.value.sum()]]), (a.index,),
            lambda g: (np.full(shape, g[0, 0]),),
        )

    def frobenius_sq(self, a) -> Var:
        a = self._wrap(a)
        av = a.value
        return self._push(
            "frobenius_sq", np.array([[np.sum(av * av)]]), (a.index,),
            lambda g: (2.0 * g[0, 0] * av,),
        )

    # composite losses -----------------------------------------------------

    def cross_entropy(self, logits, targets) -> Var:
        """Mean of ``-log softmax(logits)[row, target]`` over rows."""
        logits = self._wrap(logits)
        t = _check_targets(targets, logits.shape)
        onehot = np.zeros(logits.shape)
        onehot[np.arange(len(t)), t] = 1.0
        return self.scale(self.sum(self.mul(self.log_softmax_rows(logits), onehot)), -1.0 / len(t))

    def soft_cross_entropy(self, logits, probs) -> Var:
        """Mean of ``-sum_k probs_k log softmax(logits)_k`` over rows."""
        logits = self._wrap(logits)
        p = as_matrix(probs, "probs")
        return self.scale(self.sum(self.mul(self.log_softmax_rows(logits), p)), -1.0 / logits.shape[0])

    def kl_divergence(self, probs, logits) -> Var:
        """Mean over rows of ``KL(probs || softmax(logits))``; rows of ``probs`` must be distributions."""
        logits = self._wrap(logits)
        p = _check_simplex(as_matrix(probs, "teacher_probs"))
        if p.shape != logits.shape:
            raise ValueError(f"kl shape mismatch: {p.shape} vs {logits.shape}")
        entropy_term = float(np.sum(_xlogx(p))) / p.shape[0]
        return self.add(self.soft_cross_entropy(logits, p), self.constant([[entropy_term]]))


def _xlogx(p: np.ndarray) -> np.ndarray:
    out = np.zeros_like(p)
    pos = p > 0
    out[pos] = p[pos] * np.log(p[pos])
    return out


def _check_targets(targets, shape) -> np.ndarray:
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    if len(t) != shape[0]:
        raise ValueError(f"expected {shape[0]} targets, got {len(t)}")
    bad = np.flatnonzero((t < 0) | (t >= shape[1]))
    if len(bad):
        raise ValueError(f"row {bad[0]}: target class {t[bad[0]]} outside [0, {shape[1]})")
    return t


def _check_simplex(p: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    bad = np.flatnonzero((p < 0).any(axis=1) | (np.abs(p.sum(axis=1) - 1.0) > tol))
    if len(bad):
        raise ValueError(f"teacher row {bad[0]} is not a probability distribution")
    return p


def grad(tape: Tape, output: Var, wrt: Sequence[Var]) -> list[np.ndarray]:
    """Reverse sweep from scalar ``output``; returns one gradient per ``wrt`` leaf.

    Leaves that do not influence ``output`` get a zero gradient.
    """
    if output.shape != (1, 1):
        raise ValueError(f"grad needs a scalar output, got shape {output.shape}")
    grads: dict[int, np.ndarray] = {output.index: np.ones((1, 1))}
    for i in range(output.index, -1, -1):
        g = grads.pop(i, None) if tape.nodes[i].op != "leaf" else grads.get(i)
        node = tape.nodes[i]
        if g is None or node.backward is None:
            continue
        for p, gp in zip(node.parents, node.backward(g)):
            if gp is None or not tape.nodes[p].requires_grad:
                continue
            grads[p] = grads[p] + gp if p in grads else gp
    return [grads.get(v.index, np.zeros(v.shape)) for v in wrt]


# module-level helpers for one-off evaluation --------------------------------


def softmax_cross_entropy(logits, targets) -> float:
    tape = Tape()
    return float(tape.cross_entropy(tape.constant(logits), targets).value[0, 0])


def kl_divergence(teacher_probs, student_logits) -> float:
    tape = Tape()
    return float(tape.kl_divergence(teacher_probs, tape.constant(student_logits)).value[0, 0])


class Adam:
    """Adam update rule over a list of parameter arrays (updated in place)."""

    def __init__(self, params: list[np.ndarray], lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
