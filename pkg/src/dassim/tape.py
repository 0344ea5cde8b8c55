"""Reverse-mode gradient tape over a fixed set of array primitives.

The tape records a Wengert list: every primitive appends one node, so the
recording order is already a topological order and the backward pass walks
it once in reverse. Supported primitives are exactly what the operator
stack needs: add/sub/mul (with numpy broadcasting), matmul, affine maps,
tanh/sigmoid/relu, slicing, concatenation/stacking, reductions, weighted
quadratic forms and embedding of external differentiable operators.

Every primitive degrades gracefully: if no argument is a ``TapeNode`` the
plain numpy result is returned and nothing is recorded. Model code written
against these functions therefore serves both fast evaluation and
differentiation from a single source.
"""

from __future__ import annotations

import warnings

import numpy as np

from .errors import DisconnectedGraphWarning, NanEncountered

__all__ = [
    "GradientTape",
    "TapeNode",
    "add",
    "sub",
    "neg",
    "mul",
    "matmul",
    "affine",
    "tanh",
    "sigmoid",
    "relu",
    "take",
    "concat",
    "stack_rows",
    "sum_all",
    "mean_all",
    "dot",
    "quad_form_solve",
    "apply_operator",
    "tape_backward",
    "gradient",
    "finite_diff_gradient",
]


class TapeNode:
    """One recorded value. Leaves have no vjp; interior nodes know how to
    push a cotangent back to their parents."""

    __slots__ = ("tape", "value", "vjp")

    def __init__(self, tape, value, vjp=None):
        self.tape = tape
        self.value = np.asarray(value, dtype=float)
        self.vjp = vjp  # callable: cotangent -> [(parent, parent_cotangent), ...]

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    # Operator sugar; all defer to the module-level primitives.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return take(self, idx)

    def __repr__(self):
        return f"TapeNode(shape={self.value.shape})"


class GradientTape:
    """Wengert list of recorded primitives.

    ``input`` registers a leaf; primitives called with at least one node
    argument append interior nodes. ``tape_backward`` visits each node
    exactly once in reverse recording order.
    """

    def __init__(self):
        self.nodes: list[TapeNode] = []
        self.inputs: list[TapeNode] = []

    def input(self, value) -> TapeNode:
        node = TapeNode(self, value)
        self.nodes.append(node)
        self.inputs.append(node)
        return node

    def _emit(self, value, vjp) -> TapeNode:
        node = TapeNode(self, value, vjp)
        self.nodes.append(node)
        return node


def _value(x):
    if isinstance(x, TapeNode):
        return x.value
    return np.asarray(x, dtype=float)


def _tape_of(*args):
    tape = None
    for a in args:
        if isinstance(a, TapeNode):
            if tape is None:
                tape = a.tape
            elif tape is not a.tape:
                raise ValueError("operands belong to different tapes")
    return tape


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _binary(a, b, out, da_fn, db_fn):
    tape = _tape_of(a, b)
    if tape is None:
        return out

    def vjp(ct):
        pairs = []
        if isinstance(a, TapeNode):
            pairs.append((a, da_fn(ct)))
        if isinstance(b, TapeNode):
            pairs.append((b, db_fn(ct)))
        return pairs

    return tape._emit(out, vjp)


def add(a, b):
    av, bv = _value(a), _value(b)
    return _binary(
        a, b, av + bv,
        lambda ct: _unbroadcast(np.asarray(ct, dtype=float), av.shape),
        lambda ct: _unbroadcast(np.asarray(ct, dtype=float), bv.shape),
    )


def sub(a, b):
    av, bv = _value(a), _value(b)
    return _binary(
        a, b, av - bv,
        lambda ct: _unbroadcast(np.asarray(ct, dtype=float), av.shape),
        lambda ct: _unbroadcast(-np.asarray(ct, dtype=float), bv.shape),
    )


def neg(a):
    av = _value(a)
    if not isinstance(a, TapeNode):
        return -av
    return a.tape._emit(-av, lambda ct: [(a, -np.asarray(ct, dtype=float))])


def mul(a, b):
    av, bv = _value(a), _value(b)
    return _binary(
        a, b, av * bv,
        lambda ct: _unbroadcast(np.asarray(ct, dtype=float) * bv, av.shape),
        lambda ct: _unbroadcast(np.asarray(ct, dtype=float) * av, bv.shape),
    )


def matmul(a, b):
    av, bv = _value(a), _value(b)
    out = av @ bv

    def da(ct):
        ct = np.asarray(ct, dtype=float)
        if bv.ndim == 2:
            return ct @ bv.T
        if av.ndim == 2:
            return np.outer(ct, bv)
        return ct * bv

    def db(ct):
        ct = np.asarray(ct, dtype=float)
        if av.ndim == 2:
            return av.T @ ct
        if bv.ndim == 2:
            return np.outer(av, ct)
        return ct * av

    return _binary(a, b, out, da, db)


def affine(x, w, b):
    """Fused ``x @ w + b`` with the bias broadcast over batch rows."""
    xv, wv, bv = _value(x), _value(w), _value(b)
    out = xv @ wv + bv
    tape = _tape_of(x, w, b)
    if tape is None:
        return out

    def vjp(ct):
        ct = np.asarray(ct, dtype=float)
        pairs = []
        if isinstance(x, TapeNode):
            pairs.append((x, ct @ wv.T))
        if isinstance(w, TapeNode):
            pairs.append((w, np.outer(xv, ct) if xv.ndim == 1 else xv.T @ ct))
        if isinstance(b, TapeNode):
            pairs.append((b, ct if ct.ndim == bv.ndim else ct.sum(axis=0)))
        return pairs

    return tape._emit(out, vjp)


def _unary(a, out, local):
    if not isinstance(a, TapeNode):
        return out
    return a.tape._emit(out, lambda ct: [(a, np.asarray(ct, dtype=float) * local)])


def tanh(a):
    out = np.tanh(_value(a))
    return _unary(a, out, 1.0 - out * out)


def sigmoid(a):
    av = _value(a)
    out = 1.0 / (1.0 + np.exp(-av))
    return _unary(a, out, out * (1.0 - out))


def relu(a):
    av = _value(a)
    out = np.maximum(av, 0.0)
    return _unary(a, out, (av > 0.0).astype(float))


def take(a, idx):
    """Index or slice; the vjp scatters the cotangent back into zeros."""
    av = _value(a)
    out = av[idx]
    if not isinstance(a, TapeNode):
        return out

    def vjp(ct):
        buf = np.zeros_like(av)
        np.add.at(buf, idx, np.asarray(ct, dtype=float))
        return [(a, buf)]

    return a.tape._emit(out, vjp)


def concat(parts):
    """Concatenate 1-D pieces into one vector."""
    values = [_value(p) for p in parts]
    joined = np.concatenate(values)
    tape = _tape_of(*parts)
    if tape is None:
        return joined
    offsets = np.cumsum([v.shape[0] for v in values])[:-1]

    def vjp(ct):
        pieces = np.split(np.asarray(ct, dtype=float), offsets)
        return [(p, pc) for p, pc in zip(parts, pieces) if isinstance(p, TapeNode)]

    return tape._emit(joined, vjp)


def stack_rows(parts):
    """Stack equal-length vectors into a (len(parts), dim) matrix."""
    values = [_value(p) for p in parts]
    joined = np.stack(values, axis=0)
    tape = _tape_of(*parts)
    if tape is None:
        return joined

    def vjp(ct):
        ct = np.asarray(ct, dtype=float)
        return [(p, ct[i]) for i, p in enumerate(parts) if isinstance(p, TapeNode)]

    return tape._emit(joined, vjp)


def sum_all(a):
    av = _value(a)
    out = np.asarray(av.sum())
    if not isinstance(a, TapeNode):
        return out
    return a.tape._emit(out, lambda ct: [(a, np.full(av.shape, float(ct)))])


def mean_all(a):
    av = _value(a)
    out = np.asarray(av.mean())
    if not isinstance(a, TapeNode):
        return out
    return a.tape._emit(out, lambda ct: [(a, np.full(av.shape, float(ct) / av.size))])


def dot(a, b):
    return matmul(a, b)


def quad_form_solve(cov, v):
    """Weighted squared norm ``v.T @ cov^{-1} @ v`` through the SPD solve.

    ``cov`` is a constant CovarianceMatrix; the gradient with respect to
    ``v`` is ``2 cov^{-1} v`` using the same cached factorization.
    """
    vv = _value(v)
    solved = cov.solve(vv)
    out = np.asarray(float(vv @ solved))
    if not isinstance(v, TapeNode):
        return out
    return v.tape._emit(out, lambda ct: [(v, (2.0 * float(ct)) * solved)])


def apply_operator(op, x):
    """Embed a DifferentiableOperator as a single tape primitive."""
    if not isinstance(x, TapeNode):
        return op.evaluate(_value(x))
    value, pullback = op.evaluate_with_pullback(x.value)
    return x.tape._emit(value, lambda ct: [(x, pullback(np.asarray(ct, dtype=float)))])


def _backward(output: TapeNode, seed_cotangent=None):
    tape = output.tape
    if seed_cotangent is None:
        seed = np.ones_like(output.value)
    else:
        seed = np.asarray(seed_cotangent, dtype=float)
        if seed.shape != output.value.shape:
            raise ValueError(
                f"seed cotangent shape {seed.shape} != output shape {output.value.shape}"
            )
    adjoint: dict[TapeNode, np.ndarray] = {output: seed}
    for node in reversed(tape.nodes):
        ct = adjoint.get(node)
        if ct is None or node.vjp is None:
            continue
        for parent, grad in node.vjp(ct):
            grad = np.asarray(grad, dtype=float)
            prev = adjoint.get(parent)
            adjoint[parent] = grad if prev is None else prev + grad
    return adjoint


def tape_backward(tape: GradientTape, output: TapeNode, seed_cotangent=None):
    """Gradients of ``output`` with respect to every recorded input.

    Returns a dict mapping each leaf registered via ``tape.input`` to its
    gradient. Leaves that never influence the output get a zero gradient
    and a ``DisconnectedGraphWarning`` is emitted for them.
    """
    if output.tape is not tape:
        raise ValueError("output node was not recorded on this tape")
    adjoint = _backward(output, seed_cotangent)
    grads = {}
    for leaf in tape.inputs:
        if leaf in adjoint:
            grads[leaf] = adjoint[leaf]
        else:
            warnings.warn(
                "input does not influence the requested output; gradient is zero",
                DisconnectedGraphWarning,
                stacklevel=2,
            )
            grads[leaf] = np.zeros_like(leaf.value)
    return grads


def gradient(output: TapeNode, wrt, seed_cotangent=None, warn_disconnected=True):
    """Gradients of ``output`` with respect to the listed nodes."""
    adjoint = _backward(output, seed_cotangent)
    out = []
    for node in wrt:
        if node in adjoint:
            out.append(adjoint[node])
        else:
            if warn_disconnected:
                warnings.warn(
                    "input does not influence the requested output; gradient is zero",
                    DisconnectedGraphWarning,
                    stacklevel=2,
                )
            out.append(np.zeros_like(node.value))
    return out


def finite_diff_gradient(f, x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient oracle, component i = (f(x+h e_i) - f(x-h e_i)) / 2h."""
    if h <= 0:
        raise ValueError("step size must be positive")
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        step = np.zeros_like(flat)
        step[i] = h
        fp = float(f((flat + step).reshape(x.shape)))
        fm = float(f((flat - step).reshape(x.shape)))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NanEncountered(f"objective returned non-finite value near component {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad
