"""Tape-based reverse-mode differentiation over numpy arrays.

Every :class:`Var` carries an ndarray value and is recorded on a :class:`Tape`
in creation order, so walking the tape backwards is a valid reverse
topological order. Values are vectorized: one ``Var`` may hold the states of
all particles at a time step, which keeps the Python overhead per primitive
independent of the particle count.

The module-level functions (``exp``, ``sin``, ``matmul`` ...) accept plain
arrays as well as ``Var`` objects and fall back to numpy when no operand is
traced. Model code written against them therefore runs unchanged on both
paths.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_triangular as _solve_tri


class NonFiniteError(FloatingPointError):
    """A primitive produced NaN or Inf."""

    def __init__(self, op: str):
        super().__init__(f"non-finite value produced by primitive '{op}'")
        self.op = op


class UnsupportedPrimitiveError(TypeError):
    """A numpy function without a registered adjoint was applied to a Var."""

    def __init__(self, name: str):
        super().__init__(f"primitive '{name}' has no reverse rule")
        self.name = name


class Tape:
    """Records primitives applied to its variables.

    A tape is single-threaded. Independent tapes can live on independent
    threads.
    """

    def __init__(self, check_finite: bool = True):
        self.check_finite = check_finite
        self._nodes: list[Var] = []

    def __len__(self):
        return len(self._nodes)

    def variable(self, value) -> "Var":
        v = Var(np.array(value, dtype=np.float64), self, "input")
        self._nodes.append(v)
        return v

    def _record(self, value, op: str, backward) -> "Var":
        if self.check_finite and not np.all(np.isfinite(value)):
            raise NonFiniteError(op)
        v = Var(value, self, op)
        v._backward = backward
        self._nodes.append(v)
        return v

    def backward(self, out: "Var", seed=None) -> None:
        """Accumulate adjoints of ``out`` into every recorded variable.

        ``seed`` defaults to ones, which for a scalar output gives the plain
        gradient. A non-trivial seed computes a vector-Jacobian product.
        """
        if out.tape is not self:
            raise ValueError("output variable belongs to another tape")
        for node in self._nodes:
            node.grad = None
        out.grad = (np.ones_like(out.value) if seed is None
                    else np.broadcast_to(np.asarray(seed, dtype=np.float64),
                                         out.value.shape).copy())
        for node in reversed(self._nodes):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)

    def gradient(self, out: "Var", wrt, seed=None):
        """Return d(out)/d(wrt) as arrays; ``wrt`` may be a Var or a list."""
        self.backward(out, seed)
        if isinstance(wrt, Var):
            return wrt.grad_or_zeros()
        return [w.grad_or_zeros() for w in wrt]


class Var:
    """A traced array value."""

    __slots__ = ("value", "tape", "op", "grad", "_backward")
    __array_priority__ = 1000

    def __init__(self, value: np.ndarray, tape: Tape, op: str):
        self.value = value
        self.tape = tape
        self.op = op
        self.grad = None
        self._backward = None

    def __repr__(self):
        return f"Var(op={self.op!r}, shape={self.value.shape})"

    def _acc(self, g):
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

    def grad_or_zeros(self):
        return np.zeros_like(self.value) if self.grad is None else self.grad

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def T(self):
        return transpose(self)

    def __len__(self):
        return len(self.value)

    def __float__(self):
        return float(self.value)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        rule = _UFUNCS.get(ufunc.__name__)
        if method != "__call__" or rule is None or kwargs:
            raise UnsupportedPrimitiveError(f"numpy.{ufunc.__name__}")
        return rule(*inputs)

    def __array_function__(self, func, types, args, kwargs):
        rule = _ARRAY_FUNCS.get(func.__name__)
        if rule is None:
            raise UnsupportedPrimitiveError(f"numpy.{func.__name__}")
        return rule(*args, **kwargs)


def _val(x):
    return x.value if isinstance(x, Var) else x


def _tape_of(*xs) -> Tape | None:
    tape = None
    for x in xs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise ValueError("operands recorded on different tapes")
    return tape


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _shape(x):
    return np.shape(x)


# -- elementwise binary -------------------------------------------------------

def add(a, b):
    tape = _tape_of(a, b)
    av, bv = _val(a), _val(b)
    y = np.add(av, bv)
    if tape is None:
        return y
    sa, sb = _shape(av), _shape(bv)

    def backward(g):
        if isinstance(a, Var):
            a._acc(_unbroadcast(g, sa))
        if isinstance(b, Var):
            b._acc(_unbroadcast(g, sb))
    return tape._record(y, "add", backward)


def sub(a, b):
    tape = _tape_of(a, b)
    av, bv = _val(a), _val(b)
    y = np.subtract(av, bv)
    if tape is None:
        return y
    sa, sb = _shape(av), _shape(bv)

    def backward(g):
        if isinstance(a, Var):
            a._acc(_unbroadcast(g, sa))
        if isinstance(b, Var):
            b._acc(_unbroadcast(-g, sb))
    return tape._record(y, "sub", backward)


def mul(a, b):
    tape = _tape_of(a, b)
    av, bv = _val(a), _val(b)
    y = np.multiply(av, bv)
    if tape is None:
        return y
    sa, sb = _shape(av), _shape(bv)

    def backward(g):
        if isinstance(a, Var):
            a._acc(_unbroadcast(g * bv, sa))
        if isinstance(b, Var):
            b._acc(_unbroadcast(g * av, sb))
    return tape._record(y, "mul", backward)


def div(a, b):
    tape = _tape_of(a, b)
    av, bv = _val(a), _val(b)
    y = np.divide(av, bv)
    if tape is None:
        return y
    sa, sb = _shape(av), _shape(bv)

    def backward(g):
        gb = g / bv
        if isinstance(a, Var):
            a._acc(_unbroadcast(gb, sa))
        if isinstance(b, Var):
            b._acc(_unbroadcast(-gb * y, sb))
    return tape._record(y, "div", backward)


def maximum(x, floor):
    """Elementwise max against a constant; the adjoint is masked where clamped."""
    if isinstance(floor, Var):
        raise UnsupportedPrimitiveError("maximum with traced floor")
    if not isinstance(x, Var):
        return np.maximum(x, floor)
    mask = x.value >= floor
    y = np.where(mask, x.value, floor)

    def backward(g):
        x._acc(np.where(mask, g, 0.0))
    return x.tape._record(y, "maximum", backward)


def clip(x, lo, hi):
    """Clamp into ``[lo, hi]`` (constants); zero adjoint outside the interval."""
    if not isinstance(x, Var):
        return np.clip(x, lo, hi)
    mask = (x.value >= lo) & (x.value <= hi)
    y = np.clip(x.value, lo, hi)

    def backward(g):
        x._acc(np.where(mask, g, 0.0))
    return x.tape._record(y, "clip", backward)


# -- elementwise unary --------------------------------------------------------

def _unary(name, f, dfdx):
    """Build a unary primitive. ``dfdx(x, y)`` returns the local derivative."""

    def op(x):
        if not isinstance(x, Var):
            return f(x)
        xv = x.value
        with np.errstate(all="ignore"):
            y = f(xv)

        def backward(g):
            x._acc(g * dfdx(xv, y))
        return x.tape._record(y, name, backward)

    op.__name__ = name
    return op


exp = _unary("exp", np.exp, lambda x, y: y)
log = _unary("log", np.log, lambda x, y: 1.0 / x)
tanh = _unary("tanh", np.tanh, lambda x, y: 1.0 - y * y)
sin = _unary("sin", np.sin, lambda x, y: np.cos(x))
cos = _unary("cos", np.cos, lambda x, y: -np.sin(x))
sqrt = _unary("sqrt", np.sqrt, lambda x, y: 0.5 / y)
square = _unary("square", np.square, lambda x, y: 2.0 * x)
# subgradient 0 at the kink
abs = _unary("abs", np.abs, lambda x, y: np.sign(x))


def neg(x):
    if not isinstance(x, Var):
        return np.negative(x)

    def backward(g):
        x._acc(-g)
    return x.tape._record(-x.value, "neg", backward)


def power(x, p):
    if isinstance(p, Var):
        raise UnsupportedPrimitiveError("power with traced exponent")
    if not isinstance(x, Var):
        return np.power(x, p)
    xv = x.value
    y = np.power(xv, p)

    def backward(g):
        x._acc(g * p * np.power(xv, p - 1))
    return x.tape._record(y, "power", backward)


def sigmoid(x):
    return 1.0 / (1.0 + exp(-x))


# -- reductions and shape -----------------------------------------------------

def sum(x, axis=None, keepdims=False):
    if not isinstance(x, Var):
        return np.sum(x, axis=axis, keepdims=keepdims)
    shape = x.value.shape
    y = np.sum(x.value, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._acc(np.broadcast_to(g, shape))
    return x.tape._record(np.asarray(y), "sum", backward)


def mean(x, axis=None):
    n = np.size(_val(x)) if axis is None else np.shape(_val(x))[axis]
    return sum(x, axis=axis) / n


def reshape(x, shape):
    if not isinstance(x, Var):
        return np.reshape(x, shape)
    old = x.value.shape

    def backward(g):
        x._acc(g.reshape(old))
    return x.tape._record(x.value.reshape(shape), "reshape", backward)


def transpose(x):
    if not isinstance(x, Var):
        return np.transpose(x)

    def backward(g):
        x._acc(g.T)
    return x.tape._record(x.value.T, "transpose", backward)


def getitem(x, idx):
    if not isinstance(x, Var):
        return x[idx]
    shape = x.value.shape

    def backward(g):
        z = np.zeros(shape)
        np.add.at(z, idx, g)
        x._acc(z)
    return x.tape._record(np.array(x.value[idx]), "getitem", backward)


def concatenate(xs: Sequence, axis=0):
    tape = _tape_of(*xs)
    vals = [np.asarray(_val(x), dtype=np.float64) for x in xs]
    y = np.concatenate(vals, axis=axis)
    if tape is None:
        return y
    bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def backward(g):
        for x, gi in zip(xs, np.split(g, bounds, axis=axis)):
            if isinstance(x, Var):
                x._acc(gi)
    return tape._record(y, "concatenate", backward)


def stack(xs: Sequence, axis=0):
    return concatenate([expand_dims(x, axis) for x in xs], axis=axis)


def expand_dims(x, axis):
    shape = list(np.shape(_val(x)))
    ax = axis if axis >= 0 else len(shape) + 1 + axis
    shape.insert(ax, 1)
    return reshape(x, tuple(shape))


# -- linear algebra -----------------------------------------------------------

def matmul(a, b):
    tape = _tape_of(a, b)
    av, bv = _val(a), _val(b)
    y = np.matmul(av, bv)
    if tape is None:
        return y
    if np.ndim(av) > 2 or np.ndim(bv) > 2:
        raise UnsupportedPrimitiveError("batched matmul")

    def backward(g):
        if isinstance(a, Var):
            if bv.ndim == 1:
                ga = np.multiply.outer(g, bv) if av.ndim == 2 else g * bv
            else:
                ga = g @ bv.T if av.ndim == 2 else bv @ g
            a._acc(ga)
        if isinstance(b, Var):
            if av.ndim == 1:
                gb = np.multiply.outer(av, g) if bv.ndim == 2 else g * av
            else:
                gb = av.T @ g
            b._acc(gb)
    return tape._record(np.asarray(y), "matmul", backward)


def solve_triangular(factor: np.ndarray, b, lower=True):
    """Solve ``factor @ x = b`` with a constant triangular factor."""
    if isinstance(factor, Var):
        raise UnsupportedPrimitiveError("triangular solve with traced factor")
    y = _solve_tri(factor, _val(b), lower=lower, check_finite=False)
    if not isinstance(b, Var):
        return y

    def backward(g):
        b._acc(_solve_tri(factor, g, lower=lower, trans="T", check_finite=False))
    return b.tape._record(y, "solve_triangular", backward)


def cho_solve(factor: np.ndarray, b):
    """Solve ``(L L^T) x = b`` given the constant lower Cholesky factor L."""
    z = solve_triangular(factor, b, lower=True)
    return solve_triangular(factor.T, z, lower=False)


# -- numpy dispatch -----------------------------------------------------------

_UFUNCS: dict[str, Callable] = {
    "add": add, "subtract": sub, "multiply": mul, "true_divide": div,
    "divide": div, "negative": neg, "power": power, "matmul": matmul,
    "exp": exp, "log": log, "tanh": tanh, "sin": sin, "cos": cos,
    "sqrt": sqrt, "square": square, "absolute": abs,
}

_ARRAY_FUNCS: dict[str, Callable] = {
    "sum": sum, "mean": mean, "reshape": reshape, "transpose": transpose,
    "concatenate": concatenate, "stack": stack, "expand_dims": expand_dims,
}


def custom(op: str, y, operands: Sequence, vjps: Sequence[Callable]):
    """Record a primitive with hand-written adjoints.

    ``vjps[i](g)`` maps the output adjoint to the adjoint of ``operands[i]``;
    entries for untraced operands are ignored.
    """
    tape = _tape_of(*operands)
    if tape is None:
        return y

    def backward(g):
        for x, vjp in zip(operands, vjps):
            if isinstance(x, Var):
                x._acc(vjp(g))
    return tape._record(np.asarray(y, dtype=np.float64), op, backward)


def value(x):
    """Plain ndarray value of a Var or array-like."""
    return np.asarray(_val(x), dtype=np.float64)


def differentiate(f: Callable, at, check_finite: bool = True):
    """Evaluate a scalar function and its gradient by one reverse sweep.

    Returns ``(value, gradient)`` where the gradient has the shape of ``at``.
    """
    tape = Tape(check_finite=check_finite)
    x = tape.variable(at)
    out = f(x)
    if not isinstance(out, Var):
        return float(np.asarray(out)), np.zeros_like(x.value)
    if out.value.size != 1:
        raise ValueError("differentiate expects a scalar-valued function")
    grad = tape.gradient(out, x)
    return float(out.value), grad
