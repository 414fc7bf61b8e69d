"""Minimal tape-based reverse-mode autodiff over numpy arrays.

Built for one job: differentiating the model loss through the integrator,
the analytic prior and the residual network with respect to physical
constants and network weights.  Values are numpy arrays (scalars are 0-d
arrays); broadcasting follows numpy rules, with gradients summed back over
broadcast axes.

Usage:
    tape = Tape()
    x = tape.var(np.ones(3))
    y = (x * x).sum()
    tape.backward(y)
    x.grad  # -> array([2., 2., 2.])
"""

import numpy as np


def _unbroadcast(grad, shape):
    """Sum a gradient back down to the shape it was broadcast from."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Var:
    """A node in the tape: a value, a gradient slot, and a backward rule."""

    __slots__ = ("value", "grad", "_backward", "_tape")

    # keep numpy from broadcasting over Var objects elementwise; with ufunc
    # dispatch disabled, ndarray <op> Var falls back to the reflected methods
    __array_ufunc__ = None

    def __init__(self, value, tape):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self._backward = None
        self._tape = tape

    @property
    def shape(self):
        return self.value.shape

    def _accumulate(self, g):
        g = _unbroadcast(np.asarray(g), self.value.shape)
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    # -- operator sugar; plain numbers/arrays are treated as constants --

    def __add__(self, other):
        return self._tape.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return self._tape.sub(self, other)

    def __rsub__(self, other):
        return self._tape.sub(other, self)

    def __mul__(self, other):
        return self._tape.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._tape.div(self, other)

    def __rtruediv__(self, other):
        return self._tape.div(other, self)

    def __neg__(self):
        return self._tape.neg(self)

    def __matmul__(self, other):
        return self._tape.matmul(self, other)

    def sum(self, axis=None):
        return self._tape.sum(self, axis)

    def mean(self, axis=None):
        return self._tape.mean(self, axis)


class Tape:
    """Records operations in execution order; backward() replays them reversed."""

    def __init__(self):
        self.nodes = []

    def var(self, value):
        v = Var(value, self)
        self.nodes.append(v)
        return v

    def _node(self, value, backward):
        v = Var(value, self)
        v._backward = backward
        self.nodes.append(v)
        return v

    def _lift(self, x):
        return x.value if isinstance(x, Var) else np.asarray(x, dtype=float)

    def backward(self, root, seed=None):
        """Propagate d(root)/d(node) into every node's .grad."""
        if seed is None:
            seed = np.ones_like(root.value)
        root._accumulate(seed)
        for node in reversed(self.nodes):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)

    # -- arithmetic --

    def add(self, a, b):
        av, bv = self._lift(a), self._lift(b)
        out = self._node(av + bv, None)

        def back(g):
            if isinstance(a, Var):
                a._accumulate(g)
            if isinstance(b, Var):
                b._accumulate(g)

        out._backward = back
        return out

    def sub(self, a, b):
        av, bv = self._lift(a), self._lift(b)
        out = self._node(av - bv, None)

        def back(g):
            if isinstance(a, Var):
                a._accumulate(g)
            if isinstance(b, Var):
                b._accumulate(-g)

        out._backward = back
        return out

    def mul(self, a, b):
        av, bv = self._lift(a), self._lift(b)
        out = self._node(av * bv, None)

        def back(g):
            if isinstance(a, Var):
                a._accumulate(g * bv)
            if isinstance(b, Var):
                b._accumulate(g * av)

        out._backward = back
        return out

    def div(self, a, b):
        av, bv = self._lift(a), self._lift(b)
        out = self._node(av / bv, None)

        def back(g):
            if isinstance(a, Var):
                a._accumulate(g / bv)
            if isinstance(b, Var):
                b._accumulate(-g * av / (bv * bv))

        out._backward = back
        return out

    def neg(self, a):
        out = self._node(-a.value, None)
        out._backward = lambda g: a._accumulate(-g)
        return out

    # -- elementwise nonlinearities --

    def sin(self, a):
        out = self._node(np.sin(a.value), None)
        out._backward = lambda g: a._accumulate(g * np.cos(a.value))
        return out

    def cos(self, a):
        out = self._node(np.cos(a.value), None)
        out._backward = lambda g: a._accumulate(-g * np.sin(a.value))
        return out

    def tanh(self, a):
        t = np.tanh(a.value)
        out = self._node(t, None)
        out._backward = lambda g: a._accumulate(g * (1.0 - t * t))
        return out

    def exp(self, a):
        e = np.exp(a.value)
        out = self._node(e, None)
        out._backward = lambda g: a._accumulate(g * e)
        return out

    def sqrt(self, a):
        r = np.sqrt(a.value)
        out = self._node(r, None)
        out._backward = lambda g: a._accumulate(g * 0.5 / r)
        return out

    def relu(self, a):
        mask = a.value > 0.0
        out = self._node(a.value * mask, None)
        out._backward = lambda g: a._accumulate(g * mask)
        return out

    def sign(self, a):
        """sign(x) with the a.e.-correct zero gradient."""
        out = self._node(np.sign(a.value), None)
        out._backward = lambda g: a._accumulate(np.zeros_like(a.value))
        return out

    # -- linear algebra / shape --

    def matmul(self, a, b):
        av, bv = self._lift(a), self._lift(b)
        out = self._node(av @ bv, None)

        def back(g):
            if isinstance(a, Var):
                a._accumulate(g @ bv.T)
            if isinstance(b, Var):
                b._accumulate(av.T @ g)

        out._backward = back
        return out

    def sum(self, a, axis=None):
        out = self._node(a.value.sum(axis=axis), None)

        def back(g):
            if axis is None:
                a._accumulate(np.broadcast_to(g, a.value.shape))
            else:
                a._accumulate(np.broadcast_to(np.expand_dims(g, axis), a.value.shape))

        out._backward = back
        return out

    def mean(self, a, axis=None):
        n = a.value.size if axis is None else a.value.shape[axis]
        out = self._node(a.value.mean(axis=axis), None)

        def back(g):
            if axis is None:
                a._accumulate(np.broadcast_to(g / n, a.value.shape))
            else:
                a._accumulate(np.broadcast_to(np.expand_dims(g / n, axis), a.value.shape))

        out._backward = back
        return out

    def concat(self, parts, axis=1):
        vals = [self._lift(p) for p in parts]
        out = self._node(np.concatenate(vals, axis=axis), None)
        splits = np.cumsum([v.shape[axis] for v in vals])[:-1]

        def back(g):
            for p, gp in zip(parts, np.split(g, splits, axis=axis)):
                if isinstance(p, Var):
                    p._accumulate(gp)

        out._backward = back
        return out

    def col(self, a, j):
        """Extract column j of a 2-d value as a 1-d vector."""
        out = self._node(a.value[:, j], None)

        def back(g):
            full = np.zeros_like(a.value)
            full[:, j] = g
            a._accumulate(full)

        out._backward = back
        return out

    def stack_cols(self, cols):
        """Stack 1-d vectors as the columns of a 2-d value."""
        out = self._node(np.stack([self._lift(c) for c in cols], axis=1), None)

        def back(g):
            for j, c in enumerate(cols):
                if isinstance(c, Var):
                    c._accumulate(g[:, j])

        out._backward = back
        return out
