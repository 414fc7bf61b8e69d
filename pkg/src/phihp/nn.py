"""Flat-parameter MLPs and their optimizer.

All networks in the package (residual model, actor, critics) share one
representation: a flat float64 parameter vector plus an int64 layout table
of ``(w_offset, b_offset, n_in, n_out)`` rows.  That keeps the hot paths in
the compiled kernels, makes Polyak averaging and checkpointing trivial, and
lets the tape-based trainer view the same memory as weight matrices.

Hidden activations are ReLU; the output is linear or tanh scaled to the
action bounds.
"""

import numpy as np

from .autodiff import Var
from .backend import K

OUT_LINEAR = K.OUT_LINEAR
OUT_TANH_SCALED = K.OUT_TANH_SCALED


class PoisonedOptimizerError(RuntimeError):
    """Raised when a non-finite gradient would corrupt the Adam moments."""


def build_layout(sizes):
    """Layout table and total parameter count for the given layer sizes."""
    rows = []
    off = 0
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        rows.append((off, off + n_in * n_out, n_in, n_out))
        off += n_in * n_out + n_out
    return np.array(rows, dtype=np.int64), off


class Mlp:
    def __init__(self, sizes, theta, out_mode=OUT_LINEAR, out_scale=None):
        self.sizes = tuple(int(s) for s in sizes)
        self.layout, self.n_params = build_layout(self.sizes)
        if theta.shape != (self.n_params,):
            raise ValueError(f"theta has {theta.shape[0]} entries, layout wants {self.n_params}")
        self.theta = theta
        self.out_mode = out_mode
        self.out_scale = (np.ones(self.sizes[-1]) if out_scale is None
                          else np.asarray(out_scale, dtype=float) * np.ones(self.sizes[-1]))

    @classmethod
    def create(cls, sizes, rng, out_mode=OUT_LINEAR, out_scale=None):
        """Initialize weights and biases from U(-1/sqrt(fan_in), +1/sqrt(fan_in))."""
        layout, n = build_layout(sizes)
        theta = np.empty(n)
        for w_off, b_off, n_in, n_out in layout:
            bound = 1.0 / np.sqrt(n_in)
            theta[w_off:b_off] = rng.uniform(-bound, bound, n_in * n_out)
            theta[b_off:b_off + n_out] = rng.uniform(-bound, bound, n_out)
        return cls(sizes, theta, out_mode, out_scale)

    def copy(self):
        return Mlp(self.sizes, self.theta.copy(), self.out_mode, self.out_scale.copy())

    def _as_batch(self, X):
        X = np.ascontiguousarray(X, dtype=float)
        return (X[None, :], True) if X.ndim == 1 else (X, False)

    def forward(self, X):
        Xb, single = self._as_batch(X)
        Y = K.mlp_forward(self.theta, self.layout, Xb, self.out_mode, self.out_scale)
        return Y[0] if single else Y

    def forward_acts(self, X):
        Xb, _ = self._as_batch(X)
        return K.mlp_forward_acts(self.theta, self.layout, Xb, self.out_mode, self.out_scale)

    def backward(self, X, acts, Y, dY):
        """Gradient of sum(dY * Y) w.r.t. (theta, X); batch-summed like the kernel."""
        Xb, _ = self._as_batch(X)
        return K.mlp_backward(self.theta, self.layout, Xb, acts, Y,
                              self.out_mode, self.out_scale, np.ascontiguousarray(dY, dtype=float))

    # -- tape bridge, used when this net is trained jointly with other params --

    def param_vars(self, tape):
        """One Var per weight matrix / bias vector, viewing the current theta."""
        out = []
        for w_off, b_off, n_in, n_out in self.layout:
            out.append(tape.var(self.theta[w_off:b_off].reshape(n_in, n_out)))
            out.append(tape.var(self.theta[b_off:b_off + n_out]))
        return out

    def tape_forward(self, tape, x, params):
        """Differentiable forward through Vars created by param_vars()."""
        h = x
        L = len(self.sizes) - 1
        for i in range(L):
            z = tape.matmul(h, params[2 * i]) + params[2 * i + 1]
            if i < L - 1:
                h = tape.relu(z)
            elif self.out_mode == OUT_TANH_SCALED:
                h = tape.tanh(z) * self.out_scale
            else:
                h = z
        return h

    def grads_flat(self, params):
        """Pack param_vars gradients back into flat-theta order (None -> 0)."""
        g = np.zeros(self.n_params)
        for i, (w_off, b_off, n_in, n_out) in enumerate(self.layout):
            gw, gb = params[2 * i].grad, params[2 * i + 1].grad
            if gw is not None:
                g[w_off:b_off] = gw.reshape(-1)
            if gb is not None:
                g[b_off:b_off + n_out] = gb
        return g


class Adam:
    """Adam over one flat parameter vector, with a non-finite gradient guard."""

    def __init__(self, n_params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(self, theta, grad):
        # grad @ grad is finite iff every entry is (NaN and inf both propagate)
        if grad.size and not np.isfinite(grad @ grad):
            raise PoisonedOptimizerError("non-finite gradient; optimizer state preserved")
        self.t += 1
        K.adam_update(theta, grad, self.m, self.v, self.t,
                      self.lr, self.beta1, self.beta2, self.eps)


def soft_update(target, online, tau):
    """Polyak-average online into target (Mlp or raw parameter vectors)."""
    t = target.theta if isinstance(target, Mlp) else target
    o = online.theta if isinstance(online, Mlp) else online
    K.blend(t, o, tau)
