"""Fixed-step explicit integrators for time-invariant ODEs.

These are the generic (callable-RHS) versions used for environment stepping
tests and accuracy checks; the rollout kernels fuse the same two schemes for
speed.  ``f`` maps a state vector to its time derivative.
"""

import math
from dataclasses import dataclass

import numpy as np

SCHEMES = ("euler", "rk4")


@dataclass
class IntegratorConfig:
    scheme: str = "rk4"
    substeps: int = 1

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}, expected one of {SCHEMES}")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")

    @property
    def code(self):
        """Integer code used by the compiled kernels (0 euler, 1 rk4)."""
        return SCHEMES.index(self.scheme)


def euler_step(f, s, h):
    return s + h * f(s)


def rk4_step(f, s, h):
    k1 = f(s)
    k2 = f(s + 0.5 * h * k1)
    k3 = f(s + 0.5 * h * k2)
    k4 = f(s + h * k3)
    return s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(f, s, dt, config=None):
    """Advance the state by one control interval of length dt."""
    cfg = config or IntegratorConfig()
    step = euler_step if cfg.scheme == "euler" else rk4_step
    h = dt / cfg.substeps
    out = np.asarray(s, dtype=float)
    for _ in range(cfg.substeps):
        out = step(f, out, h)
    return out


def rollout(f, s0, dt, n, config=None):
    """Integrate n control intervals; returns the (n + 1, ds) trajectory."""
    s = np.asarray(s0, dtype=float)
    traj = np.empty((n + 1, s.shape[0]))
    traj[0] = s
    for i in range(n):
        s = integrate(f, s, dt, config)
        traj[i + 1] = s
    return traj


def order_of_accuracy(f, s0, dt, config=None, exact=None):
    """Empirical convergence order of the configured scheme on one step.

    Compares the error at step sizes dt and dt/2 against either a supplied
    exact solution ``exact(dt) -> state`` or a fine-grid reference, and
    returns log2 of the error ratio.  When both errors vanish (e.g. the RHS
    is identically zero, or polynomial of low enough degree that the scheme
    is exact) there is no rate to estimate and inf is returned.
    """
    cfg = config or IntegratorConfig()
    if exact is not None:
        ref_coarse = np.asarray(exact(dt), dtype=float)
        ref_fine = ref_coarse
    else:
        fine = IntegratorConfig("rk4", 256 * cfg.substeps)
        ref_coarse = integrate(f, s0, dt, fine)
        ref_fine = ref_coarse
    e1 = np.linalg.norm(integrate(f, s0, dt, cfg) - ref_coarse)
    half = IntegratorConfig(cfg.scheme, 2 * cfg.substeps)
    e2 = np.linalg.norm(integrate(f, s0, dt, half) - ref_fine)
    if e1 < 1e-14 and e2 < 1e-14:
        return math.inf
    if e2 == 0.0:
        return math.inf
    return math.log2(e1 / e2)
