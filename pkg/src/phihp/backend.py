"""Kernel backend selection.

The hot numeric paths (dynamics, rollout scoring, MLP forward/backward, Adam)
exist twice: an njit-compiled module and a pure-numpy reference module with
identical signatures.  The environment variable ``PHIHP_BACKEND`` picks one:

* ``auto`` (default) - numba if it imports, numpy otherwise
* ``numba``          - require the compiled kernels, raise if unavailable
* ``numpy``          - force the reference implementation

Selection happens once at import; the chosen module is exposed as ``K``.
Both backends are deterministic, but they may differ by a few ULP on
transcendentals, so cross-backend comparisons belong in tests, not in
bitwise-reproducibility claims.
"""

import os

_choice = os.environ.get("PHIHP_BACKEND", "auto").lower()

if _choice not in ("auto", "numba", "numpy"):
    raise RuntimeError(
        "PHIHP_BACKEND must be 'auto', 'numba' or 'numpy', got %r" % _choice
    )

if _choice == "numpy":
    from . import _kernels_numpy as K

    USING_NUMBA = False
else:
    try:
        from . import _kernels_numba as K

        USING_NUMBA = True
    except ImportError:
        if _choice == "numba":
            raise
        from . import _kernels_numpy as K

        USING_NUMBA = False

BACKEND = "numba" if USING_NUMBA else "numpy"


def warmup():
    """Force-compile (or no-op for numpy) every kernel on tiny inputs.

    Useful before timing runs so the first measured call does not pay JIT
    compilation cost.  Safe to call repeatedly.
    """
    import numpy as np

    theta = np.zeros(2 * 2 + 2 + 2 * 1 + 1)
    layout = np.array([[0, 4, 2, 2], [6, 8, 2, 1]], dtype=np.int64)
    ones = np.ones(1)
    X = np.zeros((2, 2))
    K.mlp_forward(theta, layout, X, K.OUT_LINEAR, ones)
    Y, acts = K.mlp_forward_acts(theta, layout, X, K.OUT_TANH_SCALED, ones)
    K.mlp_backward(theta, layout, X, acts, Y, K.OUT_TANH_SCALED, ones, np.ones((2, 1)))
    K.adam_update(theta, np.zeros_like(theta), np.zeros_like(theta),
                  np.zeros_like(theta), 1, 1e-3, 0.9, 0.999, 1e-8)
    K.blend(theta, np.zeros_like(theta), 0.5)
    empty_t = np.empty(0)
    empty_l = np.empty((0, 4), dtype=np.int64)
    tparams = np.zeros(2)
    phys_by_family = {
        0: np.array([15.0, 3.0, -0.1]),
        1: np.array([1.0, 0.1, 0.5, 9.8, 0.1, 0.1]),
        2: np.array([1.0, 1.0, 1.0, 1.0, 0.5, 0.5, 1.0, 1.0, 9.8, 0.1, 0.1]),
    }
    dims = {0: (2, 1, 3), 1: (4, 1, 5), 2: (4, 2, 6)}
    for env in range(6):
        fam = env // 2
        ds, da, do = dims[fam]
        phys = phys_by_family[fam]
        S = np.zeros((2, ds))
        A = np.zeros((2, da))
        K.dynamics(env, phys, S, A)
        K.step_reward(env, S, A, 0)
        K.terminal(env, S, tparams)
        K.observe(env, S)
        K.model_dynamics(env, 1, phys, empty_t, empty_l, S, A)
        K.model_step(env, 1, phys, empty_t, empty_l, S, A, 0.05, 1, 1)
        a_sizes = (do, 3, da)
        c_sizes = (do + da, 3, 1)
        a_theta, a_layout = _tiny_net(a_sizes)
        c_theta, c_layout = _tiny_net(c_sizes)
        a_scale = np.ones(da)
        seq = np.zeros((2, 2, da))
        K.score_sequences(
            env, 1, phys, empty_t, empty_l, S[0], seq, tparams, 0.05, 1, 1,
            0.99, 1.0, 1, 0, a_theta, a_layout, a_scale,
            c_theta, c_layout, c_theta, c_layout,
        )
        K.policy_sequences(
            env, 1, phys, empty_t, empty_l, a_theta, a_layout, a_scale,
            S[0], np.zeros((2, 2, da)), 0.05, 1, 1,
        )


def _tiny_net(sizes):
    import numpy as np

    n = 0
    rows = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        rows.append([n, n + a * b, a, b])
        n += a * b + b
    return np.zeros(n), np.array(rows, dtype=np.int64)
