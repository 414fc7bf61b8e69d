"""Pure-numpy reference kernels.

Every function here has an njit twin in ``_kernels_numba`` with the same
signature and the same semantics; ``backend`` picks one of the two modules at
import time.  Keep this file free of anything but numpy so it stays a usable
fallback on hosts where numba is unavailable.

Conventions shared by both backends:

* states ``S`` are ``(B, ds)`` float64, actions ``A`` are ``(B, da)`` float64
* ``env`` is an integer code (see ``envs``); ``env // 2`` selects the
  dynamics family (pendulum / cartpole / acrobot)
* ``phys`` is the flat physical-constant vector of the family (friction
  slots included; pass zeros there for a frictionless prior)
* MLP parameters are a flat float64 ``theta`` plus an int64 ``layout`` of
  shape ``(L, 4)`` whose rows are ``(w_offset, b_offset, n_in, n_out)``
* no kernel draws random numbers; callers pass noise in explicitly
"""

import numpy as np

# environment codes (order matters: code // 2 is the dynamics family)
PENDULUM = 0
PENDULUM_SWINGUP = 1
CARTPOLE = 2
CARTPOLE_SWINGUP = 3
ACROBOT = 4
ACROBOT_SWINGUP = 5

# MLP output modes
OUT_LINEAR = 0
OUT_TANH_SCALED = 1

_HALF_PI = 0.5 * np.pi


def dynamics(env, phys, S, A):
    """Time derivative of the true (friction-augmented) dynamics, batched."""
    fam = env // 2
    dS = np.empty_like(S)
    if fam == 0:
        # phys = [c_g, c_i, c_fr]; state (theta, theta_dot), theta = 0 upright
        th, thd = S[:, 0], S[:, 1]
        dS[:, 0] = thd
        dS[:, 1] = phys[0] * np.sin(th) + phys[1] * A[:, 0] + phys[2] * thd
    elif fam == 1:
        # phys = [m_c, m_p, l, g, fr_c, fr_p]; state (x, x_dot, theta, theta_dot)
        m_c, m_p, l, g, fr_c, fr_p = phys[0], phys[1], phys[2], phys[3], phys[4], phys[5]
        m_tot = m_c + m_p
        xd, th, thd = S[:, 1], S[:, 2], S[:, 3]
        sth, cth = np.sin(th), np.cos(th)
        sgn = np.sign(xd)
        tmp = (A[:, 0] + m_p * l * thd * thd * sth - fr_c * sgn) / m_tot
        thdd = (g * sth - cth * tmp - fr_p * thd / (m_p * l)) / (
            l * (4.0 / 3.0 - m_p * cth * cth / m_tot)
        )
        dS[:, 0] = xd
        dS[:, 1] = tmp - m_p * l * thdd * cth / m_tot
        dS[:, 2] = thd
        dS[:, 3] = thdd
    else:
        # phys = [m1, m2, l1, l2, lc1, lc2, I1, I2, g, fr1, fr2]
        # state (th1, th2, th1_dot, th2_dot), th1 = 0 hanging down
        # a 1-dim action drives joint 2 only; a 2-dim action drives both
        m1, m2, l1 = phys[0], phys[1], phys[2]
        lc1, lc2 = phys[4], phys[5]
        I1, I2, g = phys[6], phys[7], phys[8]
        th1, th2, d1d, d2d = S[:, 0], S[:, 1], S[:, 2], S[:, 3]
        s2, c2 = np.sin(th2), np.cos(th2)
        if A.shape[1] == 1:
            a1 = -phys[9] * d1d
            a2 = A[:, 0] - phys[10] * d2d
        else:
            a1 = A[:, 0] - phys[9] * d1d
            a2 = A[:, 1] - phys[10] * d2d
        d1 = m1 * lc1 ** 2 + m2 * (l1 ** 2 + lc2 ** 2 + 2.0 * l1 * lc2 * c2) + I1 + I2
        d2 = m2 * (lc2 ** 2 + l1 * lc2 * c2) + I2
        phi2 = m2 * lc2 * g * np.cos(th1 + th2 - _HALF_PI)
        phi1 = (
            -m2 * l1 * lc2 * d2d * d2d * s2
            - 2.0 * m2 * l1 * lc2 * d2d * d1d * s2
            + (m1 * lc1 + m2 * l1) * g * np.cos(th1 - _HALF_PI)
            + phi2
        )
        thdd2 = (
            a2 + (d2 / d1) * (phi1 - a1) - m2 * l1 * lc2 * d1d * d1d * s2 - phi2
        ) / (m2 * lc2 ** 2 + I2 - d2 ** 2 / d1)
        thdd1 = (a1 - d2 * thdd2 - phi1) / d1
        dS[:, 0] = d1d
        dS[:, 1] = d2d
        dS[:, 2] = thdd1
        dS[:, 3] = thdd2
    return dS


def step_reward(env, S, A, rmode):
    """Per-step reward as a function of the pre-step state and the action.

    ``rmode`` only affects the cartpole swing-up task: 0 keeps the distance
    penalty ``exp(-(x^2 + (cos(theta) - 1)^2))``, 1 uses the raw exponential
    of the positive squared distance instead.  Goal-dependent terminal
    overrides (acrobot reaching height) are applied by the rollout loops,
    not here.
    """
    B = S.shape[0]
    if env == PENDULUM or env == PENDULUM_SWINGUP:
        th = np.remainder(S[:, 0] + np.pi, 2.0 * np.pi) - np.pi
        return -(th * th) - 0.1 * S[:, 1] ** 2 - 0.001 * A[:, 0] ** 2
    if env == CARTPOLE:
        return np.ones(B)
    if env == CARTPOLE_SWINGUP:
        d2 = S[:, 0] ** 2 + (np.cos(S[:, 2]) - 1.0) ** 2
        return np.exp(d2) if rmode == 1 else np.exp(-d2)
    if env == ACROBOT:
        return np.full(B, -1.0)
    return -np.cos(S[:, 0]) - np.cos(S[:, 0] + S[:, 1])


def terminal(env, S, tparams):
    """Early-termination predicate; all-False for tasks that only truncate.

    ``tparams`` holds the thresholds: cartpole ``(x_limit, theta_limit)``,
    acrobot ``(target_height, unused)``.
    """
    B = S.shape[0]
    if env == CARTPOLE:
        return (np.abs(S[:, 0]) > tparams[0]) | (np.abs(S[:, 2]) > tparams[1])
    if env == ACROBOT:
        return (-np.cos(S[:, 0]) - np.cos(S[:, 0] + S[:, 1])) > tparams[0]
    return np.zeros(B, np.bool_)


def observe(env, S):
    """Trig-expanded observation vector for each state row."""
    fam = env // 2
    B = S.shape[0]
    if fam == 0:
        O = np.empty((B, 3))
        O[:, 0] = np.cos(S[:, 0])
        O[:, 1] = np.sin(S[:, 0])
        O[:, 2] = S[:, 1]
    elif fam == 1:
        O = np.empty((B, 5))
        O[:, 0] = S[:, 0]
        O[:, 1] = S[:, 1]
        O[:, 2] = np.cos(S[:, 2])
        O[:, 3] = np.sin(S[:, 2])
        O[:, 4] = S[:, 3]
    else:
        O = np.empty((B, 6))
        O[:, 0] = np.cos(S[:, 0])
        O[:, 1] = np.sin(S[:, 0])
        O[:, 2] = np.cos(S[:, 1])
        O[:, 3] = np.sin(S[:, 1])
        O[:, 4] = S[:, 2]
        O[:, 5] = S[:, 3]
    return O


def mlp_forward(theta, layout, X, out_mode, out_scale):
    """Forward pass of a flat-parameter ReLU MLP; batched over rows of X."""
    L = layout.shape[0]
    H = X
    for i in range(L):
        w_off, b_off, n_in, n_out = layout[i, 0], layout[i, 1], layout[i, 2], layout[i, 3]
        W = theta[w_off : w_off + n_in * n_out].reshape(n_in, n_out)
        Z = np.dot(H, W) + theta[b_off : b_off + n_out]
        if i < L - 1:
            H = np.maximum(Z, 0.0)
        elif out_mode == OUT_TANH_SCALED:
            H = np.tanh(Z) * out_scale
        else:
            H = Z
    return H


def mlp_forward_acts(theta, layout, X, out_mode, out_scale):
    """Forward pass that also returns hidden post-activations for backward.

    The activations of all hidden layers are packed side by side into one
    ``(B, sum_hidden)`` buffer in layer order.
    """
    L = layout.shape[0]
    B = X.shape[0]
    n_hidden = 0
    for i in range(L - 1):
        n_hidden += layout[i, 3]
    acts = np.empty((B, n_hidden))
    H = X
    off = 0
    for i in range(L):
        w_off, b_off, n_in, n_out = layout[i, 0], layout[i, 1], layout[i, 2], layout[i, 3]
        W = theta[w_off : w_off + n_in * n_out].reshape(n_in, n_out)
        Z = np.dot(H, W) + theta[b_off : b_off + n_out]
        if i < L - 1:
            H = np.maximum(Z, 0.0)
            acts[:, off : off + n_out] = H
            off += n_out
        elif out_mode == OUT_TANH_SCALED:
            H = np.tanh(Z) * out_scale
        else:
            H = Z
    return H, acts


def mlp_backward(theta, layout, X, acts, Y, out_mode, out_scale, dY):
    """Reverse pass: gradients of sum(dY * Y) w.r.t. theta and X.

    ``acts`` and ``Y`` must come from ``mlp_forward_acts`` on the same
    inputs.  Parameter gradients are summed over the batch; the caller owns
    any 1/B scaling.
    """
    L = layout.shape[0]
    dtheta = np.zeros_like(theta)
    if out_mode == OUT_TANH_SCALED:
        T = Y / out_scale
        G = dY * out_scale * (1.0 - T * T)
    else:
        G = dY
    off_end = acts.shape[1]
    for i in range(L - 1, -1, -1):
        w_off, b_off, n_in, n_out = layout[i, 0], layout[i, 1], layout[i, 2], layout[i, 3]
        W = theta[w_off : w_off + n_in * n_out].reshape(n_in, n_out)
        if i == 0:
            H_prev = X
        else:
            off_end -= n_in
            H_prev = acts[:, off_end : off_end + n_in]
        dtheta[w_off : w_off + n_in * n_out] = np.dot(H_prev.T, G).reshape(n_in * n_out)
        dtheta[b_off : b_off + n_out] = G.sum(axis=0)
        G = np.dot(G, W.T)
        if i > 0:
            G = G * (H_prev > 0.0)
    return dtheta, G


def model_dynamics(env, use_prior, phys, rtheta, rlayout, S, A):
    """Learned-model derivative: optional analytic prior plus MLP residual.

    The residual network maps ``observe(S) ++ A`` to a correction on the
    state derivative.  ``rlayout`` with zero rows disables the residual,
    ``use_prior == 0`` disables the prior (pure data-driven model).
    """
    if use_prior != 0:
        dS = dynamics(env, phys, S, A)
    else:
        dS = np.zeros_like(S)
    if rlayout.shape[0] > 0:
        X = np.concatenate((observe(env, S), A), axis=1)
        dS = dS + mlp_forward(rtheta, rlayout, X, OUT_LINEAR, np.ones(1))
    return dS


def model_step(env, use_prior, phys, rtheta, rlayout, S, A, dt, substeps, scheme):
    """Integrate the learned model over one control interval (ZOH action).

    ``scheme`` 0 is explicit Euler, 1 is classic RK4; ``substeps`` splits
    ``dt`` evenly.  The same routine serves the ground truth by passing the
    full friction-augmented ``phys`` and an empty residual.
    """
    h = dt / substeps
    for _ in range(substeps):
        k1 = model_dynamics(env, use_prior, phys, rtheta, rlayout, S, A)
        if scheme == 0:
            S = S + h * k1
        else:
            k2 = model_dynamics(env, use_prior, phys, rtheta, rlayout, S + 0.5 * h * k1, A)
            k3 = model_dynamics(env, use_prior, phys, rtheta, rlayout, S + 0.5 * h * k2, A)
            k4 = model_dynamics(env, use_prior, phys, rtheta, rlayout, S + h * k3, A)
            S = S + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return S


def score_sequences(
    env, use_prior, phys, rtheta, rlayout, s0, seq, tparams, dt, substeps, scheme,
    gamma, q_weight, use_q, rmode,
    a_theta, a_layout, a_scale, c1_theta, c1_layout, c2_theta, c2_layout,
):
    """Score candidate action sequences by imagined return from state s0.

    Each of the N sequences in ``seq`` (shape ``(N, H, da)``) is rolled out
    through the model for H steps; the score is the discounted reward sum,
    with terminal handling matching the real tasks (terminated candidates
    stop accumulating; the acrobot goal step contributes 0).  A rollout that
    leaves the finite range scores -inf.  With ``use_q`` the discounted twin-
    min critic value at the surviving terminal state, under the actor's
    action, is added with weight ``q_weight``.
    """
    N, H, _ = seq.shape
    scores = np.zeros(N)
    S = np.repeat(s0[None, :], N, axis=0)
    alive = np.ones(N, np.bool_)
    early = env == CARTPOLE or env == ACROBOT
    disc = 1.0
    for t in range(H):
        A_t = np.ascontiguousarray(seq[:, t, :])
        r = step_reward(env, S, A_t, rmode)
        S2 = model_step(env, use_prior, phys, rtheta, rlayout, S, A_t, dt, substeps, scheme)
        blown = alive & ~np.isfinite(S2).all(axis=1)
        scores[blown] = -np.inf
        alive &= ~blown
        if early:
            done = alive & terminal(env, S2, tparams)
            if env == ACROBOT:
                r = np.where(done, 0.0, r)
            scores[alive] += disc * r[alive]
            alive &= ~done
        else:
            scores[alive] += disc * r[alive]
        S = np.where(alive[:, None], S2, S)
        disc *= gamma
    if use_q != 0 and alive.any():
        idx = np.nonzero(alive)[0]
        O = observe(env, S[idx])
        A_pi = mlp_forward(a_theta, a_layout, O, OUT_TANH_SCALED, a_scale)
        X = np.concatenate((O, A_pi), axis=1)
        q1 = mlp_forward(c1_theta, c1_layout, X, OUT_LINEAR, np.ones(1))[:, 0]
        q2 = mlp_forward(c2_theta, c2_layout, X, OUT_LINEAR, np.ones(1))[:, 0]
        scores[idx] += q_weight * disc * np.minimum(q1, q2)
    return scores


def policy_sequences(
    env, use_prior, phys, rtheta, rlayout, a_theta, a_layout, a_scale,
    s0, noise, dt, substeps, scheme,
):
    """Roll the actor through the model to propose action sequences.

    ``noise`` has shape ``(N, H, da)`` and is added to the actor output at
    every step before clipping to the action bounds; row 0 of the noise is
    conventionally zero so the first candidate is the noiseless policy
    rollout.
    """
    N, H, da = noise.shape
    seq = np.empty((N, H, da))
    S = np.repeat(s0[None, :], N, axis=0)
    for t in range(H):
        A_t = mlp_forward(a_theta, a_layout, observe(env, S), OUT_TANH_SCALED, a_scale)
        A_t = np.clip(A_t + noise[:, t, :], -a_scale, a_scale)
        seq[:, t, :] = A_t
        S = model_step(env, use_prior, phys, rtheta, rlayout, S, A_t, dt, substeps, scheme)
    return seq


def adam_update(theta, grad, m, v, t, lr, beta1, beta2, eps):
    """One in-place Adam step with bias correction (t is 1-based)."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    a_t = lr * np.sqrt(1.0 - beta2 ** t) / (1.0 - beta1 ** t)
    theta -= a_t * m / (np.sqrt(v) + eps)


def blend(target, online, tau):
    """Polyak averaging, in place: target <- (1 - tau) * target + tau * online."""
    target *= 1.0 - tau
    target += tau * online
