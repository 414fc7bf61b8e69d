"""Numba-compiled twins of the reference kernels in ``_kernels_numpy``.

Same signatures, same semantics; the implementations favour explicit scalar
loops (plus BLAS ``np.dot`` for the dense layers) because that is what nopython
mode compiles best.  Cross-backend agreement is enforced by tests; tiny ULP
differences are allowed since libm and numpy's vector math may round
transcendentals differently.
"""

import math

import numpy as np
from numba import njit

PENDULUM = 0
PENDULUM_SWINGUP = 1
CARTPOLE = 2
CARTPOLE_SWINGUP = 3
ACROBOT = 4
ACROBOT_SWINGUP = 5

OUT_LINEAR = 0
OUT_TANH_SCALED = 1

_HALF_PI = 0.5 * math.pi
_TWO_PI = 2.0 * math.pi


@njit(cache=True)
def dynamics(env, phys, S, A):
    fam = env // 2
    B = S.shape[0]
    dS = np.empty_like(S)
    if fam == 0:
        c_g, c_i, c_fr = phys[0], phys[1], phys[2]
        for n in range(B):
            dS[n, 0] = S[n, 1]
            dS[n, 1] = c_g * math.sin(S[n, 0]) + c_i * A[n, 0] + c_fr * S[n, 1]
    elif fam == 1:
        m_c, m_p, l, g, fr_c, fr_p = phys[0], phys[1], phys[2], phys[3], phys[4], phys[5]
        m_tot = m_c + m_p
        for n in range(B):
            xd = S[n, 1]
            th = S[n, 2]
            thd = S[n, 3]
            sth = math.sin(th)
            cth = math.cos(th)
            sgn = 0.0
            if xd > 0.0:
                sgn = 1.0
            elif xd < 0.0:
                sgn = -1.0
            tmp = (A[n, 0] + m_p * l * thd * thd * sth - fr_c * sgn) / m_tot
            thdd = (g * sth - cth * tmp - fr_p * thd / (m_p * l)) / (
                l * (4.0 / 3.0 - m_p * cth * cth / m_tot)
            )
            dS[n, 0] = xd
            dS[n, 1] = tmp - m_p * l * thdd * cth / m_tot
            dS[n, 2] = thd
            dS[n, 3] = thdd
    else:
        m1, m2, l1 = phys[0], phys[1], phys[2]
        lc1, lc2 = phys[4], phys[5]
        I1, I2, g = phys[6], phys[7], phys[8]
        fr1, fr2 = phys[9], phys[10]
        da = A.shape[1]
        for n in range(B):
            th1 = S[n, 0]
            th2 = S[n, 1]
            d1d = S[n, 2]
            d2d = S[n, 3]
            s2 = math.sin(th2)
            c2 = math.cos(th2)
            if da == 1:
                a1 = -fr1 * d1d
                a2 = A[n, 0] - fr2 * d2d
            else:
                a1 = A[n, 0] - fr1 * d1d
                a2 = A[n, 1] - fr2 * d2d
            d1 = m1 * lc1 ** 2 + m2 * (l1 ** 2 + lc2 ** 2 + 2.0 * l1 * lc2 * c2) + I1 + I2
            d2 = m2 * (lc2 ** 2 + l1 * lc2 * c2) + I2
            phi2 = m2 * lc2 * g * math.cos(th1 + th2 - _HALF_PI)
            phi1 = (
                -m2 * l1 * lc2 * d2d * d2d * s2
                - 2.0 * m2 * l1 * lc2 * d2d * d1d * s2
                + (m1 * lc1 + m2 * l1) * g * math.cos(th1 - _HALF_PI)
                + phi2
            )
            thdd2 = (
                a2 + (d2 / d1) * (phi1 - a1) - m2 * l1 * lc2 * d1d * d1d * s2 - phi2
            ) / (m2 * lc2 ** 2 + I2 - d2 ** 2 / d1)
            thdd1 = (a1 - d2 * thdd2 - phi1) / d1
            dS[n, 0] = d1d
            dS[n, 1] = d2d
            dS[n, 2] = thdd1
            dS[n, 3] = thdd2
    return dS


@njit(cache=True)
def step_reward(env, S, A, rmode):
    B = S.shape[0]
    r = np.empty(B)
    if env == PENDULUM or env == PENDULUM_SWINGUP:
        for n in range(B):
            th = ((S[n, 0] + math.pi) % _TWO_PI) - math.pi
            r[n] = -(th * th) - 0.1 * S[n, 1] * S[n, 1] - 0.001 * A[n, 0] * A[n, 0]
    elif env == CARTPOLE:
        for n in range(B):
            r[n] = 1.0
    elif env == CARTPOLE_SWINGUP:
        for n in range(B):
            c = math.cos(S[n, 2]) - 1.0
            d2 = S[n, 0] * S[n, 0] + c * c
            r[n] = math.exp(d2) if rmode == 1 else math.exp(-d2)
    elif env == ACROBOT:
        for n in range(B):
            r[n] = -1.0
    else:
        for n in range(B):
            r[n] = -math.cos(S[n, 0]) - math.cos(S[n, 0] + S[n, 1])
    return r


@njit(cache=True)
def terminal(env, S, tparams):
    B = S.shape[0]
    out = np.zeros(B, np.bool_)
    if env == CARTPOLE:
        for n in range(B):
            out[n] = abs(S[n, 0]) > tparams[0] or abs(S[n, 2]) > tparams[1]
    elif env == ACROBOT:
        for n in range(B):
            out[n] = (-math.cos(S[n, 0]) - math.cos(S[n, 0] + S[n, 1])) > tparams[0]
    return out


@njit(cache=True)
def observe(env, S):
    fam = env // 2
    B = S.shape[0]
    if fam == 0:
        O = np.empty((B, 3))
        for n in range(B):
            O[n, 0] = math.cos(S[n, 0])
            O[n, 1] = math.sin(S[n, 0])
            O[n, 2] = S[n, 1]
    elif fam == 1:
        O = np.empty((B, 5))
        for n in range(B):
            O[n, 0] = S[n, 0]
            O[n, 1] = S[n, 1]
            O[n, 2] = math.cos(S[n, 2])
            O[n, 3] = math.sin(S[n, 2])
            O[n, 4] = S[n, 3]
    else:
        O = np.empty((B, 6))
        for n in range(B):
            O[n, 0] = math.cos(S[n, 0])
            O[n, 1] = math.sin(S[n, 0])
            O[n, 2] = math.cos(S[n, 1])
            O[n, 3] = math.sin(S[n, 1])
            O[n, 4] = S[n, 2]
            O[n, 5] = S[n, 3]
    return O


@njit(cache=True)
def mlp_forward(theta, layout, X, out_mode, out_scale):
    L = layout.shape[0]
    B = X.shape[0]
    H = X
    for i in range(L):
        w_off, b_off = layout[i, 0], layout[i, 1]
        n_in, n_out = layout[i, 2], layout[i, 3]
        W = theta[w_off : w_off + n_in * n_out].reshape(n_in, n_out)
        Z = np.dot(H, W)
        if i < L - 1:
            for n in range(B):
                for j in range(n_out):
                    z = Z[n, j] + theta[b_off + j]
                    Z[n, j] = z if z > 0.0 else 0.0
        elif out_mode == OUT_TANH_SCALED:
            for n in range(B):
                for j in range(n_out):
                    Z[n, j] = math.tanh(Z[n, j] + theta[b_off + j]) * out_scale[j]
        else:
            for n in range(B):
                for j in range(n_out):
                    Z[n, j] = Z[n, j] + theta[b_off + j]
        H = Z
    return H


@njit(cache=True)
def mlp_forward_acts(theta, layout, X, out_mode, out_scale):
    L = layout.shape[0]
    B = X.shape[0]
    n_hidden = 0
    for i in range(L - 1):
        n_hidden += layout[i, 3]
    acts = np.empty((B, n_hidden))
    H = X
    off = 0
    for i in range(L):
        w_off, b_off = layout[i, 0], layout[i, 1]
        n_in, n_out = layout[i, 2], layout[i, 3]
        W = theta[w_off : w_off + n_in * n_out].reshape(n_in, n_out)
        Z = np.dot(H, W)
        if i < L - 1:
            for n in range(B):
                for j in range(n_out):
                    z = Z[n, j] + theta[b_off + j]
                    z = z if z > 0.0 else 0.0
                    Z[n, j] = z
                    acts[n, off + j] = z
            off += n_out
        elif out_mode == OUT_TANH_SCALED:
            for n in range(B):
                for j in range(n_out):
                    Z[n, j] = math.tanh(Z[n, j] + theta[b_off + j]) * out_scale[j]
        else:
            for n in range(B):
                for j in range(n_out):
                    Z[n, j] = Z[n, j] + theta[b_off + j]
        H = Z
    return H, acts


@njit(cache=True)
def mlp_backward(theta, layout, X, acts, Y, out_mode, out_scale, dY):
    # .T of a C-contiguous array is F-contiguous, which BLAS consumes
    # directly, so the only copies here are the activation slices.
    L = layout.shape[0]
    B = X.shape[0]
    dtheta = np.zeros_like(theta)
    n_out_last = layout[L - 1, 3]
    G = np.empty((B, n_out_last))
    if out_mode == OUT_TANH_SCALED:
        for n in range(B):
            for j in range(n_out_last):
                t = Y[n, j] / out_scale[j]
                G[n, j] = dY[n, j] * out_scale[j] * (1.0 - t * t)
    else:
        for n in range(B):
            for j in range(n_out_last):
                G[n, j] = dY[n, j]
    off_end = acts.shape[1]
    for i in range(L - 1, -1, -1):
        w_off, b_off = layout[i, 0], layout[i, 1]
        n_in, n_out = layout[i, 2], layout[i, 3]
        W = theta[w_off : w_off + n_in * n_out].reshape(n_in, n_out)
        if i == 0:
            H_prev = np.ascontiguousarray(X)
        else:
            off_end -= n_in
            H_prev = np.ascontiguousarray(acts[:, off_end : off_end + n_in])
        dW = np.dot(H_prev.T, G)
        for a in range(n_in):
            base = w_off + a * n_out
            for b in range(n_out):
                dtheta[base + b] = dW[a, b]
        for j in range(n_out):
            s = 0.0
            for n in range(B):
                s += G[n, j]
            dtheta[b_off + j] = s
        G_in = np.dot(G, W.T)
        if i > 0:
            for n in range(B):
                for a in range(n_in):
                    if H_prev[n, a] <= 0.0:
                        G_in[n, a] = 0.0
        G = G_in
    return dtheta, G


@njit(cache=True)
def model_dynamics(env, use_prior, phys, rtheta, rlayout, S, A):
    if use_prior != 0:
        dS = dynamics(env, phys, S, A)
    else:
        dS = np.zeros_like(S)
    if rlayout.shape[0] > 0:
        B = S.shape[0]
        O = observe(env, S)
        do = O.shape[1]
        da = A.shape[1]
        X = np.empty((B, do + da))
        for n in range(B):
            for j in range(do):
                X[n, j] = O[n, j]
            for j in range(da):
                X[n, do + j] = A[n, j]
        R = mlp_forward(rtheta, rlayout, X, OUT_LINEAR, np.ones(1))
        for n in range(B):
            for d in range(dS.shape[1]):
                dS[n, d] += R[n, d]
    return dS


@njit(cache=True)
def model_step(env, use_prior, phys, rtheta, rlayout, S, A, dt, substeps, scheme):
    h = dt / substeps
    B, ds = S.shape
    cur = S.copy()
    for _ in range(substeps):
        k1 = model_dynamics(env, use_prior, phys, rtheta, rlayout, cur, A)
        if scheme == 0:
            for n in range(B):
                for d in range(ds):
                    cur[n, d] = cur[n, d] + h * k1[n, d]
        else:
            tmp = np.empty((B, ds))
            for n in range(B):
                for d in range(ds):
                    tmp[n, d] = cur[n, d] + 0.5 * h * k1[n, d]
            k2 = model_dynamics(env, use_prior, phys, rtheta, rlayout, tmp, A)
            for n in range(B):
                for d in range(ds):
                    tmp[n, d] = cur[n, d] + 0.5 * h * k2[n, d]
            k3 = model_dynamics(env, use_prior, phys, rtheta, rlayout, tmp, A)
            for n in range(B):
                for d in range(ds):
                    tmp[n, d] = cur[n, d] + h * k3[n, d]
            k4 = model_dynamics(env, use_prior, phys, rtheta, rlayout, tmp, A)
            for n in range(B):
                for d in range(ds):
                    cur[n, d] = cur[n, d] + (h / 6.0) * (
                        k1[n, d] + 2.0 * k2[n, d] + 2.0 * k3[n, d] + k4[n, d]
                    )
    return cur


@njit(cache=True)
def score_sequences(
    env, use_prior, phys, rtheta, rlayout, s0, seq, tparams, dt, substeps, scheme,
    gamma, q_weight, use_q, rmode,
    a_theta, a_layout, a_scale, c1_theta, c1_layout, c2_theta, c2_layout,
):
    N, H, da = seq.shape
    ds = s0.shape[0]
    scores = np.zeros(N)
    S = np.empty((N, ds))
    for n in range(N):
        for d in range(ds):
            S[n, d] = s0[d]
    alive = np.ones(N, np.bool_)
    early = env == CARTPOLE or env == ACROBOT
    disc = 1.0
    for t in range(H):
        A_t = np.ascontiguousarray(seq[:, t, :])
        r = step_reward(env, S, A_t, rmode)
        S2 = model_step(env, use_prior, phys, rtheta, rlayout, S, A_t, dt, substeps, scheme)
        if early:
            done = terminal(env, S2, tparams)
        else:
            done = np.zeros(N, np.bool_)
        for n in range(N):
            if not alive[n]:
                continue
            finite = True
            for d in range(ds):
                if not math.isfinite(S2[n, d]):
                    finite = False
                    break
            if not finite:
                scores[n] = -np.inf
                alive[n] = False
                continue
            if early and done[n]:
                rn = 0.0 if env == ACROBOT else r[n]
                scores[n] += disc * rn
                alive[n] = False
            else:
                scores[n] += disc * r[n]
                for d in range(ds):
                    S[n, d] = S2[n, d]
        disc *= gamma
    if use_q != 0:
        na = 0
        for n in range(N):
            if alive[n]:
                na += 1
        if na > 0:
            idx = np.empty(na, np.int64)
            k = 0
            for n in range(N):
                if alive[n]:
                    idx[k] = n
                    k += 1
            Sa = np.empty((na, ds))
            for k in range(na):
                for d in range(ds):
                    Sa[k, d] = S[idx[k], d]
            O = observe(env, Sa)
            do = O.shape[1]
            A_pi = mlp_forward(a_theta, a_layout, O, OUT_TANH_SCALED, a_scale)
            X = np.empty((na, do + da))
            for k in range(na):
                for j in range(do):
                    X[k, j] = O[k, j]
                for j in range(da):
                    X[k, do + j] = A_pi[k, j]
            ones = np.ones(1)
            q1 = mlp_forward(c1_theta, c1_layout, X, OUT_LINEAR, ones)
            q2 = mlp_forward(c2_theta, c2_layout, X, OUT_LINEAR, ones)
            for k in range(na):
                q = q1[k, 0] if q1[k, 0] < q2[k, 0] else q2[k, 0]
                scores[idx[k]] += q_weight * disc * q
    return scores


@njit(cache=True)
def policy_sequences(
    env, use_prior, phys, rtheta, rlayout, a_theta, a_layout, a_scale,
    s0, noise, dt, substeps, scheme,
):
    N, H, da = noise.shape
    ds = s0.shape[0]
    seq = np.empty((N, H, da))
    S = np.empty((N, ds))
    for n in range(N):
        for d in range(ds):
            S[n, d] = s0[d]
    for t in range(H):
        A_t = mlp_forward(a_theta, a_layout, observe(env, S), OUT_TANH_SCALED, a_scale)
        for n in range(N):
            for j in range(da):
                a = A_t[n, j] + noise[n, t, j]
                hi = a_scale[j]
                if a > hi:
                    a = hi
                elif a < -hi:
                    a = -hi
                A_t[n, j] = a
                seq[n, t, j] = a
        S = model_step(env, use_prior, phys, rtheta, rlayout, S, A_t, dt, substeps, scheme)
    return seq


@njit(cache=True)
def adam_update(theta, grad, m, v, t, lr, beta1, beta2, eps):
    a_t = lr * math.sqrt(1.0 - beta2 ** t) / (1.0 - beta1 ** t)
    for i in range(theta.shape[0]):
        g = grad[i]
        mi = beta1 * m[i] + (1.0 - beta1) * g
        vi = beta2 * v[i] + (1.0 - beta2) * g * g
        m[i] = mi
        v[i] = vi
        theta[i] -= a_t * mi / (math.sqrt(vi) + eps)


@njit(cache=True)
def blend(target, online, tau):
    for i in range(target.shape[0]):
        target[i] = (1.0 - tau) * target[i] + tau * online[i]
