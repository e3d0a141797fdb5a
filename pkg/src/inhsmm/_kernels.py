"""Compiled inner loops for the forward and Viterbi recursions.

All kernels take 0-based time-of-cycle indices ``tod``.  Forward kernels take
state densities ``dens`` of shape ``(T, N)`` scaled by ``exp(-logscale)`` per
row; Viterbi takes log densities.  Missing observations have density 1.
The transition from row ``k`` to row ``k + 1`` uses the matrix indexed by
``tod[k]``.
"""

import numpy as np
from numba import njit


def scaled_densities(logdens):
    """Row-wise ``exp(logdens - rowmax)`` and the row maxima."""
    mx = logdens.max(axis=1)
    return np.exp(logdens - mx[:, None]), mx


@njit(cache=True, fastmath={'reassoc', 'contract', 'arcp'})
def forward_structured(hazards, omega, lower, upper, state_of, dens, logscale, tod, delta):
    """Scaled forward pass exploiting the block structure; O(T M) work.

    Returns the log-likelihood, or ``-inf`` if the forward mass vanishes.
    """
    T = dens.shape[0]
    M = delta.shape[0]
    N = lower.shape[0]
    f = np.empty(M)
    alpha = np.empty(M)
    new = np.empty(M)
    exitmass = np.empty(N)
    for m in range(M):
        f[m] = dens[0, state_of[m]]
    mx = logscale[0]
    s = 0.0
    for m in range(M):
        alpha[m] = delta[m] * f[m]
        s += alpha[m]
    if s <= 0.0:
        return -np.inf
    ll = np.log(s) + mx
    for m in range(M):
        alpha[m] /= s
    for k in range(1, T):
        t = tod[k - 1]
        for i in range(N):
            lo = lower[i]
            up = upper[i]
            new[lo] = 0.0
            e = 0.0
            for m in range(lo, up):
                a = alpha[m]
                h = hazards[t, m]
                e += a * h
                new[m + 1] = a - a * h
            a = alpha[up]
            h = hazards[t, up]
            e += a * h
            new[up] += a - a * h
            exitmass[i] = e
        for j in range(N):
            acc = 0.0
            for i in range(N):
                if i != j:
                    acc += exitmass[i] * omega[t, i, j]
            new[lower[j]] += acc
        for m in range(M):
            f[m] = dens[k, state_of[m]]
        mx = logscale[k]
        s = 0.0
        for m in range(M):
            alpha[m] = new[m] * f[m]
            s += alpha[m]
        if s <= 0.0:
            return -np.inf
        ll += np.log(s) + mx
        inv = 1.0 / s
        for m in range(M):
            alpha[m] *= inv
    return ll


@njit(cache=True)
def forward_dense(gammas, state_of, dens, logscale, tod, delta):
    """Scaled forward pass with dense matrices ``gammas[t]``; O(T M^2) work."""
    T = dens.shape[0]
    M = delta.shape[0]
    f = np.empty(M)
    alpha = np.empty(M)
    new = np.empty(M)
    for m in range(M):
        f[m] = dens[0, state_of[m]]
    mx = logscale[0]
    s = 0.0
    for m in range(M):
        alpha[m] = delta[m] * f[m]
        s += alpha[m]
    if s <= 0.0:
        return -np.inf
    ll = np.log(s) + mx
    alpha /= s
    for k in range(1, T):
        G = gammas[tod[k - 1]]
        for m in range(M):
            new[m] = 0.0
        for l in range(M):
            a = alpha[l]
            if a != 0.0:
                for m in range(M):
                    new[m] += a * G[l, m]
        for m in range(M):
            f[m] = dens[k, state_of[m]]
        mx = logscale[k]
        s = 0.0
        for m in range(M):
            alpha[m] = new[m] * f[m]
            s += alpha[m]
        if s <= 0.0:
            return -np.inf
        ll += np.log(s) + mx
        alpha /= s
    return ll


@njit(cache=True)
def viterbi_dense(log_gammas, state_of, logdens, tod, log_delta):
    """Max-product recursion in log space; ties go to the lower state index."""
    T = logdens.shape[0]
    M = log_delta.shape[0]
    psi = np.empty((T, M), dtype=np.int32)
    score = np.empty(M)
    new = np.empty(M)
    for m in range(M):
        score[m] = log_delta[m] + logdens[0, state_of[m]]
    for k in range(1, T):
        LG = log_gammas[tod[k - 1]]
        for m in range(M):
            best = -np.inf
            arg = 0
            for l in range(M):
                v = score[l] + LG[l, m]
                if v > best:
                    best = v
                    arg = l
            new[m] = best + logdens[k, state_of[m]]
            psi[k, m] = arg
        for m in range(M):
            score[m] = new[m]
    path = np.empty(T, dtype=np.int64)
    best = -np.inf
    arg = 0
    for m in range(M):
        if score[m] > best:
            best = score[m]
            arg = m
    path[T - 1] = arg
    for k in range(T - 1, 0, -1):
        path[k - 1] = psi[k, path[k]]
    return path, best
