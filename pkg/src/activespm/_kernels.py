"""Compiled inner loops for the HMM recursions."""
import numpy as np
from numba import njit


@njit(cache=True)
def forward_backward(log_b, allowed, initial, transition):
    """Scaled, label-constrained forward-backward.

    Emission log-densities are shifted per row by their maximum over the
    allowed states before exponentiation; the shift is folded back into the
    returned log scale factors, so ``log_scale.sum()`` is the log-likelihood.

    Returns ``(gamma, xi_sum, log_scale, fail_t)``; ``fail_t`` is -1 on
    success, otherwise the 0-based index where the forward mass vanished.
    """
    T, N = log_b.shape
    gamma = np.zeros((T, N))
    xi_sum = np.zeros((N, N))
    log_scale = np.zeros(T)
    scale = np.ones(T)
    emis = np.zeros((T, N))
    alpha = np.zeros((T, N))
    beta = np.zeros((T, N))

    for t in range(T):
        m = -np.inf
        for i in range(N):
            if allowed[t, i] and log_b[t, i] > m:
                m = log_b[t, i]
        if m == -np.inf:
            return gamma, xi_sum, log_scale, t
        for i in range(N):
            if allowed[t, i]:
                emis[t, i] = np.exp(log_b[t, i] - m)
        log_scale[t] = m

    c = 0.0
    for i in range(N):
        alpha[0, i] = initial[i] * emis[0, i]
        c += alpha[0, i]
    if not c > 0.0:
        return gamma, xi_sum, log_scale, 0
    for i in range(N):
        alpha[0, i] /= c
    scale[0] = c
    log_scale[0] += np.log(c)

    for t in range(1, T):
        c = 0.0
        for j in range(N):
            if emis[t, j] > 0.0:
                s = 0.0
                for k in range(N):
                    s += alpha[t - 1, k] * transition[k, j]
                alpha[t, j] = s * emis[t, j]
                c += alpha[t, j]
        if not c > 0.0:
            return gamma, xi_sum, log_scale, t
        for j in range(N):
            alpha[t, j] /= c
        scale[t] = c
        log_scale[t] += np.log(c)

    for i in range(N):
        beta[T - 1, i] = 1.0
    for t in range(T - 2, -1, -1):
        for i in range(N):
            if allowed[t, i]:
                s = 0.0
                for j in range(N):
                    s += transition[i, j] * emis[t + 1, j] * beta[t + 1, j]
                beta[t, i] = s / scale[t + 1]

    for t in range(T):
        g = 0.0
        for i in range(N):
            gamma[t, i] = alpha[t, i] * beta[t, i]
            g += gamma[t, i]
        for i in range(N):
            gamma[t, i] /= g

    for t in range(T - 1):
        inv = 1.0 / scale[t + 1]
        for i in range(N):
            a = alpha[t, i]
            if a > 0.0:
                for j in range(N):
                    xi_sum[i, j] += a * transition[i, j] * emis[t + 1, j] * beta[t + 1, j] * inv
    return gamma, xi_sum, log_scale, -1


@njit(cache=True)
def filter_last(log_b, initial, transition):
    """Filtered state posterior at the final step of each sequence.

    ``log_b`` has shape (M, L, N); returns an (M, N) array.
    """
    M, L, N = log_b.shape
    out = np.zeros((M, N))
    alpha = np.zeros(N)
    nxt = np.zeros(N)
    em = np.zeros(N)
    for m in range(M):
        mx = -np.inf
        for i in range(N):
            if log_b[m, 0, i] > mx:
                mx = log_b[m, 0, i]
        c = 0.0
        for i in range(N):
            alpha[i] = initial[i] * np.exp(log_b[m, 0, i] - mx)
            c += alpha[i]
        for i in range(N):
            alpha[i] /= c
        for t in range(1, L):
            mx = -np.inf
            for i in range(N):
                if log_b[m, t, i] > mx:
                    mx = log_b[m, t, i]
            for i in range(N):
                em[i] = np.exp(log_b[m, t, i] - mx)
            c = 0.0
            for j in range(N):
                s = 0.0
                for k in range(N):
                    s += alpha[k] * transition[k, j]
                nxt[j] = s * em[j]
                c += nxt[j]
            if c > 0.0:
                for j in range(N):
                    alpha[j] = nxt[j] / c
        for i in range(N):
            out[m, i] = alpha[i]
    return out
