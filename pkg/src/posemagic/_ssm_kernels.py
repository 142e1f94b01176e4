"""Compiled recurrence kernels for the fused selective SSM (sequential order).

The discretized coefficients a_bar = exp(delta*A) and q = expm1(delta*A)/A are
computed with vectorized numpy beforehand; the loops here only do arithmetic.

Shapes: x, delta, gy: (M, L, D); A: (D, n); B, C: (M, L, n);
a_bar, q, h: (M, L, D, n).
"""

import numpy as np
from numba import njit


@njit(cache=True, error_model="numpy")
def ssm_fused_forward(x, a_bar, q, B, C):
    M, L, D, n = a_bar.shape
    h = np.empty((M, L, D, n))
    y = np.empty((M, L, D))
    state = np.empty((D, n))
    for m in range(M):
        state[:] = 0.0
        for t in range(L):
            for d in range(D):
                xv = x[m, t, d]
                acc = 0.0
                for i in range(n):
                    s = a_bar[m, t, d, i] * state[d, i] + q[m, t, d, i] * B[m, t, i] * xv
                    state[d, i] = s
                    h[m, t, d, i] = s
                    acc += C[m, t, i] * s
                y[m, t, d] = acc
    return y, h


@njit(cache=True, error_model="numpy")
def ssm_fused_backward(gy, x, delta, A, B, C, h, a_bar, q):
    M, L, D, n = a_bar.shape
    gx = np.empty((M, L, D))
    gdelta = np.empty((M, L, D))
    gA = np.zeros((D, n))
    gB = np.zeros((M, L, n))
    gC = np.zeros((M, L, n))
    lam = np.empty((D, n))
    a_next = np.empty((D, n))
    for m in range(M):
        lam[:] = 0.0
        a_next[:] = 0.0
        for t in range(L - 1, -1, -1):
            for d in range(D):
                g = gy[m, t, d]
                dt = delta[m, t, d]
                xv = x[m, t, d]
                gx_acc = 0.0
                gd_acc = 0.0
                for i in range(n):
                    a_i = A[d, i]
                    lam_i = g * C[m, t, i] + a_next[d, i] * lam[d, i]
                    lam[d, i] = lam_i
                    gC[m, t, i] += g * h[m, t, d, i]
                    abar = a_bar[m, t, d, i]
                    qi = q[m, t, d, i]
                    b = B[m, t, i]
                    h_prev = h[m, t - 1, d, i] if t > 0 else 0.0
                    gx_acc += lam_i * qi * b
                    tt = lam_i * xv
                    gB[m, t, i] += tt * qi
                    gq = tt * b
                    g_dA = lam_i * h_prev * abar + gq * abar / a_i
                    gd_acc += g_dA * a_i
                    gA[d, i] += g_dA * dt - gq * qi / a_i
                    a_next[d, i] = abar
                gx[m, t, d] = gx_acc
                gdelta[m, t, d] = gd_acc
    return gx, gdelta, gA, gB, gC
