# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled accumulation kernels for the propensity fits."""

from libc.math cimport exp, log1p
from libc.stdlib cimport calloc, free

import numpy as np


def logistic_accumulate(
    const double[:, ::1] X,
    const double[::1] theta,
    const double[::1] a,
    const double[::1] b,
    bint derivs=True,
):
    """Sum ``a*log(pi) + b*log(1-pi)`` over rows, with gradient and negative Hessian.

    Returns ``(loglik, score, neg_hessian)``; the last two are ``None`` when
    ``derivs`` is false. Rows are visited in order, so results are reproducible.
    """
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t p = X.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double eta, e, sp, pi, q, g, h, ai, bi, xj, ll = 0.0
    cdef const double* row
    cdef double* th
    cdef double* s
    cdef double* H

    if theta.shape[0] != p or a.shape[0] != n or b.shape[0] != n:
        raise ValueError("shape mismatch in logistic_accumulate")

    th = <double*> calloc(p, sizeof(double))
    s = <double*> calloc(p, sizeof(double))
    H = <double*> calloc(p * p, sizeof(double))
    if th == NULL or s == NULL or H == NULL:
        free(th); free(s); free(H)
        raise MemoryError()
    for j in range(p):
        th[j] = theta[j]

    with nogil:
        for i in range(n):
            row = &X[i, 0]
            eta = 0.0
            for j in range(p):
                eta = eta + row[j] * th[j]
            # one exp per row: e = exp(-|eta|) gives softplus, pi and 1 - pi
            if eta >= 0:
                e = exp(-eta)
                sp = eta + log1p(e)
            else:
                e = exp(eta)
                sp = log1p(e)
            ai = a[i]
            bi = b[i]
            ll = ll + ai * (eta - sp) - bi * sp
            if derivs:
                if eta >= 0:
                    pi = 1.0 / (1.0 + e)
                    q = e * pi
                else:
                    q = 1.0 / (1.0 + e)
                    pi = e * q
                g = ai * q - bi * pi
                h = (ai + bi) * pi * q
                for j in range(p):
                    xj = row[j]
                    s[j] = s[j] + g * xj
                    if h != 0.0:
                        xj = h * xj
                        for k in range(j, p):
                            H[j * p + k] = H[j * p + k] + xj * row[k]

    score = neg_hess = None
    if derivs:
        score = np.empty(p)
        neg_hess = np.empty((p, p))
        for j in range(p):
            score[j] = s[j]
            for k in range(j, p):
                neg_hess[j, k] = H[j * p + k]
                neg_hess[k, j] = H[j * p + k]
    free(th); free(s); free(H)
    return ll, score, neg_hess
