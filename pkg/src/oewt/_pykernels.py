"""Numpy versions of the compiled kernels, used when the extension is unavailable."""

import numpy as np
from scipy.special import expit


def logistic_accumulate(X, theta, a, b, derivs=True):
    """Sum ``a*log(pi) + b*log(1-pi)`` over rows, with gradient and negative Hessian."""
    eta = X @ theta
    sp = np.logaddexp(0.0, eta)
    ll = float(np.sum(a * (eta - sp) - b * sp))
    if not derivs:
        return ll, None, None
    pi = expit(eta)
    q = expit(-eta)
    g = a * q - b * pi
    h = (a + b) * pi * q
    score = X.T @ g
    neg_hess = (X * h[:, None]).T @ X
    neg_hess = 0.5 * (neg_hess + neg_hess.T)
    return ll, score, neg_hess
