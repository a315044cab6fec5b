"""Fortet-Mourier distance between finitely supported measures.

On a finite set the bounded-Lipschitz dual ball ``{|f| <= 1, |f|_Lip <= 1}``
gives the same supremum as the Kantorovich problem for the truncated metric
``min(rho_c, 2)``, so the distance is solved as an optimal transport
problem: an assignment for equal-size uniform measures, a transportation
LP otherwise.
"""
from __future__ import annotations

import numpy as np
from scipy import optimize, sparse

from .errors import PdmpError, SupportTooLarge
from .model import norm

SUPPORT_CAP = 2000


def cost_matrix(y1, i1, y2, i2, c):
    """Pairwise ``min(rho_c, 2)`` between two atom lists."""
    dy = norm(y1[:, None, :] - y2[None, :, :])
    return np.minimum(dy + c * (i1[:, None] != i2[None, :]), 2.0)


def _check_size(mu1, mu2, cap):
    n = len(mu1) + len(mu2)
    if n > cap:
        raise SupportTooLarge(f"combined support {n} exceeds cap {cap}; subsample first")


def _uniform(mu):
    return np.allclose(mu.w, 1.0 / len(mu), rtol=0, atol=1e-15)


def transport_cost(cost, w1, w2):
    """Optimal transport cost between weights ``w1`` and ``w2`` under ``cost``."""
    n1, n2 = cost.shape
    rows = sparse.kron(sparse.eye(n1), np.ones((1, n2)))
    cols = sparse.kron(np.ones((1, n1)), sparse.eye(n2))
    a_eq = sparse.vstack([rows, cols]).tocsr()
    b_eq = np.concatenate([w1, w2])
    res = optimize.linprog(cost.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status != 0:
        raise PdmpError(f"transport LP failed: {res.message}")
    return float(res.fun)


def fortet_mourier(mu1, mu2, c, cap=SUPPORT_CAP):
    """``sup{|<f, mu1 - mu2>| : ||f||_BL <= 1}`` for two empirical measures."""
    _check_size(mu1, mu2, cap)
    cost = cost_matrix(mu1.y, mu1.i, mu2.y, mu2.i, c)
    if len(mu1) == len(mu2) and _uniform(mu1) and _uniform(mu2):
        r, k = optimize.linear_sum_assignment(cost)
        val = float(cost[r, k].mean())
    else:
        val = transport_cost(cost, mu1.w, mu2.w)
    return max(val, 0.0)


def fortet_mourier_dual(mu1, mu2, c, cap=400):
    """The same distance from the test-function side.

    Maximises ``<f, mu1 - mu2>`` over values of ``f`` on the joint support
    subject to ``|f_u| <= 1`` and ``|f_u - f_v| <= rho_c(u, v)``, for both
    signs. Quadratic in the support size; meant for small measures.
    """
    _check_size(mu1, mu2, cap)
    y = np.vstack([mu1.y, mu2.y])
    i = np.concatenate([mu1.i, mu2.i])
    d = np.concatenate([mu1.w, -mu2.w])
    n = len(d)
    rho = norm(y[:, None, :] - y[None, :, :]) + c * (i[:, None] != i[None, :])
    u, v = np.nonzero(~np.eye(n, dtype=bool))
    a = sparse.csr_matrix((np.r_[np.ones(len(u)), -np.ones(len(u))],
                           (np.r_[np.arange(len(u)), np.arange(len(u))], np.r_[u, v])),
                          shape=(len(u), n))
    best = 0.0
    for sign in (1.0, -1.0):
        res = optimize.linprog(-sign * d, A_ub=a, b_ub=rho[u, v], bounds=(-1, 1), method="highs")
        if res.status != 0:
            raise PdmpError(f"dual LP failed: {res.message}")
        best = max(best, -float(res.fun))
    return best
