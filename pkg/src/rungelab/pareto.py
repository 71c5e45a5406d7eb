"""Minimum-norm approximation on a diagonal (singular) basis.

With singular values ``sigma`` and target coefficients ``beta``, the
approximation ``sum x_j sigma_j psi_j`` of ``h = sum beta_j psi_j`` costs
``||x||`` and misses ``h`` by ``||sigma x - beta||`` plus any part of ``h``
outside the retained span (``unresolved``).
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import brentq

from .fitting import FitResult, central_mask, fit

TIE_RTOL = 1e-9

def cutoff_cost(sigma: np.ndarray, beta: np.ndarray, budget: float, unresolved: float = 0.0):
    """Cheapest spectral cutoff meeting an error budget.

    Returns ``(cost, alpha, error, kept, saturated)``.  Keeping the top ``k``
    modes costs ``sqrt(sum_{j<k} (beta_j/sigma_j)^2)`` and leaves error
    ``sqrt(sum_{j>=k} beta_j^2 + unresolved^2)``.  A cut never splits a
    cluster of (numerically) equal singular values, since ``sigma_j >= alpha``
    keeps all of them.
    """
    sigma = np.asarray(sigma, dtype=float)
    b2 = np.asarray(beta, dtype=float) ** 2
    tail = np.concatenate([np.cumsum(b2[::-1])[::-1], [0.0]]) + unresolved**2
    err = np.sqrt(tail)
    at_gap = np.ones(len(sigma) + 1, dtype=bool)
    at_gap[1:-1] = sigma[1:] < sigma[:-1] * (1.0 - TIE_RTOL)
    ok = np.flatnonzero((err <= budget) & at_gap)
    if len(ok) == 0:
        k = len(sigma)
        saturated = True
    else:
        k = int(ok[0])
        saturated = False
    cost = float(np.sqrt(np.sum(b2[:k] / np.asarray(sigma[:k]) ** 2)))
    alpha = float(sigma[k - 1]) if k > 0 else np.inf
    return cost, alpha, float(err[k]), k, saturated


def tikhonov_cost(sigma: np.ndarray, beta: np.ndarray, budget: float, unresolved: float = 0.0):
    """Exact minimum of ``||x||`` subject to ``sum (sigma x - beta)^2 + unresolved^2 <= budget^2``.

    The minimizer is ``x_j = sigma_j beta_j / (sigma_j^2 + lam)`` with the
    multiplier ``lam`` fixed by the active constraint.  Returns
    ``(cost, lam, saturated)``.
    """
    sigma = np.asarray(sigma, dtype=float)
    beta = np.asarray(beta, dtype=float)
    target2 = budget**2 - unresolved**2
    if target2 <= 0:
        return float(np.sqrt(np.sum((beta / sigma) ** 2))), 0.0, True
    if np.sum(beta**2) <= target2:
        return 0.0, np.inf, False
    target = np.sqrt(target2)
    s2 = sigma**2

    def gap(loglam):
        return np.sqrt(np.sum((beta / (1.0 + s2 * np.exp(-loglam))) ** 2)) - target

    lo = 2.0 * np.log(sigma[-1]) - 60.0
    hi = 2.0 * np.log(sigma[0]) + 60.0
    if gap(lo) >= 0:
        return float(np.sqrt(np.sum((beta / sigma) ** 2))), 0.0, False
    loglam = brentq(gap, lo, hi, xtol=1e-14, rtol=1e-13, maxiter=500)
    lam = np.exp(loglam)
    x = sigma * beta / (s2 + lam)
    return float(np.sqrt(np.sum(x**2))), float(lam), False


def pareto_series(sigma, beta, budgets, unresolved: float = 0.0) -> list[dict]:
    rows = []
    for b in budgets:
        cost, alpha, err, kept, sat = cutoff_cost(sigma, beta, b, unresolved)
        tik, lam, tsat = tikhonov_cost(sigma, beta, b, unresolved)
        rows.append(
            {
                "budget": float(b),
                "alpha": alpha,
                "residual": err,
                "boundary_norm": cost,
                "tikhonov_norm": tik,
                "kept": kept,
                "saturated": bool(sat or tsat),
            }
        )
    return rows


def exponent_fits(epsilons, costs, saturated, keep: float = 0.6) -> dict[str, FitResult]:
    """``mu_exp`` (log log M vs log 1/eps) and ``mu_poly`` (log M vs log 1/eps) over the central window."""
    eps = np.asarray(epsilons, dtype=float)
    M = np.asarray(costs, dtype=float)
    usable = ~np.asarray(saturated, dtype=bool) & (M > 0)
    idx = np.flatnonzero(usable)
    mask = np.zeros(len(eps), dtype=bool)
    mask[idx[central_mask(len(idx), keep)]] = True
    return {"mu_exp": fit(eps, M, "loglog-line", mask), "mu_poly": fit(eps, M, "log-line", mask)}
