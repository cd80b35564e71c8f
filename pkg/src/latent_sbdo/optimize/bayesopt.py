"""Bayesian optimization with a GP surrogate and lower-confidence-bound acquisition."""

import numpy as np
from scipy import optimize

from .._validation import check_bounds
from .gp import GpSurrogate
from .log import EvaluationLog, call_objective


def ccd_init(lower, upper):
    """Centre of the box plus the two axial extremes along each axis (2K+1 points)."""
    lower, upper = check_bounds(lower, upper)
    center = 0.5 * (lower + upper)
    points = [center]
    for i in range(center.size):
        for end in (lower[i], upper[i]):
            p = center.copy()
            p[i] = end
            points.append(p)
    return np.array(points)


def _minimize_acquisition(gp, kappa, starts, maxiter, fd_step):
    def acq(u):
        mean, std = gp.predict(u[None, :], return_std=True)
        return float(mean[0] - kappa * std[0])

    bounds = [(0.0, 1.0)] * starts.shape[1]
    best_u, best_val = None, np.inf
    for u0 in starts:
        res = optimize.minimize(acq, u0, method="L-BFGS-B", bounds=bounds,
                                options={"maxiter": maxiter, "eps": fd_step})
        u = np.clip(res.x, 0.0, 1.0)
        val = acq(u)
        # strict comparison keeps the lowest start index on ties
        if val < best_val:
            best_u, best_val = u, val
    return best_u, best_val


def bo_minimize(f, lower, upper, budget, kappa=1.0, seed=0, n_starts=16, maxiter=200, fd_step=1e-6,
                gp_params=None):
    """Minimize ``f`` over ``[lower, upper]`` by GP-LCB.

    The GP works on the box mapped to the unit cube.  Each step minimizes
    ``mean - kappa * std`` from ``n_starts`` random points plus the incumbent
    and evaluates ``f`` at the winner.  Returns ``(best_x, best_f, log)``.
    """
    lower, upper = check_bounds(lower, upper)
    k = lower.size
    if budget < 2 * k + 2:
        raise ValueError(f"budget must be >= 2K+2 = {2 * k + 2}, got {budget}")
    rng = np.random.default_rng(seed)
    width = upper - lower
    log = EvaluationLog()
    U = []
    y = []

    def evaluate(u):
        x = lower + u * width
        value, info = call_objective(f, x)
        log.append(x, value, info)
        U.append(u)
        y.append(value)

    for x in ccd_init(lower, upper):
        evaluate((x - lower) / width)
    params = {"input_scale": np.sqrt(k), **(gp_params or {})}
    while len(log) < budget:
        gp = GpSurrogate(random_state=rng.integers(2**32), **params).fit(np.array(U), np.array(y))
        incumbent = U[int(np.argmin(y))]
        starts = np.vstack([rng.random((n_starts, k)), incumbent])
        u, _ = _minimize_acquisition(gp, kappa, starts, maxiter, fd_step)
        evaluate(u)
    best = log.best()
    return best.x, best.f, log
