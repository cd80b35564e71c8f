"""DIRECT (dividing rectangles) global minimization over a box."""

import numpy as np

from .._validation import check_bounds
from .log import EvaluationLog, call_objective

# Relative improvement a potentially-optimal rectangle must promise.
EPSILON = 1e-4


class _Budget(Exception):
    pass


class _Direct:
    def __init__(self, f, lower, upper, budget, epsilon):
        self.f = f
        self.lower = lower
        self.width = upper - lower
        self.budget = budget
        self.epsilon = epsilon
        self.log = EvaluationLog()
        self.centers = []
        self.levels = []
        self.values = []

    def evaluate(self, u):
        if len(self.log) >= self.budget:
            raise _Budget
        x = self.lower + u * self.width
        value, info = call_objective(self.f, x)
        self.log.append(x, value, info)
        return value

    def add(self, center, levels, value):
        self.centers.append(center)
        self.levels.append(levels)
        self.values.append(value)

    def diameters(self):
        sides = 3.0 ** -np.array(self.levels, dtype=np.float64)
        return 0.5 * np.sqrt(np.sum(sides**2, axis=1))

    def potentially_optimal(self):
        d = np.round(self.diameters(), 14)
        f = np.array(self.values)
        fmin = f.min()
        best = {}
        for i in range(len(f)):
            j = best.get(d[i])
            if j is None or f[i] < f[j]:
                best[d[i]] = i
        cand = sorted(best.values(), key=lambda i: d[i])
        chosen = []
        for pos, j in enumerate(cand):
            smaller = cand[:pos]
            larger = cand[pos + 1:]
            k_low = max(((f[j] - f[i]) / (d[j] - d[i]) for i in smaller), default=-np.inf)
            k_high = min(((f[i] - f[j]) / (d[i] - d[j]) for i in larger), default=np.inf)
            # some rate of change K > 0 must make j the lowest bound
            if k_low > k_high or k_high <= 0:
                continue
            if np.isfinite(k_high) and f[j] - k_high * d[j] > fmin - self.epsilon * abs(fmin):
                continue
            chosen.append(j)
        return sorted(chosen)

    def divide(self, idx):
        center = self.centers[idx]
        levels = self.levels[idx].copy()
        longest = np.flatnonzero(levels == levels.min())
        delta = 3.0 ** -(levels.min() + 1)
        trial = []
        for dim in longest:
            e = np.zeros_like(center)
            e[dim] = delta
            f_plus = self.evaluate(center + e)
            f_minus = self.evaluate(center - e)
            trial.append((min(f_plus, f_minus), dim, f_plus, f_minus))
        trial.sort(key=lambda t: (t[0], t[1]))
        for _, dim, f_plus, f_minus in trial:
            levels[dim] += 1
            e = np.zeros_like(center)
            e[dim] = delta
            self.add(center + e, levels.copy(), f_plus)
            self.add(center - e, levels.copy(), f_minus)
        self.levels[idx] = levels

    def run(self):
        try:
            center = np.full(self.lower.size, 0.5)
            self.add(center, np.zeros(self.lower.size, dtype=int), self.evaluate(center))
            while len(self.log) < self.budget:
                for idx in self.potentially_optimal():
                    self.divide(idx)
        except _Budget:
            pass
        return self.log


def direct_minimize(f, lower, upper, budget, epsilon=EPSILON):
    """Minimize ``f`` over the box ``[lower, upper]`` with exactly ``budget`` evaluations.

    Returns ``(best_x, best_f, log)``.  The search is deterministic: the same
    objective and box always produce the same evaluation sequence.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    lower, upper = check_bounds(lower, upper)
    log = _Direct(f, lower, upper, int(budget), epsilon).run()
    best = log.best()
    return best.x, best.f, log
