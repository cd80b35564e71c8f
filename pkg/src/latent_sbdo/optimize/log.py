import json
from dataclasses import dataclass, field

import numpy as np

# Stand-in for objective values that came back NaN or infinite.
FAILED_VALUE = 1e300


@dataclass
class Evaluation:
    index: int
    x: np.ndarray
    f: float
    info: dict = field(default_factory=dict)


class EvaluationLog:
    """Ordered record of every objective call made by an optimizer."""

    def __init__(self):
        self.records = []

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def append(self, x, f, info=None):
        rec = Evaluation(index=len(self.records), x=np.array(x, dtype=np.float64), f=float(f),
                         info=dict(info or {}))
        self.records.append(rec)
        return rec

    @property
    def values(self):
        return np.array([r.f for r in self.records])

    @property
    def inputs(self):
        return np.array([r.x for r in self.records])

    def best_so_far(self):
        return np.minimum.accumulate(self.values) if self.records else np.array([])

    def best(self):
        i = int(np.argmin(self.values))
        return self.records[i]

    def to_jsonl(self, stream):
        best = self.best_so_far()
        for rec, b in zip(self.records, best):
            row = {"iteration": rec.index, "x": rec.x.tolist(), "f": rec.f, "best_so_far": float(b),
                   "evaluated": not rec.info.get("failed", False)}
            row.update(rec.info)
            stream.write(json.dumps(row, sort_keys=True) + "\n")


def call_objective(f, x):
    """Evaluate ``f`` and split an optional ``(value, info)`` return."""
    out = f(x)
    if isinstance(out, tuple):
        value, info = out
    else:
        value, info = out, {}
    value = float(value)
    if not np.isfinite(value):
        info = dict(info, failed=True)
        value = FAILED_VALUE
    return value, info
