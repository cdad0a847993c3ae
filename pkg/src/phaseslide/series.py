"""Per-step diagnostics table produced by a simulation run."""
from __future__ import annotations

import numpy as np

__all__ = ["TimeSeries", "COLUMNS"]

COLUMNS = (
    "step",
    "t",
    "sup_dev",
    "l2_dev",
    "mu_inf",
    "sigma_min",
    "sigma_max",
    "energy",
    "newton_iters",
    "w_bound",
    "max_principle_margin",
)

_INT_COLUMNS = ("step", "newton_iters")


class TimeSeries:
    """Rows of diagnostics in the fixed :data:`COLUMNS` order.

    ``w_bound`` is NaN when no certificate was attached to the run.
    """

    columns = COLUMNS

    def __init__(self, rows=None):
        self.rows = []
        for row in rows or ():
            self._check_and_add(tuple(row))

    def _check_and_add(self, row):
        if len(row) != len(COLUMNS):
            raise ValueError(f"row has {len(row)} entries, expected {len(COLUMNS)}")
        if self.rows and not row[1] > self.rows[-1][1]:
            raise ValueError("time must be strictly increasing")
        row = tuple(int(v) if name in _INT_COLUMNS else float(v)
                    for name, v in zip(COLUMNS, row))
        self.rows.append(row)

    def append(self, **values):
        missing = set(COLUMNS) - set(values)
        extra = set(values) - set(COLUMNS)
        if missing or extra:
            raise ValueError(f"bad row keys: missing {sorted(missing)}, unknown {sorted(extra)}")
        self._check_and_add(tuple(values[c] for c in COLUMNS))

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def __eq__(self, other):
        if not isinstance(other, TimeSeries):
            return NotImplemented
        a, b = np.array(self.rows, dtype=float), np.array(other.rows, dtype=float)
        return a.shape == b.shape and bool(np.array_equal(a, b, equal_nan=True))

    def column(self, name):
        i = COLUMNS.index(name)
        dtype = int if name in _INT_COLUMNS else float
        return np.array([r[i] for r in self.rows], dtype=dtype)

    @property
    def times(self):
        return self.column("t")

    def as_dict(self):
        return {c: self.column(c) for c in COLUMNS}
