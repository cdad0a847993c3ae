"""Grids, nodal scalar fields, quadrature-weighted norms and data validation.

Storage is vertex-centred: an axis with ``n`` cells carries ``n + 1`` nodes,
boundary nodes included.  Quadrature uses the dual-cell (control volume)
rectangle rule, so a boundary node owns half a cell per boundary axis and the
weights sum to the measure of the box exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "Grid",
    "ScalarField",
    "TimeConfig",
    "ValidationReport",
    "InvalidDataError",
    "build_grid",
    "sup_norm",
    "l2_norm",
    "inner",
    "values_of",
    "validate_initial_data",
]

DEFAULT_DOMAIN_MARGIN = 1e-6


class InvalidDataError(ValueError):
    """Initial data or target violates the admissibility hypotheses."""

    def __init__(self, report):
        self.report = report
        super().__init__(report.summary())


@dataclass(frozen=True)
class Grid:
    """Uniform tensor mesh of an axis-aligned box ``[0, L_1] x ... x [0, L_d]``."""

    dim: int
    cells: tuple
    extent: tuple

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        cells = tuple(int(c) for c in self.cells)
        extent = tuple(float(e) for e in self.extent)
        if len(cells) != self.dim or len(extent) != self.dim:
            raise ValueError(
                f"need {self.dim} cell counts and extents, got {cells} and {extent}")
        if any(c < 4 for c in cells):
            raise ValueError(f"every axis needs at least 4 cells, got {cells}")
        if not all(np.isfinite(e) and e > 0 for e in extent):
            raise ValueError(f"extents must be positive, got {extent}")
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "extent", extent)

    @property
    def spacing(self):
        return tuple(e / c for e, c in zip(self.extent, self.cells))

    @property
    def measure(self):
        return float(np.prod(self.extent))

    @property
    def shape(self):
        return tuple(c + 1 for c in self.cells)

    @property
    def n_nodes(self):
        return int(np.prod(self.shape))

    def axes(self):
        """Node coordinates along each axis."""
        return [np.linspace(0.0, e, c + 1) for e, c in zip(self.extent, self.cells)]

    def coordinates(self):
        """Nodal coordinate arrays, one per axis, each of ``self.shape``."""
        return np.meshgrid(*self.axes(), indexing="ij")

    @cached_property
    def weights(self):
        ws = []
        for h, c in zip(self.spacing, self.cells):
            w = np.full(c + 1, h)
            w[0] = w[-1] = 0.5 * h
            ws.append(w)
        if self.dim == 1:
            out = ws[0]
        else:
            out = np.multiply.outer(ws[0], ws[1])
        out.flags.writeable = False
        return out

    @cached_property
    def boundary_mask(self):
        mask = np.zeros(self.shape, dtype=bool)
        if self.dim == 1:
            mask[[0, -1]] = True
        else:
            mask[[0, -1], :] = True
            mask[:, [0, -1]] = True
        mask.flags.writeable = False
        return mask

    @cached_property
    def boundary_index(self):
        """Flat (C-order) indices of boundary nodes; the canonical boundary ordering."""
        idx = np.flatnonzero(self.boundary_mask.ravel())
        idx.flags.writeable = False
        return idx

    @cached_property
    def interior_index(self):
        idx = np.flatnonzero(~self.boundary_mask.ravel())
        idx.flags.writeable = False
        return idx

    def zeros(self):
        return np.zeros(self.shape)

    def sample(self, func):
        """Evaluate ``func(*coords)`` at the nodes and wrap it as a field."""
        vals = np.broadcast_to(np.asarray(func(*self.coordinates()), dtype=float),
                               self.shape)
        return ScalarField(self, np.array(vals))


def build_grid(dim, cells_per_axis, extent_per_axis):
    """Build a :class:`Grid`; raises ``ValueError`` on a bad dimension or extent."""
    return Grid(int(dim), tuple(cells_per_axis), tuple(extent_per_axis))


@dataclass
class ScalarField:
    """Nodal values on a grid.  Values must be finite."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.size != self.grid.n_nodes:
            raise ValueError(
                f"field has {vals.size} values but grid has {self.grid.n_nodes} nodes")
        vals = vals.reshape(self.grid.shape)
        if not np.all(np.isfinite(vals)):
            raise ValueError("field contains non-finite values")
        self.values = vals

    @classmethod
    def constant(cls, grid, c):
        return cls(grid, np.full(grid.shape, float(c)))

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


def values_of(f, grid=None):
    """Return the nodal array behind ``f`` (a field, array or scalar)."""
    if isinstance(f, ScalarField):
        if grid is not None and f.grid != grid:
            raise ValueError("field lives on a different grid")
        return f.values
    arr = np.asarray(f, dtype=float)
    if grid is not None:
        if arr.ndim == 0:
            return np.full(grid.shape, float(arr))
        if arr.size != grid.n_nodes:
            raise ValueError(
                f"array has {arr.size} values but grid has {grid.n_nodes} nodes")
        arr = arr.reshape(grid.shape)
    return arr


def sup_norm(f):
    vals = values_of(f)
    return float(np.max(np.abs(vals))) if vals.size else 0.0


def inner(grid, f, g):
    """Quadrature-weighted inner product on ``grid``."""
    return float(np.sum(grid.weights * values_of(f, grid) * values_of(g, grid)))


def l2_norm(f, grid=None):
    """Discrete L2 norm; ``grid`` is needed only when ``f`` is a bare array."""
    if isinstance(f, ScalarField):
        grid = f.grid
    if grid is None:
        raise ValueError("l2_norm of a bare array needs its grid")
    vals = values_of(f, grid)
    return float(np.sqrt(np.sum(grid.weights * vals * vals)))


@dataclass(frozen=True)
class TimeConfig:
    """Final time and step; ``steps`` is derived and must be an integer."""

    T: float
    dt: float

    def __post_init__(self):
        if not (self.T > 0 and np.isfinite(self.T)):
            raise ValueError(f"horizon T must be positive, got {self.T}")
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise ValueError(f"dt must be positive, got {self.dt}")
        n = round(self.T / self.dt)
        if n < 1 or abs(n * self.dt - self.T) > 1e-12 * self.T:
            raise ValueError(f"dt = {self.dt} does not divide T = {self.T}")

    @property
    def steps(self):
        return int(round(self.T / self.dt))

    def times(self):
        return self.dt * np.arange(self.steps + 1)


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def add(self, what, nodes, values, reason):
        for n, v in zip(nodes, values):
            self.violations.append((what, int(n), float(v), reason))

    def summary(self, limit=10):
        if self.ok:
            return "initial data valid"
        lines = [f"{len(self.violations)} violation(s):"]
        for what, n, v, reason in self.violations[:limit]:
            lines.append(f"  {what}[node {n}] = {v!r}: {reason}")
        if len(self.violations) > limit:
            lines.append(f"  ... and {len(self.violations) - limit} more")
        return "\n".join(lines)

    def raise_if_invalid(self):
        if not self.ok:
            raise InvalidDataError(self)


def validate_initial_data(phi0, sigma0, phi_star, pot, domain_margin=DEFAULT_DOMAIN_MARGIN):
    """Check the initial data and target against the potential's domain.

    ``phi0`` must make the minimal section of beta finite at every node (for
    the logarithmic potential with distance at least ``domain_margin`` from
    the singular endpoints), ``phi_star`` must sit strictly inside D(beta),
    and ``sigma0`` must be finite.  Every offending node is listed.
    """
    grids = {f.grid for f in (phi0, sigma0, phi_star) if isinstance(f, ScalarField)}
    if len(grids) > 1:
        raise ValueError("fields do not share one grid")
    report = ValidationReport()
    p0 = np.ravel(values_of(phi0))
    s0 = np.ravel(values_of(sigma0))
    ps = np.ravel(values_of(phi_star))

    for name, arr in (("phi0", p0), ("phi_star", ps), ("sigma0", s0)):
        bad = np.flatnonzero(~np.isfinite(arr))
        report.add(name, bad, arr[bad], "not finite")

    lo, hi = pot.domain
    if pot.kind == "obstacle":
        bad = np.flatnonzero(np.isfinite(p0) & ((p0 < lo) | (p0 > hi)))
        report.add("phi0", bad, p0[bad], f"outside D(beta) = [{lo}, {hi}]")
    elif pot.kind == "logarithmic":
        bad = np.flatnonzero(np.isfinite(p0) & ((p0 <= lo + domain_margin)
                                                  | (p0 >= hi - domain_margin)))
        report.add("phi0", bad, p0[bad],
                   f"minimal section undefined or too close to the ends of ({lo}, {hi})")
    if pot.kind != "regular":
        bad = np.flatnonzero(np.isfinite(ps) & ((ps <= lo + domain_margin)
                                                  | (ps >= hi - domain_margin)))
        report.add("phi_star", bad, ps[bad],
                   f"target must lie strictly inside D(beta) = [{lo}, {hi}]")
    return report
