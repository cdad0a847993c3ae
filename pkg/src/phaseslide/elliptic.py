"""Discrete Laplacians, the Dirichlet solver, the H^-1 norm and harmonic extension.

Operators are stored as the positive operator ``-Delta_h``.  The Neumann
version acts on all nodes with mirrored ghosts; the Dirichlet version acts on
interior nodes with the boundary held at zero.  Both are symmetric with
respect to the quadrature inner product of :class:`~phaseslide.core.Grid`.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .core import Grid, ScalarField, l2_norm, values_of

__all__ = [
    "LaplacianOperator",
    "BoundaryData",
    "LinearSolverError",
    "laplacian",
    "apply_laplacian",
    "solve_dirichlet",
    "dirichlet_solve_array",
    "hminus1_norm",
    "dirichlet_energy",
    "harmonic_extension",
    "embedding_ratio",
    "estimate_embedding_constant",
    "pcg",
]

LINEAR_RTOL = 1e-12


class LinearSolverError(RuntimeError):
    """Iterative linear solve hit its iteration cap."""

    def __init__(self, message, residual_history):
        super().__init__(message)
        self.residual_history = list(residual_history)


def pcg(matvec, b, precond=None, rtol=LINEAR_RTOL, maxiter=None, x0=None):
    """Preconditioned conjugate gradients for a symmetric positive definite operator.

    Stops when ``||r|| <= rtol * ||b||`` (Euclidean).  Returns ``(x, history)``
    with the residual norm of every iterate; raises :class:`LinearSolverError`
    after ``maxiter`` iterations.
    """
    b = np.asarray(b, dtype=float)
    n = b.size
    if maxiter is None:
        maxiter = 10 * n
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - matvec(x) if x0 is not None else b.copy()
    bnorm = np.linalg.norm(b)
    history = [np.linalg.norm(r)]
    if bnorm == 0.0:
        return np.zeros_like(b), history
    target = rtol * bnorm
    if history[-1] <= target:
        return x, history
    z = precond(r) if precond is not None else r
    p = z.copy()
    rz = r @ z
    for _ in range(maxiter):
        q = matvec(p)
        alpha = rz / (p @ q)
        x += alpha * p
        r -= alpha * q
        history.append(np.linalg.norm(r))
        if history[-1] <= target:
            return x, history
        z = precond(r) if precond is not None else r
        rz_new = r @ z
        p *= rz_new / rz
        p += z
        rz = rz_new
    raise LinearSolverError(
        f"CG did not reach relative residual {rtol:g} in {maxiter} iterations "
        f"(last {history[-1] / bnorm:.3e})", history)


def _neumann_1d(n, h):
    main = np.full(n + 1, 2.0)
    upper = np.full(n, -1.0)
    lower = np.full(n, -1.0)
    upper[0] = -2.0
    lower[-1] = -2.0
    return sp.diags([lower, main, upper], [-1, 0, 1], format="csr") / (h * h)


def _dirichlet_1d(n, h):
    m = n - 1
    return sp.diags([np.full(m - 1, -1.0), np.full(m, 2.0), np.full(m - 1, -1.0)],
                    [-1, 0, 1], format="csr") / (h * h)


@lru_cache(maxsize=32)
def _operators(grid):
    h = grid.spacing
    c = grid.cells
    if grid.dim == 1:
        neu = _neumann_1d(c[0], h[0])
        dir_ = _dirichlet_1d(c[0], h[0])
        m = c[0] - 1
        ab = np.zeros((2, m))
        ab[0, 1:] = -1.0 / h[0] ** 2
        ab[1, :] = 2.0 / h[0] ** 2
        chol = sla.cholesky_banded(ab)
    else:
        ix, iy = sp.identity(c[0] + 1), sp.identity(c[1] + 1)
        neu = (sp.kron(_neumann_1d(c[0], h[0]), iy)
               + sp.kron(ix, _neumann_1d(c[1], h[1]))).tocsr()
        jx, jy = sp.identity(c[0] - 1), sp.identity(c[1] - 1)
        dir_ = (sp.kron(_dirichlet_1d(c[0], h[0]), jy)
                + sp.kron(jx, _dirichlet_1d(c[1], h[1]))).tocsr()
        chol = None
    return {"neumann": neu, "dirichlet": dir_, "chol": chol,
            "dirichlet_diag": dir_.diagonal()}


@dataclass(frozen=True)
class LaplacianOperator:
    """``-Delta_h`` on ``grid`` with the given homogeneous boundary condition."""

    grid: Grid
    boundary_kind: str

    def __post_init__(self):
        if self.boundary_kind not in ("neumann_homogeneous", "dirichlet_homogeneous"):
            raise ValueError(f"unknown boundary kind {self.boundary_kind!r}")

    @property
    def matrix(self):
        key = "neumann" if self.boundary_kind == "neumann_homogeneous" else "dirichlet"
        return _operators(self.grid)[key]

    def apply_array(self, u):
        """Apply to a grid-shaped array and return a grid-shaped array."""
        grid = self.grid
        flat = np.ravel(u)
        if self.boundary_kind == "neumann_homogeneous":
            return (self.matrix @ flat).reshape(grid.shape)
        out = np.zeros(grid.n_nodes)
        out[grid.interior_index] = self.matrix @ flat[grid.interior_index]
        return out.reshape(grid.shape)


def laplacian(grid, boundary_kind="neumann_homogeneous"):
    return LaplacianOperator(grid, boundary_kind)


def apply_laplacian(op, f):
    """Return ``-Delta_h f``; the Dirichlet version treats boundary values as 0."""
    if isinstance(f, ScalarField) and f.grid != op.grid:
        raise ValueError("field and operator live on different grids")
    return ScalarField(op.grid, op.apply_array(values_of(f, op.grid)))


def dirichlet_solve_array(grid, f):
    """Array form of :func:`solve_dirichlet`; only interior values of ``f`` are read."""
    ops = _operators(grid)
    rhs = np.ravel(f)[grid.interior_index]
    u = np.zeros(grid.n_nodes)
    if not np.any(rhs):
        return u.reshape(grid.shape)
    if grid.dim == 1:
        u[grid.interior_index] = sla.cho_solve_banded((ops["chol"], False), rhs)
    else:
        A = ops["dirichlet"]
        dinv = 1.0 / ops["dirichlet_diag"]
        x, _ = pcg(A.dot, rhs, precond=lambda r: dinv * r, rtol=LINEAR_RTOL,
                   maxiter=10 * grid.n_nodes)
        u[grid.interior_index] = x
    return u.reshape(grid.shape)


def solve_dirichlet(grid, f):
    """The Dirichlet solver: ``-Delta_h u = f`` inside, ``u = 0`` on the boundary.

    1D uses a banded Cholesky factorization; 2D uses Jacobi-preconditioned CG
    with relative residual 1e-12 and raises :class:`LinearSolverError` (with
    the residual history) past ``10 * n_nodes`` iterations.
    """
    vals = values_of(f, grid)
    if not np.all(np.isfinite(vals)):
        raise ValueError("right-hand side contains non-finite values")
    return ScalarField(grid, dirichlet_solve_array(grid, vals))


def _edge_energy(grid, u):
    # staggered differences with dual-cell edge weights: this is the discrete
    # gradient for which <f, Df> = ||f||_*^2 holds to rounding
    total = 0.0
    nodal_w = [np.full(c + 1, h) for c, h in zip(grid.cells, grid.spacing)]
    for w in nodal_w:
        w[0] = w[-1] = 0.5 * w[1]
    for axis in range(grid.dim):
        h = grid.spacing[axis]
        du = np.diff(u, axis=axis) / h
        if grid.dim == 1:
            total += h * np.sum(du * du)
        else:
            other = nodal_w[1 - axis]
            wt = h * (other[None, :] if axis == 0 else other[:, None])
            total += np.sum(wt * du * du)
    return float(total)


def hminus1_norm(grid, f):
    """``||f||_* = ||grad D f||``, the dual norm induced by the Dirichlet solver."""
    u = dirichlet_solve_array(grid, values_of(f, grid))
    return float(np.sqrt(_edge_energy(grid, u)))


def dirichlet_energy(grid, u):
    """``(1/2) * sum of squared edge differences`` with quadrature weights."""
    return 0.5 * _edge_energy(grid, values_of(u, grid))


class BoundaryData:
    """Dirichlet data for the chemical potential.

    Either a constant, or a separable product ``a(t) * b(node)`` with ``a``
    tabulated on a time grid (linear interpolation, constant extrapolation)
    and ``b`` tabulated on the boundary nodes in the grid's canonical order
    (:attr:`Grid.boundary_index`).
    """

    def __init__(self, constant=None, times=None, amplitudes=None, profile=None):
        if constant is not None:
            if not np.isfinite(constant):
                raise ValueError("boundary constant must be finite")
            self.kind = "constant"
            self.value = float(constant)
        else:
            self.kind = "separable"
            self.times = np.asarray(times, dtype=float)
            self.amplitudes = np.asarray(amplitudes, dtype=float)
            self.profile = np.asarray(profile, dtype=float)
            if self.times.shape != self.amplitudes.shape or self.times.ndim != 1:
                raise ValueError("times and amplitudes must be 1D arrays of equal length")
            if np.any(np.diff(self.times) <= 0):
                raise ValueError("boundary data times must be strictly increasing")
            if not (np.all(np.isfinite(self.amplitudes)) and np.all(np.isfinite(self.profile))):
                raise ValueError("boundary data must be finite")

    @classmethod
    def constant_value(cls, c):
        return cls(constant=c)

    @classmethod
    def separable(cls, times, amplitudes, profile):
        return cls(times=times, amplitudes=amplitudes, profile=profile)

    def at(self, grid, t):
        """Boundary-node values at time ``t``."""
        nb = grid.boundary_index.size
        if self.kind == "constant":
            return np.full(nb, self.value)
        if self.profile.size != nb:
            raise ValueError(f"boundary profile has {self.profile.size} values, grid has {nb}")
        return np.interp(t, self.times, self.amplitudes) * np.ravel(self.profile)

    def sup(self):
        if self.kind == "constant":
            return abs(self.value)
        return float(np.max(np.abs(self.amplitudes)) * np.max(np.abs(self.profile), initial=0.0))

    def is_zero(self):
        return self.sup() == 0.0


def harmonic_extension(grid, boundary_values):
    """Discrete harmonic field matching ``boundary_values`` on the boundary.

    ``boundary_values`` may be a scalar, an array over the boundary nodes in
    canonical order, or a full nodal field whose boundary values are used.
    """
    bidx = grid.boundary_index
    bv = values_of(boundary_values)
    if bv.ndim == 0:
        bv = np.full(bidx.size, float(bv))
    elif bv.size == grid.n_nodes:
        bv = np.ravel(bv)[bidx]
    elif bv.size != bidx.size:
        raise ValueError(f"expected {bidx.size} boundary values, got {bv.size}")
    if not np.all(np.isfinite(bv)):
        raise ValueError("boundary data contains non-finite values")
    bv = np.ravel(bv)
    if np.all(bv == bv[0]):
        return ScalarField(grid, np.full(grid.shape, bv[0]))
    b = np.zeros(grid.n_nodes)
    b[bidx] = bv
    lap_b = _operators(grid)["neumann"] @ b  # interior rows are the plain stencil
    rhs = np.zeros(grid.n_nodes)
    rhs[grid.interior_index] = -lap_b[grid.interior_index]
    u = b + np.ravel(dirichlet_solve_array(grid, rhs.reshape(grid.shape)))
    return ScalarField(grid, u.reshape(grid.shape))


def embedding_ratio(grid, v, kind="neumann"):
    """Ratio realized by ``v`` in the sup-norm embedding inequality.

    ``kind="neumann"``: ``||v||_inf / (|O|^-1/2 ||v|| + |O|^1/6 ||Delta v||)``.
    ``kind="dirichlet"`` (v vanishing on the boundary):
    ``||v||_inf / (|O|^1/6 ||Delta v||)``.
    """
    vals = values_of(v, grid)
    meas = grid.measure
    top = float(np.max(np.abs(vals)))
    if kind == "neumann":
        lap = laplacian(grid, "neumann_homogeneous").apply_array(vals)
        bottom = meas ** -0.5 * l2_norm(vals, grid) + meas ** (1 / 6) * l2_norm(lap, grid)
    elif kind == "dirichlet":
        lap = laplacian(grid, "dirichlet_homogeneous").apply_array(vals)
        bottom = meas ** (1 / 6) * l2_norm(lap, grid)
    else:
        raise ValueError(f"unknown embedding kind {kind!r}")
    return top / bottom if bottom > 0 else 0.0


EMBEDDING_FAMILIES = ("constant", "cosine", "point_source", "random")


def _cosine(grid, k):
    coords = grid.coordinates()
    out = np.ones(grid.shape)
    for x, kk, L in zip(coords, k, grid.extent):
        out = out * np.cos(np.pi * kk * x / L)
    return out


def _frequencies(grid, kmax):
    if grid.dim == 1:
        return [(k,) for k in range(1, kmax + 1)]
    return [(i, j) for i in range(kmax + 1) for j in range(kmax + 1) if i + j > 0]


def embedding_candidates(grid, families=EMBEDDING_FAMILIES, n_random=1000, max_freq=8,
                         seed=0):
    """Yield ``(family, field_values, kind)`` candidates for the embedding estimate."""
    for fam in families:
        if fam not in EMBEDDING_FAMILIES:
            raise ValueError(f"unknown candidate family {fam!r}")
    if "constant" in families:
        yield "constant", np.ones(grid.shape), "neumann"
    if "cosine" in families:
        for k in _frequencies(grid, max_freq):
            c = _cosine(grid, k)
            yield "cosine", c, "neumann"
            for a in (0.05, 0.1, 0.25, 0.5):
                yield "cosine", 1.0 + a * c, "neumann"
                yield "cosine", 1.0 - a * c, "neumann"
    if "point_source" in families:
        for frac in (0.5, 0.25, 0.125):
            idx = tuple(int(round(frac * c)) for c in grid.cells)
            load = np.zeros(grid.shape)
            load[idx] = 1.0 / np.prod(grid.spacing)
            g1 = dirichlet_solve_array(grid, load)
            yield "point_source", g1, "dirichlet"
            yield "point_source", dirichlet_solve_array(grid, g1), "dirichlet"
    if "random" in families:
        rng = np.random.default_rng(seed)
        freqs = _frequencies(grid, max_freq)
        basis = [_cosine(grid, k) for k in freqs]
        decay = np.array([1.0 / (1.0 + sum(kk * kk for kk in k)) ** 2 for k in freqs])
        for _ in range(n_random):
            coef = rng.standard_normal(len(freqs)) * decay
            v = rng.standard_normal() + sum(c * b for c, b in zip(coef, basis))
            yield "random", v, "neumann"


def estimate_embedding_constant(grid, families=EMBEDDING_FAMILIES, n_random=1000,
                                max_freq=8, seed=0, details=False):
    """Lower estimate of the sup-norm embedding constant over a candidate family.

    The maximum ratio over constants, low-frequency Neumann cosines (and
    constant-plus-cosine mixtures), point-source responses and their second
    solves (rated with the Dirichlet form), and ``n_random`` random smooth
    Neumann fields.  The true constant can only be larger.  With
    ``details=True`` returns ``(estimate, {family: best ratio})``.
    """
    best = {}
    for fam, v, kind in embedding_candidates(grid, families, n_random, max_freq, seed):
        r = embedding_ratio(grid, v, kind)
        if r > best.get(fam, -np.inf):
            best[fam] = r
    est = max(best.values()) if best else 0.0
    return (est, best) if details else est
