"""Shared numerical substrate: uniform grids, trapezoid quadrature,
finite-difference stencils, Volterra/Fredholm solvers, and a pivoted
Cholesky positivity check.

All integral operators in this package are discretized by the trapezoid
Nystrom rule on uniform grids.  Dense operators are stored in *symmetrized*
coordinates ``A = W^(1/2) M W^(-1/2)`` where ``M`` is the plain collocation
matrix and ``W = diag(weights)``; this makes operators that are self-adjoint
in the weighted L2 product literally symmetric matrices, so symmetry and
positivity checks act on ``entries`` directly.

Everything here is a pure function of its inputs; there is no shared
mutable state, so concurrent use on shared inputs is safe.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
import scipy.linalg as sla


class SingularEquationError(ValueError):
    """Raised when a Volterra diagonal coefficient is too close to zero."""


class NonInvertibleError(ValueError):
    """Raised when a dense solve meets a numerically singular matrix.

    Carries ``cond_estimate``, the reciprocal of the LAPACK rcond estimate.
    """

    def __init__(self, message: str, cond_estimate: float):
        super().__init__(f"{message} (condition estimate {cond_estimate:.3e})")
        self.cond_estimate = cond_estimate


_COND_LIMIT = 1e14


@dataclass(frozen=True)
class UniformGrid:
    """Uniform grid of ``n_steps + 1`` nodes on ``[0, end]``.

    Used for both time intervals and space intervals; the coordinate label
    is up to the caller.
    """

    end: float
    n_steps: int

    def __post_init__(self):
        if not np.isfinite(self.end) or self.end <= 0.0:
            raise ValueError(f"grid end must be finite and positive, got {self.end}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 2:
            raise ValueError(f"need at least 2 steps, got {self.n_steps}")

    @property
    def step(self) -> float:
        return self.end / self.n_steps

    @property
    def n_nodes(self) -> int:
        return self.n_steps + 1

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.end, self.n_steps + 1)

    def restricted(self, n_steps: int) -> "UniformGrid":
        """Sub-grid [0, n_steps*step] sharing this grid's step."""
        if not 2 <= n_steps <= self.n_steps:
            raise ValueError(f"cannot restrict {self.n_steps}-step grid to {n_steps}")
        return UniformGrid(n_steps * self.step, n_steps)


@dataclass(frozen=True, eq=False)
class SampledFunction:
    """Real function sampled on the nodes of a uniform grid."""

    grid: UniformGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.grid.n_nodes,):
            raise ValueError(
                f"expected {self.grid.n_nodes} samples, got shape {vals.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("samples must be finite")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_callable(cls, grid: UniformGrid, fn: Callable) -> "SampledFunction":
        return cls(grid, np.asarray(fn(grid.nodes), dtype=float))

    def with_values(self, values: np.ndarray) -> "SampledFunction":
        return SampledFunction(self.grid, values)

    def __call__(self, x) -> np.ndarray:
        """Linear interpolation with constant extension beyond the grid."""
        return np.interp(x, self.grid.nodes, self.values)


def trapezoid_weights(grid: UniformGrid) -> np.ndarray:
    """Trapezoid quadrature weights step*(1/2, 1, ..., 1, 1/2)."""
    w = np.full(grid.n_nodes, grid.step)
    w[0] = w[-1] = 0.5 * grid.step
    return w


def inner_product(f: SampledFunction, g: SampledFunction) -> float:
    """Trapezoid approximation of the L2 inner product on the shared grid."""
    if f.grid != g.grid:
        raise ValueError("inner product requires a shared grid")
    return float(np.sum(trapezoid_weights(f.grid) * f.values * g.values))


def _diff1(values: np.ndarray, h: float) -> np.ndarray:
    out = np.empty_like(values)
    out[1:-1] = (values[2:] - values[:-2]) / (2.0 * h)
    out[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * h)
    out[-1] = (3.0 * values[-1] - 4.0 * values[-2] + values[-3]) / (2.0 * h)
    return out


def _diff2(values: np.ndarray, h: float) -> np.ndarray:
    out = np.empty_like(values)
    out[1:-1] = (values[2:] - 2.0 * values[1:-1] + values[:-2]) / h**2
    out[0] = (2.0 * values[0] - 5.0 * values[1] + 4.0 * values[2] - values[3]) / h**2
    out[-1] = (2.0 * values[-1] - 5.0 * values[-2] + 4.0 * values[-3] - values[-4]) / h**2
    return out


def differentiate(f: SampledFunction, order: int = 1) -> SampledFunction:
    """Second-order finite-difference derivative of a sampled function.

    Centered stencils in the interior; one-sided second-order stencils at
    both endpoints (readouts often sit on the boundary, so endpoint accuracy
    must not degrade).

    Parameters
    ----------
    f : SampledFunction
        Samples on a uniform grid with at least 5 nodes.
    order : int
        1 or 2.
    """
    if f.grid.n_nodes < 5:
        raise ValueError("differentiate needs at least 5 grid nodes")
    if order == 1:
        return f.with_values(_diff1(f.values, f.grid.step))
    if order == 2:
        return f.with_values(_diff2(f.values, f.grid.step))
    raise ValueError(f"derivative order must be 1 or 2, got {order}")


def derivative_matrix(grid: UniformGrid) -> np.ndarray:
    """Dense matrix of the second-order first-derivative stencils."""
    n = grid.n_nodes
    h = grid.step
    d = np.zeros((n, n))
    idx = np.arange(1, n - 1)
    d[idx, idx - 1] = -1.0 / (2.0 * h)
    d[idx, idx + 1] = 1.0 / (2.0 * h)
    d[0, :3] = np.array([-3.0, 4.0, -1.0]) / (2.0 * h)
    d[-1, -3:] = np.array([1.0, -4.0, 3.0]) / (2.0 * h)
    return d


def cumulative_trapezoid(values: np.ndarray, h: float) -> np.ndarray:
    """Running trapezoid antiderivative, zero at the first node."""
    out = np.empty_like(values, dtype=float)
    out[0] = 0.0
    np.cumsum((values[1:] + values[:-1]) * (0.5 * h), out=out[1:])
    return out


def time_reverse(f: SampledFunction) -> SampledFunction:
    """Reflection t -> end - t on the grid; an involution, norm preserving."""
    return f.with_values(f.values[::-1].copy())


def solve_volterra2(
    kernel: Union[Callable, np.ndarray],
    rhs: SampledFunction,
    diag_coeff: SampledFunction,
) -> SampledFunction:
    """Solve a(t) f(t) + int_0^t K(t,s) f(s) ds = rhs(t) by forward substitution.

    Trapezoid discretization turns the equation into a lower-triangular
    system solved node by node.

    Parameters
    ----------
    kernel : callable K(t, s) or (n_nodes, n_nodes) array
        Only the lower triangle (s <= t) is used.
    rhs, diag_coeff : SampledFunction
        Shared grid; ``min |diag_coeff|`` must stay above 1e-10.
    """
    grid = rhs.grid
    if diag_coeff.grid != grid:
        raise ValueError("rhs and diag_coeff must share a grid")
    alpha = diag_coeff.values
    if np.min(np.abs(alpha)) < 1e-10:
        raise SingularEquationError(
            f"diagonal coefficient reaches {np.min(np.abs(alpha)):.3e}"
        )
    t = grid.nodes
    h = grid.step
    if callable(kernel):
        kmat = np.asarray(kernel(t[:, None], t[None, :]), dtype=float)
        kmat = np.broadcast_to(kmat, (grid.n_nodes, grid.n_nodes)).copy()
    else:
        kmat = np.asarray(kernel, dtype=float)
        if kmat.shape != (grid.n_nodes, grid.n_nodes):
            raise ValueError("sampled kernel shape must match the grid")

    f = np.empty(grid.n_nodes)
    f[0] = rhs.values[0] / alpha[0]
    for i in range(1, grid.n_nodes):
        row = kmat[i, : i + 1]
        acc = h * (0.5 * row[0] * f[0] + np.dot(row[1:i], f[1:i]))
        denom = alpha[i] + 0.5 * h * row[i]
        if abs(denom) < 1e-14:
            raise SingularEquationError(f"effective diagonal vanishes at node {i}")
        f[i] = (rhs.values[i] - acc) / denom
    return rhs.with_values(f)


@dataclass(frozen=True, eq=False)
class DenseOperator:
    """Dense trapezoid-Nystrom operator in symmetrized coordinates.

    ``entries`` is ``A = W^(1/2) M W^(-1/2)`` for the collocation matrix
    ``M`` (the map of node values); ``weights`` are the trapezoid weights.
    Operators self-adjoint in the weighted product have symmetric ``entries``
    and their adjoint is the plain transpose.
    """

    grid: UniformGrid
    entries: np.ndarray
    weights: np.ndarray
    symmetric: bool = False

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=float)
        n = self.grid.n_nodes
        if a.shape != (n, n):
            raise ValueError(f"entries must be {n}x{n}, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("entries must be finite")
        object.__setattr__(self, "entries", a)
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        if self.symmetric:
            scale = max(np.max(np.abs(a)), 1e-300)
            skew = np.max(np.abs(a - a.T))
            if skew > 1e-12 * scale:
                raise ValueError(
                    f"operator tagged symmetric but max |A - A'| = {skew:.3e}"
                )

    @property
    def size(self) -> int:
        return self.grid.n_nodes

    @classmethod
    def identity(cls, grid: UniformGrid) -> "DenseOperator":
        return cls(grid, np.eye(grid.n_nodes), trapezoid_weights(grid), symmetric=True)

    @classmethod
    def from_kernel(
        cls,
        grid: UniformGrid,
        kernel_matrix: np.ndarray,
        diag: float = 0.0,
        symmetrize: bool = False,
    ) -> "DenseOperator":
        """Second-kind operator diag*I + integral with sampled kernel K(t_i, s_j)."""
        w = trapezoid_weights(grid)
        sw = np.sqrt(w)
        a = sw[:, None] * np.asarray(kernel_matrix, dtype=float) * sw[None, :]
        a[np.diag_indices_from(a)] += diag
        if symmetrize:
            a = 0.5 * (a + a.T)
        return cls(grid, a, w, symmetric=symmetrize)

    @classmethod
    def from_application_matrix(
        cls,
        grid: UniformGrid,
        m: np.ndarray,
        symmetrize: bool = False,
    ) -> "DenseOperator":
        """Wrap a plain collocation matrix (node values -> node values)."""
        w = trapezoid_weights(grid)
        sw = np.sqrt(w)
        a = (sw[:, None] * np.asarray(m, dtype=float)) / sw[None, :]
        if symmetrize:
            a = 0.5 * (a + a.T)
        return cls(grid, a, w, symmetric=symmetrize)

    def application_matrix(self) -> np.ndarray:
        sw = np.sqrt(self.weights)
        return (self.entries / sw[:, None]) * sw[None, :]

    def apply(self, values: np.ndarray) -> np.ndarray:
        sw = np.sqrt(self.weights)
        return (self.entries @ (sw * values)) / sw

    def adjoint_apply(self, values: np.ndarray) -> np.ndarray:
        """Adjoint in the weighted product: plain transpose in these coordinates."""
        sw = np.sqrt(self.weights)
        return (self.entries.T @ (sw * values)) / sw

    def bilinear(self, f: np.ndarray, g: np.ndarray) -> float:
        """(Op f, g) in the weighted product; exactly symmetric for symmetric entries."""
        sw = np.sqrt(self.weights)
        return float((sw * g) @ (self.entries @ (sw * f)))

    def shifted(self, ridge: float) -> "DenseOperator":
        if ridge == 0.0:
            return self
        a = self.entries.copy()
        a[np.diag_indices_from(a)] += ridge
        return DenseOperator(self.grid, a, self.weights, symmetric=self.symmetric)


def solve_fredholm2(
    op: DenseOperator,
    rhs: SampledFunction,
    ridge: float = 0.0,
) -> SampledFunction:
    """Direct dense solve of a second-kind operator equation Op f = rhs.

    Cholesky is used when the operator is tagged symmetric and turns out
    positive definite, LU otherwise.  An optional Tikhonov ridge mu*I
    (default 0) supports noisy-data experiments.

    Raises
    ------
    NonInvertibleError
        If the 1-norm condition estimate exceeds 1e14.
    """
    if rhs.grid != op.grid:
        raise ValueError("operator and right-hand side grids differ")
    a = op.shifted(ridge).entries
    sw = np.sqrt(op.weights)
    b = sw * rhs.values
    anorm = np.linalg.norm(a, 1)

    if op.symmetric:
        try:
            c, low = sla.cho_factor(a, lower=True, check_finite=False)
            rcond, _ = sla.lapack.dpocon(c, anorm, uplo="L")
            if rcond < 1.0 / _COND_LIMIT:
                raise NonInvertibleError("ill-conditioned symmetric system", 1.0 / max(rcond, 1e-300))
            x = sla.cho_solve((c, low), b, check_finite=False)
            return rhs.with_values(x / sw)
        except sla.LinAlgError:
            pass  # not positive definite; fall through to LU
    lu, piv = sla.lu_factor(a, check_finite=False)
    rcond, _ = sla.lapack.dgecon(lu, anorm)
    if rcond < 1.0 / _COND_LIMIT:
        raise NonInvertibleError("numerically singular system", 1.0 / max(rcond, 1e-300))
    x = sla.lu_solve((lu, piv), b, check_finite=False)
    return rhs.with_values(x / sw)


@dataclass(frozen=True)
class CholeskyOutcome:
    """Result of the pivot-threshold Cholesky factorization attempt."""

    success: bool
    pivots: np.ndarray
    factor: Optional[np.ndarray] = None
    failed_index: Optional[int] = None

    @property
    def pivot_ratio(self) -> float:
        positive = self.pivots[self.pivots > 0.0]
        if positive.size == 0:
            return 0.0
        return float(np.min(positive) / np.max(self.pivots))


def cholesky_posdef(op: DenseOperator, rel_tol: float = 1e-12) -> CholeskyOutcome:
    """Attempt L L' = entries, failing at the first pivot <= rel_tol * max diag.

    Works on the symmetric ``entries`` matrix; non-symmetric input is
    rejected.  ``pivots`` holds the diagonal values d_k encountered before
    (and including) any failure.
    """
    a = np.array(op.entries, dtype=float)
    scale = max(np.max(np.abs(a)), 1e-300)
    if np.max(np.abs(a - a.T)) > 1e-12 * scale:
        raise ValueError("cholesky_posdef requires a symmetric operator")
    n = a.shape[0]
    max_diag = float(np.max(np.diag(a)))
    threshold = rel_tol * max(max_diag, 0.0)
    low = np.zeros_like(a)
    pivots = np.empty(n)
    for k in range(n):
        d = a[k, k]
        pivots[k] = d
        if d <= threshold:
            return CholeskyOutcome(False, pivots[: k + 1], failed_index=k)
        root = np.sqrt(d)
        low[k, k] = root
        col = a[k + 1 :, k] / root
        low[k + 1 :, k] = col
        a[k + 1 :, k + 1 :] -= np.outer(col, col)
    return CholeskyOutcome(True, pivots, factor=low)
