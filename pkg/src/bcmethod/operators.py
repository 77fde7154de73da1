"""Response and connecting operators assembled directly from a response
kernel, with a factorized cross-check route and positivity-based
admissibility verdicts.

The connecting operator expresses inner products of interior wave states
through boundary data alone.  Its closed forms used here are

  Dirichlet:   (Cf)(t) = alpha f(t) + int_0^T [p(2T-t-s) - p(|t-s|)] f(s) ds
  Neumann:     (Bf)(t) = -r(0) f(t) - (1/2) int_0^T [r'(2T-t-s) + r'(|t-s|)] f(s) ds
  Scattering:  C = I + R,   (Rf)(tau) = int r(tau+s) f(s) ds

with p the half-antiderivative of r.  The factorized Dirichlet route
composes the odd extension S, the extended response, time integration J and
the adjoint S* as C = -(1/2) S* Rt J S; the sign pairs with the adjoint
convention (S*h)(t) = h(t) - h(2T-t) and is fixed by the requirement that
the trivial medium yield the identity (cross-checked against the closed
form in the tests).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .forward import ResponseKernel
from .numerics import (
    CholeskyOutcome,
    DenseOperator,
    SampledFunction,
    UniformGrid,
    cholesky_posdef,
    derivative_matrix,
    differentiate,
    trapezoid_weights,
)


class InadmissibleDataError(ValueError):
    """Inverse data whose connecting operator fails the positivity test."""


@dataclass(frozen=True, eq=False)
class ConnectingOperator:
    """Dense symmetric discretization of the state-product bilinear form."""

    system: str
    horizon: float
    kind: str  # 'plain' | 'differentiated' | 'scattering'
    op: DenseOperator

    @property
    def grid(self) -> UniformGrid:
        return self.op.grid


def _subgrid(kernel: ResponseKernel, T: Optional[float]) -> UniformGrid:
    """Grid on [0, T] sharing the kernel step; T defaults to the kernel horizon."""
    h = kernel.r.grid.step
    if T is None:
        T = kernel.T
    m = int(round(T / h))
    if abs(m * h - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"horizon {T} is not a node of the kernel grid (step {h})")
    if kernel.system in ("dirichlet", "neumann") and 2 * m > kernel.r.grid.n_steps:
        raise ValueError("kernel too short: need r on [0, 2T]")
    return UniformGrid(m * h, m)


def _convolution_matrix(r_values: np.ndarray, grid: UniformGrid) -> np.ndarray:
    """Trapezoid collocation of f -> int_0^t r(t-s) f(s) ds."""
    n = grid.n_nodes
    h = grid.step
    idx = np.arange(n)
    diff = idx[:, None] - idx[None, :]
    mat = np.where(diff >= 0, r_values[np.abs(diff)], 0.0) * h
    mat[:, 0] *= 0.5
    mat[idx, idx] *= 0.5
    mat[0, 0] = 0.0
    return mat


def integration_matrix(grid: UniformGrid) -> np.ndarray:
    """Trapezoid collocation of the running integral f -> int_0^t f."""
    n = grid.n_nodes
    h = grid.step
    mat = np.tril(np.full((n, n), h), -1)
    idx = np.arange(n)
    mat[idx, idx] = 0.5 * h
    mat[1:, 0] = 0.5 * h
    mat[0, 0] = 0.0
    return mat


def response_operator(
    kernel: ResponseKernel, T: Optional[float] = None
) -> DenseOperator:
    """Nystrom discretization of the response map on [0, T].

    Dirichlet: -alpha d/dt + beta + convolution with r (domain f(0) = 0);
    Neumann: convolution with r; scattering: the self-adjoint correlation
    with r on the full kernel grid.
    """
    if kernel.system == "scattering":
        grid = kernel.r.grid
        idx = np.arange(grid.n_nodes)
        total = idx[:, None] + idx[None, :]
        rpad = np.concatenate([kernel.r.values, np.zeros(grid.n_nodes)])
        return DenseOperator.from_kernel(grid, rpad[total], symmetrize=True)
    grid = _subgrid(kernel, T)
    conv = _convolution_matrix(kernel.r.values[: grid.n_nodes], grid)
    if kernel.system == "neumann":
        return DenseOperator.from_application_matrix(grid, conv)
    mat = -kernel.alpha * derivative_matrix(grid) + conv
    mat[np.diag_indices_from(mat)] += kernel.beta
    return DenseOperator.from_application_matrix(grid, mat)


def apply_response(
    kernel: ResponseKernel,
    f: SampledFunction,
    adjoint: bool = False,
) -> SampledFunction:
    """Apply the response operator (or its discrete weighted adjoint) to f.

    The Dirichlet domain conditions f(0) = 0 (forward) and f(T) = 0
    (adjoint) are enforced; they make the boundary terms of the
    integration by parts vanish, so the discrete adjoint is consistent.
    """
    op = response_operator(kernel, T=f.grid.end)
    if f.grid != op.grid:
        raise ValueError("control grid must match the kernel step")
    if kernel.system == "dirichlet":
        scale = max(np.max(np.abs(f.values)), 1.0)
        if not adjoint and abs(f.values[0]) > 1e-10 * scale:
            raise ValueError("Dirichlet response needs f(0) = 0")
        if adjoint and abs(f.values[-1]) > 1e-10 * scale:
            raise ValueError("Dirichlet adjoint response needs f(T) = 0")
    values = op.adjoint_apply(f.values) if adjoint else op.apply(f.values)
    return f.with_values(values)


def assemble_connecting(
    kernel: ResponseKernel, T: Optional[float] = None
) -> ConnectingOperator:
    """Closed-form Nystrom assembly of the connecting operator from r.

    Dirichlet entries come from the stored antiderivative p, so assembly is
    O(n^2) and exactly consistent with the boundary-control equations; the
    Neumann (differentiated) kind uses r' from the shared stencils;
    scattering is identity plus the correlation kernel.
    """
    if kernel.system == "scattering":
        resp = response_operator(kernel)
        entries = resp.entries.copy()
        entries[np.diag_indices_from(entries)] += 1.0
        op = DenseOperator(resp.grid, entries, resp.weights, symmetric=True)
        return ConnectingOperator("scattering", kernel.r.grid.end, "scattering", op)

    grid = _subgrid(kernel, T)
    m = grid.n_steps
    idx = np.arange(m + 1)
    anti = idx[:, None] + idx[None, :]
    diff = np.abs(idx[:, None] - idx[None, :])
    if kernel.system == "dirichlet":
        p = kernel.p.values
        ker = p[2 * m - anti] - p[diff]
        op = DenseOperator.from_kernel(grid, ker, diag=kernel.alpha, symmetrize=True)
        return ConnectingOperator("dirichlet", grid.end, "plain", op)

    rp = differentiate(kernel.r, 1).values
    ker = -0.5 * (rp[2 * m - anti] + rp[diff])
    r0 = float(kernel.r.values[0])
    op = DenseOperator.from_kernel(grid, ker, diag=-r0, symmetrize=True)
    return ConnectingOperator("neumann", grid.end, "differentiated", op)


def assemble_connecting_factorized(
    kernel: ResponseKernel, T: Optional[float] = None
) -> ConnectingOperator:
    """Cross-check assembly C = -(1/2) S* Rt J S on the grid.

    S extends oddly about t = T (midpoint set to the jump average 0);
    S* restricts the odd part, h -> h(t) - h(2T - t); the composed row at
    t = T is evaluated by the one-sided jump rule (the only contribution
    there is the alpha-jump of Rt J S f), keeping the single-node defect of
    the plain composition out of the comparison.
    """
    if kernel.system != "dirichlet":
        raise ValueError("factorized assembly is defined for Dirichlet kernels")
    grid = _subgrid(kernel, T)
    m = grid.n_steps
    grid2 = UniformGrid(2.0 * grid.end, 2 * m)
    n1, n2 = m + 1, 2 * m + 1

    smat = np.zeros((n2, n1))
    smat[np.arange(m), np.arange(m)] = 1.0  # rows 0..m-1: copy
    smat[np.arange(m + 1, n2), np.arange(m - 1, -1, -1)] = -1.0  # reflect, negate

    sstar = np.zeros((n1, n2))
    sstar[np.arange(n1), np.arange(n1)] = 1.0
    sstar[np.arange(n1), 2 * m - np.arange(n1)] -= 1.0  # row m becomes zero

    jmat = integration_matrix(grid2)
    conv = _convolution_matrix(kernel.r.values, grid2)
    rj = -kernel.alpha * np.eye(n2) + kernel.beta * jmat + conv @ jmat

    mat = -0.5 * (sstar @ rj @ smat)
    mat[m, :] = 0.0
    mat[m, m] = kernel.alpha  # one-sided jump evaluation at t = T
    op = DenseOperator.from_application_matrix(grid, mat, symmetrize=True)
    return ConnectingOperator("dirichlet", grid.end, "plain", op)


@dataclass(frozen=True)
class Admissibility:
    """Necessary-condition verdict for inverse data."""

    admissible: bool
    reason: Optional[str]
    pivot_ratio: float
    outcome: CholeskyOutcome


PIVOT_RATIO_FLOOR = 1e-10


def check_admissibility(connecting: ConnectingOperator) -> Admissibility:
    """Positive definiteness of the assembled operator, by pivoted Cholesky.

    Admissible data must factor with all pivots positive and a
    smallest/largest pivot ratio of at least 1e-10 (a fixed-grid proxy for
    the isomorphism property).  This is a necessary condition only.
    """
    outcome = cholesky_posdef(connecting.op)
    if not outcome.success:
        k = outcome.failed_index
        return Admissibility(
            False,
            f"negative pivot {outcome.pivots[k]:.3e} at index {k}",
            outcome.pivot_ratio,
            outcome,
        )
    ratio = outcome.pivot_ratio
    if ratio < PIVOT_RATIO_FLOOR:
        return Admissibility(
            False, f"pivot ratio {ratio:.3e} below {PIVOT_RATIO_FLOOR}", ratio, outcome
        )
    return Admissibility(True, None, ratio, outcome)


def require_admissible(connecting: ConnectingOperator) -> Admissibility:
    verdict = check_admissibility(connecting)
    if not verdict.admissible:
        raise InadmissibleDataError(f"{connecting.system} data rejected: {verdict.reason}")
    return verdict


def save_matrix_csv(op: DenseOperator, path_or_buffer) -> None:
    """Debug dump: first line the size n, then entries row-major."""
    import csv as _csv

    own = isinstance(path_or_buffer, (str, bytes))
    fh = open(path_or_buffer, "w", newline="") if own else path_or_buffer
    try:
        writer = _csv.writer(fh)
        writer.writerow([op.size])
        for row in op.entries:
            writer.writerow([repr(float(v)) for v in row])
    finally:
        if own:
            fh.close()
