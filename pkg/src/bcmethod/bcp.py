"""Special boundary-control equation families, their endpoint readouts, and
the transformations to the classical Gelfand-Levitan / Krein / Pariiskii /
Marchenko kernels; singular controls, wave visualization, the inverse
control operator, and the transformation operator.

The families solve, for each intermediate horizon xi on the kernel grid,

  Dirichlet:  C^xi f = y'(0) kappa - y(0) R* kappa,   kappa(t) = xi - t
  Neumann:    B^xi f = -y(0) 1 + y'(0) R* 1
  Scattering: f(tau) + int_xi r(tau+s) f(s) ds = exp(-k tau),  tau >= xi

and read the target Sturm-Liouville solution off the solution endpoint:
f^xi(0) for the boundary systems, f^xi(xi) for scattering.  Readout sign
conventions are calibrated on the trivial medium (identity operator,
readout +1 for the Krein target), and densities use |f^xi(0)|.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg as sla

from .forward import ResponseKernel
from .numerics import (
    DenseOperator,
    SampledFunction,
    UniformGrid,
    solve_fredholm2,
    trapezoid_weights,
)
from .numerics import _diff1  # shared stencils for readout curves
from .operators import (
    InadmissibleDataError,
    assemble_connecting,
    require_admissible,
    response_operator,
)


class DegenerateKernelError(ValueError):
    """A kernel normalizer f(xi, xi) fell below the degeneracy floor."""


NORMALIZER_FLOOR = 1e-6

KINDS = ("gl", "krein", "pariiskii", "marchenko")


@dataclass(frozen=True, eq=False)
class ControlFamily:
    """Solutions of the special equations for every xi on the grid.

    ``solutions[k]`` is f^xi for xi = xi_indices[k] * step, sampled on
    [0, xi] for the boundary systems and on [xi, domain_end] for
    scattering.  ``readouts[k]`` holds f^xi(0), respectively f^xi(xi).
    """

    system: str
    kernel: ResponseKernel
    step: float
    xi_indices: np.ndarray
    solutions: List[np.ndarray]
    readouts: np.ndarray
    target: Union[Tuple[float, float], float]
    max_residual: float
    domain_end: Optional[float] = None

    @property
    def xi_grid(self) -> np.ndarray:
        return self.step * self.xi_indices

    def solution_at(self, xi: float) -> np.ndarray:
        k = int(round(xi / self.step))
        pos = np.searchsorted(self.xi_indices, k)
        if pos >= len(self.xi_indices) or self.xi_indices[pos] != k:
            raise KeyError(f"xi = {xi} is not in the family")
        return self.solutions[pos]


def _boundary_rhs(
    system: str,
    kernel: ResponseKernel,
    grid: UniformGrid,
    target: Tuple[float, float],
) -> SampledFunction:
    y0, y0p = target
    if system == "dirichlet":
        kappa = SampledFunction(grid, grid.end - grid.nodes)
        rhs = y0p * kappa.values
        if y0 != 0.0:
            resp = response_operator(kernel, T=grid.end)
            rhs = rhs - y0 * resp.adjoint_apply(kappa.values)
    else:
        ones = np.ones(grid.n_nodes)
        rhs = -y0 * ones
        if y0p != 0.0:
            resp = response_operator(kernel, T=grid.end)
            rhs = rhs + y0p * resp.adjoint_apply(ones)
    return SampledFunction(grid, rhs)


def _scattering_block(kernel: ResponseKernel, j: int, k: float):
    """Solve the tail-truncated equation for xi = j*h; returns f on [xi, D].

    The kernel support makes the equation trivial for tau + xi > 2a, so the
    unknown block ends at max(xi, 2a - xi) and the tail is exp(-k tau)
    exactly.  Returns (values on the global grid indices j.., residual).
    """
    grid = kernel.r.grid
    h = grid.step
    n_grid = grid.n_steps
    rpad = np.concatenate([kernel.r.values, np.zeros(grid.n_nodes + 1)])
    j_hi = min(int(np.ceil(2.0 * kernel.support_bound / h)) - j + 1, n_grid)
    exact = np.exp(-k * h * np.arange(j, n_grid + 1))
    if j_hi <= j + 1:  # no coupling left: the whole solution is the target
        return exact, 0.0
    m = j_hi - j
    w = np.full(m + 1, h)
    w[0] = w[-1] = 0.5 * h
    sw = np.sqrt(w)
    loc = np.arange(m + 1)
    ker = rpad[2 * j + loc[:, None] + loc[None, :]]
    a = sw[:, None] * ker * sw[None, :]
    a[np.diag_indices_from(a)] += 1.0
    a = 0.5 * (a + a.T)
    rhs = exact[: m + 1]
    try:
        c, low = sla.cho_factor(a, lower=True, check_finite=False)
    except sla.LinAlgError as exc:
        raise InadmissibleDataError(f"scattering block at xi={j * h:.4f}: {exc}")
    f_block = sla.cho_solve((c, low), sw * rhs, check_finite=False) / sw
    residual = np.linalg.norm((a @ (sw * f_block)) / sw - rhs) / max(
        np.linalg.norm(rhs), 1e-300
    )
    return np.concatenate([f_block, exact[m + 1 :]]), float(residual)


def solve_special_family(
    system: str,
    kernel: ResponseKernel,
    target: Union[Tuple[float, float], float],
    xi_indices: Optional[Sequence[int]] = None,
    x_max: Optional[float] = None,
    ridge: float = 0.0,
) -> ControlFamily:
    """Solve the special equation on [0, xi] (or [xi, D]) for each xi.

    ``target`` is (y(0), y'(0)) for the boundary systems and the wavenumber
    k > 0 for scattering.  The full-horizon connecting operator is checked
    for admissibility first; rejection propagates as InadmissibleDataError.
    """
    h = kernel.r.grid.step
    if system in ("dirichlet", "neumann"):
        n = int(round(kernel.T / h))
        if xi_indices is None:
            xi_indices = np.arange(2, n + 1)
        xi_indices = np.asarray(xi_indices, dtype=int)
        require_admissible(assemble_connecting(kernel, T=xi_indices[-1] * h))
        solutions, readouts = [], []
        worst = 0.0
        for j in xi_indices:
            grid = UniformGrid(j * h, int(j))
            conn = assemble_connecting(kernel, T=grid.end)
            rhs = _boundary_rhs(system, kernel, grid, target)
            f = solve_fredholm2(conn.op, rhs, ridge=ridge)
            res = np.linalg.norm(conn.op.apply(f.values) - rhs.values)
            worst = max(worst, res / max(np.linalg.norm(rhs.values), 1e-300))
            solutions.append(f.values)
            readouts.append(f.values[0])
        return ControlFamily(
            system=system,
            kernel=kernel,
            step=h,
            xi_indices=xi_indices,
            solutions=solutions,
            readouts=np.array(readouts),
            target=target,
            max_residual=worst,
        )

    if system != "scattering":
        raise ValueError(f"unknown system {system!r}")
    k = float(target)
    if k <= 0.0:
        raise ValueError("scattering target wavenumber must be positive")
    if kernel.support_bound is None:
        raise ValueError("scattering family needs the kernel support bound")
    if xi_indices is None:
        if x_max is None:
            x_max = kernel.support_bound + 0.6
        if x_max > kernel.r.grid.end - 2 * h:
            raise ValueError("x_max exceeds the kernel domain")
        xi_indices = np.arange(1, int(round(x_max / h)) + 1)
    xi_indices = np.asarray(xi_indices, dtype=int)
    require_admissible(assemble_connecting(kernel))
    solutions, readouts = [], []
    worst = 0.0
    for j in xi_indices:
        vals, res = _scattering_block(kernel, int(j), k)
        worst = max(worst, res)
        solutions.append(vals)
        readouts.append(vals[0])
    return ControlFamily(
        system="scattering",
        kernel=kernel,
        step=h,
        xi_indices=xi_indices,
        solutions=solutions,
        readouts=np.array(readouts),
        target=k,
        max_residual=worst,
        domain_end=kernel.r.grid.end,
    )


def solve_eigen_target(
    kernel: ResponseKernel,
    lam: float,
    T: Optional[float] = None,
    ridge: float = 0.0,
) -> SampledFunction:
    """Solve C^T f = sin(sqrt(lam) (T - t)) / sqrt(lam) (limit T - t at lam = 0).

    The solution is the control steering the Dirichlet system to the
    eigenparameter solution of the static problem; lam = 0 reproduces the
    plain family equation with target (0, 1).
    """
    if lam < 0.0:
        raise ValueError("lam must be nonnegative")
    conn = assemble_connecting(kernel, T=T)
    require_admissible(conn)
    grid = conn.grid
    s = grid.end - grid.nodes
    if lam == 0.0:
        rhs = s
    else:
        root = np.sqrt(lam)
        rhs = np.sin(root * s) / root
    return solve_fredholm2(conn.op, SampledFunction(grid, rhs), ridge=ridge)


# ---------------------------------------------------------------------------
# classical kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ClassicalKernel:
    """Per-xi slices of a classical integral-equation kernel.

    slice k lives on: t in [0, xi]           (gl,   values L(xi, t))
                      t in [-xi, xi]         (krein g, pariiskii G)
                      tau in [xi, domain_end] (marchenko g)
    """

    kind: str
    step: float
    xi_indices: np.ndarray
    slices: List[np.ndarray]
    domain_end: Optional[float] = None

    def slice_at(self, xi: float) -> Tuple[np.ndarray, np.ndarray]:
        """(abscissae, values) of the slice at the grid node nearest xi."""
        j = int(round(xi / self.step))
        pos = np.searchsorted(self.xi_indices, j)
        if pos >= len(self.xi_indices) or self.xi_indices[pos] != j:
            raise KeyError(f"xi = {xi} has no stored slice")
        vals = self.slices[pos]
        if self.kind == "gl":
            t = self.step * np.arange(j + 1)
        elif self.kind in ("krein", "pariiskii"):
            t = self.step * (np.arange(2 * j + 1) - j)
        else:
            t = self.step * (j + np.arange(len(vals)))
        return t, vals


def _readout_derivative(readouts: np.ndarray, h: float) -> np.ndarray:
    return _diff1(readouts, h)


def _guard_normalizers(vals: np.ndarray, xi_grid: np.ndarray) -> None:
    bad = np.abs(vals) < NORMALIZER_FLOOR
    if np.any(bad):
        worst = xi_grid[np.argmax(bad)]
        raise DegenerateKernelError(
            f"kernel normalizer |f(xi, xi)| < {NORMALIZER_FLOOR} at xi = {worst:.4f}"
        )


def _gl_kernel(fam: ControlFamily) -> ClassicalKernel:
    idxs = fam.xi_indices
    h = fam.step
    rev = [sol[::-1] for sol in fam.solutions]  # f(xi, t) = f^xi(xi - t)
    ro = fam.readouts
    _guard_normalizers(ro, fam.xi_grid)
    dro = _readout_derivative(ro, h)
    first, last = 0, len(idxs) - 1
    out = []
    for pos, i in enumerate(idxs):
        r_i = rev[pos]
        L = np.empty(i + 1)
        for j in range(i + 1):
            if j == i:
                # d/dxi of the diagonal f(xi, xi) splits into xi- and t-parts
                ft = (3.0 * r_i[i] - 4.0 * r_i[i - 1] + r_i[i - 2]) / (2.0 * h)
                d = dro[pos] - ft
            elif pos == first:
                d = (-3.0 * r_i[j] + 4.0 * rev[pos + 1][j] - rev[pos + 2][j]) / (2.0 * h)
            elif pos == last:
                if j <= i - 2:
                    d = (3.0 * r_i[j] - 4.0 * rev[pos - 1][j] + rev[pos - 2][j]) / (2.0 * h)
                else:
                    d = (r_i[j] - rev[pos - 1][j]) / h
            else:
                d = (rev[pos + 1][j] - rev[pos - 1][j]) / (2.0 * h)
            L[j] = d / ro[pos]
        out.append(L)
    return ClassicalKernel("gl", h, idxs, out)


def _even_extension(sol: np.ndarray) -> np.ndarray:
    # g(xi, t) = f^xi(xi - |t|) on [-xi, xi]
    return np.concatenate([sol, sol[-2::-1]])


def _krein_kernel(fam: ControlFamily) -> ClassicalKernel:
    return ClassicalKernel(
        "krein", fam.step, fam.xi_indices, [_even_extension(s) for s in fam.solutions]
    )


def _pariiskii_kernel(fam: ControlFamily) -> ClassicalKernel:
    idxs = fam.xi_indices
    h = fam.step
    g = [_even_extension(s) for s in fam.solutions]
    ro = fam.readouts  # g(xi, +-xi) = f^xi(0)
    _guard_normalizers(ro, fam.xi_grid)
    dro = _readout_derivative(ro, h)
    first, last = 0, len(idxs) - 1
    out = []
    for pos, i in enumerate(idxs):
        g_i = g[pos]
        G = np.empty(2 * i + 1)
        for jp in range(2 * i + 1):
            if jp == 2 * i:  # corner t = +xi
                gt = (3.0 * g_i[2 * i] - 4.0 * g_i[2 * i - 1] + g_i[2 * i - 2]) / (2.0 * h)
                d = dro[pos] - gt
            elif jp == 0:  # corner t = -xi
                gt = (-3.0 * g_i[0] + 4.0 * g_i[1] - g_i[2]) / (2.0 * h)
                d = dro[pos] + gt
            elif pos == first:
                d = (-3.0 * g_i[jp] + 4.0 * g[pos + 1][jp + 1] - g[pos + 2][jp + 2]) / (2.0 * h)
            elif pos == last:
                if 2 <= jp <= 2 * i - 2:
                    d = (3.0 * g_i[jp] - 4.0 * g[pos - 1][jp - 1] + g[pos - 2][jp - 2]) / (2.0 * h)
                else:
                    d = (g_i[jp] - g[pos - 1][jp - 1]) / h
            else:
                d = (g[pos + 1][jp + 1] - g[pos - 1][jp - 1]) / (2.0 * h)
            G[jp] = d / ro[pos]
        out.append(G)
    return ClassicalKernel("pariiskii", h, idxs, out)


def _marchenko_kernel(fam: ControlFamily) -> ClassicalKernel:
    idxs = fam.xi_indices
    h = fam.step
    sols = fam.solutions  # sol[pos][loc], global tau index = idxs[pos] + loc
    ro = fam.readouts
    _guard_normalizers(ro, fam.xi_grid)
    dro = _readout_derivative(ro, h)
    first, last = 0, len(idxs) - 1
    out = []
    for pos, i in enumerate(idxs):
        f_i = sols[pos]
        g = np.empty(len(f_i))
        for loc in range(len(f_i)):
            if loc == 0:
                ftau = (-3.0 * f_i[0] + 4.0 * f_i[1] - f_i[2]) / (2.0 * h)
                d = dro[pos] - ftau
            elif pos == first:
                if loc >= 2:
                    d = (-3.0 * f_i[loc] + 4.0 * sols[pos + 1][loc - 1] - sols[pos + 2][loc - 2]) / (2.0 * h)
                else:
                    d = (sols[pos + 1][0] - f_i[1]) / h
            elif pos == last:
                d = (3.0 * f_i[loc] - 4.0 * sols[pos - 1][loc + 1] + sols[pos - 2][loc + 2]) / (2.0 * h)
            else:
                d = (sols[pos + 1][loc - 1] - sols[pos - 1][loc + 1]) / (2.0 * h)
            g[loc] = d / ro[pos]
        out.append(g)
    return ClassicalKernel("marchenko", h, idxs, out, domain_end=fam.domain_end)


def classical_kernel_from_family(fam: ControlFamily, kind: str) -> ClassicalKernel:
    """Transform a control family into a classical kernel.

    gl:        L(xi, t) = f_xi(xi, t) / f(xi, xi),  f(xi, t) = f^xi(xi - t)
    krein:     g(xi, t) = f^xi(xi - |t|)  (even by construction)
    pariiskii: G(xi, t) = g_xi(xi, t) / g(xi, xi)
    marchenko: g(xi, tau) = f_xi(xi, tau) / f^xi(xi)

    xi-derivatives use centered stencils across the family with one-sided
    closures at the first and last xi; diagonal values use the chain rule
    through the readout curve.
    """
    if len(fam.xi_indices) < 5:
        raise ValueError("xi-differentiation needs at least 5 family members")
    if kind == "gl":
        if fam.system != "dirichlet":
            raise ValueError("gl kernel needs a Dirichlet family")
        return _gl_kernel(fam)
    if kind == "krein":
        if fam.system != "neumann":
            raise ValueError("krein kernel needs a Neumann family")
        return _krein_kernel(fam)
    if kind == "pariiskii":
        if fam.system != "neumann":
            raise ValueError("pariiskii kernel needs a Neumann family")
        return _pariiskii_kernel(fam)
    if kind == "marchenko":
        if fam.system != "scattering":
            raise ValueError("marchenko kernel needs a scattering family")
        return _marchenko_kernel(fam)
    raise ValueError(f"unknown kernel kind {kind!r}")


def solve_classical(
    kind: str,
    kernel: ResponseKernel,
    xi: float,
    k: Optional[float] = None,
    ridge: float = 0.0,
) -> ClassicalKernel:
    """Direct Nystrom solve of one classical equation at a single xi.

    Independent of any control family; serves as the cross-validation
    oracle for classical_kernel_from_family.
    """
    h = kernel.r.grid.step
    j = int(round(xi / h))
    if abs(j * h - xi) > 1e-9 * max(xi, 1.0):
        raise ValueError("xi must lie on the kernel grid")

    if kind == "gl":
        if kernel.system != "dirichlet":
            raise ValueError("gl equation needs a Dirichlet kernel")
        grid = UniformGrid(j * h, j)
        idx = np.arange(j + 1)
        p = kernel.p.values
        fmat = p[idx[:, None] + idx[None, :]] - p[np.abs(idx[:, None] - idx[None, :])]
        op = DenseOperator.from_kernel(grid, fmat, diag=1.0, symmetrize=True)
        rhs = SampledFunction(grid, -(p[idx + j] - p[np.abs(idx - j)]))
        sol = solve_fredholm2(op, rhs, ridge=ridge)
        return ClassicalKernel("gl", h, np.array([j]), [sol.values])

    if kind in ("krein", "pariiskii"):
        if kernel.system != "neumann":
            raise ValueError(f"{kind} equation needs a Neumann kernel")
        from .numerics import differentiate

        rp = differentiate(kernel.r, 1).values
        r0 = float(kernel.r.values[0])
        grid = UniformGrid(2 * j * h, 2 * j)  # [-xi, xi] shifted to [0, 2 xi]
        idx = np.arange(2 * j + 1)
        ker = -0.5 * rp[np.abs(idx[:, None] - idx[None, :])]
        op = DenseOperator.from_kernel(grid, ker, diag=-r0, symmetrize=True)
        if kind == "krein":
            rhs = np.ones(2 * j + 1)
        else:
            rhs = 0.5 * (rp[idx] + rp[2 * j - idx])
        sol = solve_fredholm2(op, SampledFunction(grid, rhs), ridge=ridge)
        return ClassicalKernel(kind, h, np.array([j]), [sol.values])

    if kind == "marchenko":
        if kernel.system != "scattering":
            raise ValueError("marchenko equation needs a scattering kernel")
        grid = kernel.r.grid
        n_grid = grid.n_steps
        rpad = np.concatenate([kernel.r.values, np.zeros(grid.n_nodes + 1)])
        j_hi = min(int(np.ceil(2.0 * kernel.support_bound / h)) - j + 1, n_grid)
        glob = np.arange(j, n_grid + 1)
        rhs_full = rpad[glob + j]
        if j_hi <= j + 1:
            return ClassicalKernel("marchenko", h, np.array([j]), [rhs_full], domain_end=grid.end)
        m = j_hi - j
        w = np.full(m + 1, h)
        w[0] = w[-1] = 0.5 * h
        sw = np.sqrt(w)
        loc = np.arange(m + 1)
        ker = rpad[2 * j + loc[:, None] + loc[None, :]]
        a = sw[:, None] * ker * sw[None, :]
        a[np.diag_indices_from(a)] += 1.0 + ridge
        a = 0.5 * (a + a.T)
        c, lowflag = sla.cho_factor(a, lower=True, check_finite=False)
        g_block = sla.cho_solve((c, lowflag), sw * rhs_full[: m + 1], check_finite=False) / sw
        g = np.concatenate([g_block, rhs_full[m + 1 :]])
        return ClassicalKernel("marchenko", h, np.array([j]), [g], domain_end=grid.end)

    raise ValueError(f"unknown kernel kind {kind!r}")


# ---------------------------------------------------------------------------
# singular controls, visualization, inverse control operator
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SingularControl:
    """Delta-plus-regular control steering the system to a point mass at x(xi)."""

    xi: float
    delay: float
    amplitude: float
    regular: SampledFunction  # on [0, T]; the delta sits at t = delay


def _shifted_value(fam: ControlFamily, pos: int, j: int, n: int) -> float:
    """f^{T, xi}(t_j) for xi = xi_indices[pos]; zero ahead of the delay."""
    i = fam.xi_indices[pos]
    loc = j - (n - i)
    if loc < 0:
        return 0.0
    return float(fam.solutions[pos][loc])


def _regular_part(fam: ControlFamily, pos: int, n: int) -> np.ndarray:
    """Classical xi-derivative of the delayed family away from the jump."""
    h = fam.step
    i = fam.xi_indices[pos]
    first, last = 0, len(fam.xi_indices) - 1
    vals = np.zeros(n + 1)
    for j in range(n - i + 1, n + 1):
        if first < pos < last:
            d = (_shifted_value(fam, pos + 1, j, n) - _shifted_value(fam, pos - 1, j, n)) / (2.0 * h)
        elif pos == first:
            d = (
                -3.0 * _shifted_value(fam, pos, j, n)
                + 4.0 * _shifted_value(fam, pos + 1, j, n)
                - _shifted_value(fam, pos + 2, j, n)
            ) / (2.0 * h)
        else:
            d = (
                3.0 * _shifted_value(fam, pos, j, n)
                - 4.0 * _shifted_value(fam, pos - 1, j, n)
                + _shifted_value(fam, pos - 2, j, n)
            ) / (2.0 * h)
        vals[j] = d
    if n - i >= 0 and n - i + 1 <= n:
        vals[n - i] = vals[n - i + 1]  # continuity at the jump foot
    return vals


def singular_control(fam: ControlFamily, xi: float) -> SingularControl:
    """Delta amplitude and regular part of the distributional control g^{T, xi}.

    The amplitude is the family readout f^xi(0) (the jump of the delayed
    control at t = T - xi); the regular part is the classical xi-derivative
    of the delayed family divided by the amplitude.
    """
    if fam.system != "dirichlet":
        raise ValueError("singular controls are built from a Dirichlet family")
    h = fam.step
    n = int(fam.xi_indices[-1])
    j = int(round(xi / h))
    pos = np.searchsorted(fam.xi_indices, j)
    if pos >= len(fam.xi_indices) or fam.xi_indices[pos] != j:
        raise KeyError(f"xi = {xi} is not in the family")
    amplitude = float(fam.readouts[pos])
    if abs(amplitude) < NORMALIZER_FLOOR:
        raise DegenerateKernelError(f"readout at xi = {xi} below {NORMALIZER_FLOOR}")
    grid = UniformGrid(n * h, n)
    regular = _regular_part(fam, int(pos), n) / amplitude
    return SingularControl(
        xi=j * h,
        delay=(n - j) * h,
        amplitude=amplitude,
        regular=SampledFunction(grid, regular),
    )


def visualize_wave(connecting, sc: SingularControl, f: SampledFunction) -> float:
    """Estimate the interior wave value u^f(x(xi), T) from boundary data only.

    Pairs the connecting operator with the singular control: the delta part
    contributes (C f)(T - xi) exactly (by symmetry of C), the regular part
    a plain quadrature.
    """
    if f.grid != connecting.grid:
        raise ValueError("control must live on the connecting-operator grid")
    applied = connecting.op.apply(f.values)
    j_delay = int(round(sc.delay / f.grid.step))
    delta_part = float(applied[j_delay])
    w = trapezoid_weights(f.grid)
    regular_part = float(np.sum(w * sc.regular.values * applied))
    return delta_part + regular_part


def apply_inverse_control_operator(fam: ControlFamily, a: SampledFunction) -> SampledFunction:
    """Control reproducing the state a: the kernel of the inverse control map.

    Superposes the singular controls over xi weighted by a(xi): delta parts
    resample a (t -> a(T - t)); regular parts are integrated over xi by
    trapezoid.  Stated for the unit-speed Dirichlet system, where the state
    coordinate equals the travel time.
    """
    if fam.system != "dirichlet":
        raise ValueError("inverse control operator needs a Dirichlet family")
    h = fam.step
    n = int(fam.xi_indices[-1])
    grid = UniformGrid(n * h, n)
    if abs(a.grid.end - grid.end) > 1e-9 or a.grid.n_steps != n:
        raise ValueError("state must be sampled on [0, x(T)] with the family step")
    out = a.values[::-1].astype(float).copy()  # delta parts: a(T - t)
    ro = fam.readouts
    for pos, i in enumerate(fam.xi_indices):
        amp = ro[pos]
        if abs(amp) < NORMALIZER_FLOOR:
            raise DegenerateKernelError(f"readout at xi = {i * h} below {NORMALIZER_FLOOR}")
        weight = h if 0 < pos < len(fam.xi_indices) - 1 else 0.5 * h
        regular = _regular_part(fam, pos, n) / amp
        out += weight * regular * float(a.values[i])
    return SampledFunction(grid, out)


def transformation_apply(L: ClassicalKernel, lam: float, x: float) -> float:
    """Evaluate psi(x, lam) = s(x) + int_0^x L(x, t) s(t) dt, s = sin(sqrt(lam) t)/sqrt(lam).

    Maps the unperturbed eigenparameter solution to the perturbed one
    through the Gelfand-Levitan kernel; lam = 0 uses the limit s(t) = t.
    Linear interpolation between the two bracketing xi slices.
    """
    if L.kind != "gl":
        raise ValueError("transformation operator uses the gl kernel")
    if lam < 0.0:
        raise ValueError("lam must be nonnegative")
    h = L.step

    def s_values(t):
        if lam == 0.0:
            return t
        root = np.sqrt(lam)
        return np.sin(root * t) / root

    def psi_at(j: int) -> float:
        pos = int(np.searchsorted(L.xi_indices, j))
        if pos >= len(L.xi_indices) or L.xi_indices[pos] != j:
            raise ValueError(f"no kernel slice at xi index {j}")
        t = h * np.arange(j + 1)
        w = np.full(j + 1, h)
        w[0] = w[-1] = 0.5 * h
        return float(s_values(j * h) + np.sum(w * L.slices[pos] * s_values(t)))

    first, last = int(L.xi_indices[0]), int(L.xi_indices[-1])
    if x > last * h * (1.0 + 1e-12):
        raise ValueError("x beyond the kernel domain")
    if x < first * h:
        # below the first stored slice the kernel correction is O(x); blend
        # the unperturbed value with the first slice
        frac = x / (first * h)
        return float((1.0 - frac) * s_values(x) + frac * psi_at(first))
    j_lo = min(int(np.floor(x / h)), last)
    j_hi = min(j_lo + 1, last)
    lo = psi_at(j_lo)
    if j_hi == j_lo:
        return lo
    frac = (x - j_lo * h) / h
    return float((1.0 - frac) * lo + frac * psi_at(j_hi))
