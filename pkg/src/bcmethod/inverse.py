"""End-to-end reconstruction pipelines: potential recovery from Dirichlet
data (Gelfand-Levitan route), density recovery from Neumann data (Krein
route), potential recovery from scattering data (Marchenko route), and a
roundtrip harness measuring self-convergence against catalog truths.

Recovered profiles differentiate the readout curve y(xi), the lowest-noise
object the families produce; division by y is protected by a zero-guard
with cubic infill, and the outermost two nodes are always excluded from
error metrics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .forward import ResponseKernel, extract_response_kernel
from .media import MediumProfile, build_eikonal, save_medium_csv
from .numerics import SampledFunction, UniformGrid, cumulative_trapezoid
from .numerics import _diff1, _diff2
from .bcp import solve_special_family
from .operators import assemble_connecting, check_admissibility

ZERO_GUARD_REL = 1e-3
EDGE_MASK = 2  # outermost nodes excluded from error metrics


@dataclass(eq=False)
class ReconstructionReport:
    """Recovered profile with masked-error metrics and convergence orders.

    sup_rel_error and l2_rel_error are normalized by the sup / l2 norm of
    the truth over the evaluation window (pointwise ratios are meaningless
    where the truth vanishes, e.g. outside a potential bump).
    """

    method: str
    n: int
    recovered: MediumProfile
    truth: Optional[MediumProfile]
    sup_rel_error: float
    l2_rel_error: float
    masked_fraction: float
    admissible: bool
    convergence_orders: List[float] = field(default_factory=list)
    ladder_errors: List[float] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "n": self.n,
            "sup_rel_error": self.sup_rel_error,
            "l2_rel_error": self.l2_rel_error,
            "masked_fraction": self.masked_fraction,
            "orders": list(self.convergence_orders),
            "admissible": self.admissible,
        }

    def save_json(self, path_or_buffer) -> None:
        own = isinstance(path_or_buffer, (str, bytes))
        fh = open(path_or_buffer, "w") if own else path_or_buffer
        try:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        finally:
            if own:
                fh.close()

    def save_profile_csv(self, path_or_buffer) -> None:
        save_medium_csv(self.recovered, path_or_buffer)


class MaskedFractionError(RuntimeError):
    """Zero guards excluded too many nodes; the data is degenerate."""


def _guarded_ratio(numer: np.ndarray, denom: np.ndarray, grid: UniformGrid):
    """numer/denom with |denom| < 1e-3 max|denom| masked and refilled by a cubic."""
    guard = np.abs(denom) < ZERO_GUARD_REL * np.max(np.abs(denom))
    masked_fraction = float(np.mean(guard))
    if masked_fraction >= 0.1:
        raise MaskedFractionError(
            f"zero guard masked {masked_fraction:.0%} of the nodes"
        )
    out = np.empty_like(numer)
    good = ~guard
    out[good] = numer[good] / denom[good]
    if np.any(guard):
        spline = CubicSpline(grid.nodes[good], out[good])
        out[guard] = spline(grid.nodes[guard])
    return out, guard, masked_fraction


def _window_errors(
    x_nodes: np.ndarray,
    recovered: np.ndarray,
    truth: np.ndarray,
    mask: np.ndarray,
    lo: float,
    hi: float,
):
    keep = (~mask) & (x_nodes >= lo) & (x_nodes <= hi)
    if not np.any(keep):
        return float("nan"), float("nan")
    err = recovered[keep] - truth[keep]
    sup = float(np.max(np.abs(err)) / max(np.max(np.abs(truth[keep])), 1e-300))
    l2 = float(np.linalg.norm(err) / max(np.linalg.norm(truth[keep]), 1e-300))
    return sup, l2


def _metric_mask(guard: np.ndarray) -> np.ndarray:
    mask = guard.copy()
    mask[:EDGE_MASK] = True
    mask[-EDGE_MASK:] = True
    return mask


def _fill_head(values: np.ndarray, h: float, known0: Optional[float]) -> np.ndarray:
    """Fill nodes 0 and 1 of a readout curve that starts at index 2.

    Node 0 comes from the target data when known, otherwise from the same
    cubic extrapolation used for node 1 (through nodes 2..5).
    """
    out = values.copy()
    xs = h * np.arange(len(values))
    fit = np.polyfit(xs[2:6], out[2:6], 3)
    out[1] = np.polyval(fit, xs[1])
    out[0] = known0 if known0 is not None else np.polyval(fit, 0.0)
    return out


def _recovery_window(method: str, x_end: float) -> tuple:
    if method == "gl":
        return 0.05 * x_end, 0.95 * x_end
    if method == "krein":
        return 0.0, 0.9 * x_end
    return 0.1, x_end - 0.1  # marchenko


def reconstruct_gl(kernel: ResponseKernel, truth: Optional[MediumProfile] = None,
                   ridge: float = 0.0) -> ReconstructionReport:
    """Potential recovery from Dirichlet data with unit density.

    Solves the family of boundary-control equations built from the
    antiderivative p, reads y(xi) = f^xi(0), and forms q = y''/y with the
    zero guard.  In this problem the travel time is the coordinate itself,
    so the recovered grid is [0, T].
    """
    if kernel.system != "dirichlet":
        raise ValueError("gl reconstruction needs Dirichlet data")
    verdict = check_admissibility(assemble_connecting(kernel))
    fam = solve_special_family("dirichlet", kernel, target=(0.0, 1.0), ridge=ridge)
    h = fam.step
    n = int(fam.xi_indices[-1])
    grid = UniformGrid(n * h, n)
    y = np.zeros(n + 1)
    y[fam.xi_indices] = fam.readouts
    y = _fill_head(y, h, known0=0.0)
    ypp = _diff2(y, h)
    q, guard, masked_fraction = _guarded_ratio(ypp, y, grid)
    recovered = MediumProfile(
        x_end=grid.end, n_cells=n, rho=np.ones(n + 1), q=q
    )
    mask = _metric_mask(guard)
    sup, l2 = float("nan"), float("nan")
    if truth is not None:
        lo, hi = _recovery_window("gl", grid.end)
        sup, l2 = _window_errors(grid.nodes, q, truth.q_at(grid.nodes), mask, lo, hi)
    return ReconstructionReport(
        method="gl",
        n=n,
        recovered=recovered,
        truth=truth,
        sup_rel_error=sup,
        l2_rel_error=l2,
        masked_fraction=masked_fraction,
        admissible=verdict.admissible,
    )


def reconstruct_krein(kernel: ResponseKernel, truth: Optional[MediumProfile] = None,
                      ridge: float = 0.0) -> ReconstructionReport:
    """Density recovery from Neumann data with zero potential.

    rho(0) is taken from the data itself (r(0) = -rho(0)^(-1/2)); readouts
    give rho along the travel-time coordinate via |f^xi(0)|^4 / rho(0), the
    space coordinate follows by integrating the slowness, and the final
    density is the squared slope of the inverted travel time.
    """
    if kernel.system != "neumann":
        raise ValueError("krein reconstruction needs Neumann data")
    verdict = check_admissibility(assemble_connecting(kernel))
    fam = solve_special_family("neumann", kernel, target=(-1.0, 0.0), ridge=ridge)
    h = fam.step
    n = int(fam.xi_indices[-1])
    r0 = float(kernel.r.values[0])
    rho0 = r0 ** (-2)

    rho_tt = np.zeros(n + 1)  # rho at x(xi) along the travel-time grid
    rho_tt[fam.xi_indices] = np.abs(fam.readouts) ** 4 / rho0
    rho_tt = _fill_head(rho_tt, h, known0=rho0)
    if np.min(rho_tt) <= 0.0:
        raise MaskedFractionError("recovered density lost positivity")

    x_of_xi = cumulative_trapezoid(rho_tt ** (-0.5), h)
    if np.any(np.diff(x_of_xi) <= 0.0):
        raise RuntimeError("recovered x(xi) is not strictly increasing")
    x_end = float(x_of_xi[-1])
    grid = UniformGrid(x_end, n)
    # tau'(x) = 1/x'(xi) along the monotone pair (x(xi), xi); differentiating
    # on the uniform xi grid keeps second order, the final regridding onto
    # the uniform x grid is interpolation only
    tau_slope = 1.0 / _diff1(x_of_xi, h)
    rho_x = np.interp(grid.nodes, x_of_xi, tau_slope**2)

    recovered = MediumProfile(
        x_end=x_end, n_cells=n, rho=np.clip(rho_x, 1e-8, None), q=np.zeros(n + 1)
    )
    guard = np.zeros(n + 1, dtype=bool)
    mask = _metric_mask(guard)
    sup, l2 = float("nan"), float("nan")
    if truth is not None:
        lo, hi = _recovery_window("krein", x_end)
        sup, l2 = _window_errors(grid.nodes, rho_x, truth.rho_at(grid.nodes), mask, lo, hi)
    return ReconstructionReport(
        method="krein",
        n=n,
        recovered=recovered,
        truth=truth,
        sup_rel_error=sup,
        l2_rel_error=l2,
        masked_fraction=0.0,
        admissible=verdict.admissible,
    )


def reconstruct_marchenko(
    kernel: ResponseKernel,
    kp: float,
    truth: Optional[MediumProfile] = None,
    x_max: Optional[float] = None,
    ridge: float = 0.0,
) -> ReconstructionReport:
    """Potential recovery from scattering data at wavenumber kp.

    Readouts give the decaying eigenparameter solution y(xi) = f^xi(xi);
    the potential is q = y''/y - kp^2 with the shared zero-guard policy
    (y stays positive for catalog media, so the guard rarely fires).
    """
    if kernel.system != "scattering":
        raise ValueError("marchenko reconstruction needs scattering data")
    if kp <= 0.0:
        raise ValueError("wavenumber must be positive")
    verdict = check_admissibility(assemble_connecting(kernel))
    fam = solve_special_family("scattering", kernel, target=kp, x_max=x_max)
    h = fam.step
    n = int(fam.xi_indices[-1])
    grid = UniformGrid(n * h, n)
    y = np.zeros(n + 1)
    y[fam.xi_indices] = fam.readouts
    if fam.xi_indices[0] == 1:
        xs = h * np.arange(n + 1)
        fit = np.polyfit(xs[1:5], y[1:5], 3)
        y[0] = np.polyval(fit, 0.0)
    else:
        y = _fill_head(y, h, known0=None)
    ypp = _diff2(y, h)
    q_plus, guard, masked_fraction = _guarded_ratio(ypp, y, grid)
    q = q_plus - kp**2
    recovered = MediumProfile(
        x_end=grid.end, n_cells=n, rho=np.ones(n + 1), q=q
    )
    mask = _metric_mask(guard)
    sup, l2 = float("nan"), float("nan")
    if truth is not None:
        lo, hi = _recovery_window("marchenko", grid.end)
        sup, l2 = _window_errors(grid.nodes, q, truth.q_at(grid.nodes), mask, lo, hi)
    return ReconstructionReport(
        method="marchenko",
        n=n,
        recovered=recovered,
        truth=truth,
        sup_rel_error=sup,
        l2_rel_error=l2,
        masked_fraction=masked_fraction,
        admissible=verdict.admissible,
    )


def _check_compatibility(m: MediumProfile, method: str) -> None:
    probe = np.linspace(0.0, m.x_end, 257)
    if method == "gl" and np.max(np.abs(m.rho_at(probe) - 1.0)) > 1e-10:
        raise ValueError("gl roundtrip needs a unit-density medium")
    if method == "krein" and np.max(np.abs(m.q_at(probe))) > 1e-10:
        raise ValueError("krein roundtrip needs a potential-free medium")
    if method == "marchenko" and m.support_bound is None:
        raise ValueError("marchenko roundtrip needs a compactly supported potential")


def roundtrip(
    m: MediumProfile,
    method: str,
    grid_ladder: Sequence[int],
    T: float = 1.0,
    k: float = 1.0,
    x_max: Optional[float] = None,
) -> ReconstructionReport:
    """Synthesize data and reconstruct over a ladder of grid sizes.

    Reports the finest-grid reconstruction, annotated with the windowed
    errors per rung and the observed convergence orders (log2 error ratios).
    """
    if method not in ("gl", "krein", "marchenko"):
        raise ValueError(f"unknown method {method!r}")
    _check_compatibility(m, method)
    errors: List[float] = []
    report: Optional[ReconstructionReport] = None
    for n in grid_ladder:
        if method == "gl":
            kernel = extract_response_kernel("dirichlet", m, T=T, n=n)
            report = reconstruct_gl(kernel, truth=m)
        elif method == "krein":
            kernel = extract_response_kernel("neumann", m, T=T, n=n)
            report = reconstruct_krein(kernel, truth=m)
        else:
            kernel = extract_response_kernel("scattering", m, n=n)
            report = reconstruct_marchenko(kernel, kp=k, truth=m, x_max=x_max)
        errors.append(report.sup_rel_error)
    orders = [
        float(np.log2(errors[i] / errors[i + 1])) for i in range(len(errors) - 1)
    ]
    report.convergence_orders = orders
    report.ladder_errors = errors
    return report
