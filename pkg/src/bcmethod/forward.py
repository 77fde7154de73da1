"""Finite-difference wave solvers for the three dynamical systems
(Dirichlet boundary control, Neumann boundary control, and scattering by
incoming waves), trace extraction, response-kernel synthesis, and direct
application of the control operators.

The solvers are explicit second-order leapfrog schemes.  Half-line systems
put the far wall beyond the domain of influence of the recorded traces, so
no absorbing layers are needed; the scattering system is initialized in the
free region with the exact incoming d'Alembert pair and carries its
artificial boundary at negative x, outside the influence cone of every
recorded sample (checked, not assumed).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .media import MediumProfile, build_eikonal
from .numerics import (
    SampledFunction,
    UniformGrid,
    cumulative_trapezoid,
    differentiate,
)

SYSTEMS = ("dirichlet", "neumann", "scattering")

CFL_RATIO = 0.9


class CFLViolationError(ValueError):
    """Requested step sizes break h_t <= 0.9 h_x min sqrt(rho)."""


class DomainAuditError(ValueError):
    """A recording window intersects the influence cone of an artificial corner."""


@dataclass(frozen=True, eq=False)
class WaveField:
    """Space-time samples u[j, i] = u(x_start + i h_x, t_start + j h_t)."""

    system: str
    u: np.ndarray
    h_x: float
    h_t: float
    x_start: float = 0.0
    t_start: float = 0.0

    @property
    def x_nodes(self) -> np.ndarray:
        return self.x_start + self.h_x * np.arange(self.u.shape[1])

    @property
    def t_nodes(self) -> np.ndarray:
        return self.t_start + self.h_t * np.arange(self.u.shape[0])


@dataclass(frozen=True, eq=False)
class ResponseKernel:
    """Complete inverse data for one system: sampled kernel plus jump data.

    ``r`` lives on [0, 2T] for the boundary systems and on [0, 2a + pad]
    for scattering.  ``alpha`` and ``beta`` are the impedance jump
    coefficients sqrt(rho(0)) and -rho'(0)/(4 rho(0)); ``p`` is the exact
    trapezoid antiderivative of r/2 (Dirichlet only); ``support_bound`` is
    the potential support radius a (scattering only); ``pulse_width`` is
    the probe width used during scattering extraction.
    """

    system: str
    T: float
    r: SampledFunction
    alpha: float = 1.0
    beta: float = 0.0
    p: Optional[SampledFunction] = None
    support_bound: Optional[float] = None
    pulse_width: Optional[float] = None

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise ValueError(f"unknown system {self.system!r}")
        if self.system == "dirichlet":
            if self.p is None:
                object.__setattr__(
                    self,
                    "p",
                    self.r.with_values(
                        0.5 * cumulative_trapezoid(self.r.values, self.r.grid.step)
                    ),
                )
            p = self.p
            expected = 0.5 * cumulative_trapezoid(self.r.values, self.r.grid.step)
            scale = max(np.max(np.abs(p.values)), 1.0)
            if p.values[0] != 0.0 or np.max(np.abs(p.values - expected)) > 1e-12 * scale:
                raise ValueError("p must be the exact trapezoid antiderivative of r/2")
        if self.system == "scattering":
            if self.support_bound is None:
                raise ValueError("scattering kernel needs the support bound a")

    @classmethod
    def from_samples(
        cls,
        system: str,
        grid: UniformGrid,
        values: np.ndarray,
        alpha: float = 1.0,
        beta: float = 0.0,
        support_bound: Optional[float] = None,
        pulse_width: Optional[float] = None,
    ) -> "ResponseKernel":
        horizon = grid.end / 2.0 if system in ("dirichlet", "neumann") else grid.end
        return cls(
            system=system,
            T=horizon,
            r=SampledFunction(grid, values),
            alpha=alpha,
            beta=beta,
            support_bound=support_bound,
            pulse_width=pulse_width,
        )

    def check_scattering_support(self, rel_tol: float = 5e-2) -> None:
        if self.system != "scattering":
            return
        tail = self.r.grid.nodes > 2.0 * self.support_bound
        if not np.any(tail):
            return
        scale = max(np.max(np.abs(self.r.values)), 1e-300)
        worst = np.max(np.abs(self.r.values[tail]))
        if worst > rel_tol * scale:
            raise ValueError(
                f"kernel should vanish beyond 2a; found {worst:.3e} vs scale {scale:.3e}"
            )

    def truncated_below(self, tau0: float) -> "ResponseKernel":
        """Zero the kernel for tau < tau0 (locality experiments)."""
        vals = self.r.values.copy()
        vals[self.r.grid.nodes < tau0] = 0.0
        return ResponseKernel(
            system=self.system,
            T=self.T,
            r=self.r.with_values(vals),
            alpha=self.alpha,
            beta=self.beta,
            p=None if self.system == "dirichlet" else self.p,
            support_bound=self.support_bound,
            pulse_width=self.pulse_width,
        )


# ---------------------------------------------------------------------------
# half-line leapfrog driver (Dirichlet / Neumann control at x = 0)
# ---------------------------------------------------------------------------


def _domain_length(m: MediumProfile, horizon: float, pad_factor: float = 1.05) -> float:
    """Length X with travel time tau(X) >= pad_factor * horizon.

    Beyond that, reflections from the far wall cannot reach x = 0 within
    the horizon.  Uses the constant-density extension explicitly.
    """
    eik = build_eikonal(m, n=4 * m.n_cells)
    tau_end = float(eik.tau_of_x.values[-1])
    target = pad_factor * horizon
    if tau_end >= target:
        return float(eik.x_at(target))
    return m.x_end + (target - tau_end) / float(np.sqrt(m.rho_at(m.x_end)))


def _control_values(control, t_nodes: np.ndarray) -> np.ndarray:
    if callable(control):
        vals = np.asarray(control(t_nodes), dtype=float)
    else:
        vals = np.interp(t_nodes, control.grid.nodes, control.values)
    return vals


def _run_halfline(
    system: str,
    m: MediumProfile,
    control,
    horizon: float,
    n_time: int,
    h_x: Optional[float] = None,
    keep_field: bool = False,
    trace: Optional[str] = None,
    slice_steps: Optional[np.ndarray] = None,
    pad_factor: float = 1.05,
):
    """March the boundary-controlled wave and record what was asked for.

    Returns (field or None, trace array or None, slices dict, x_nodes, h_x, h_t).
    """
    h_t = horizon / n_time
    min_sr = m.min_sqrt_rho()
    if h_x is None:
        h_x = h_t / (CFL_RATIO * min_sr)
    elif h_t > CFL_RATIO * h_x * min_sr * (1.0 + 1e-12):
        raise CFLViolationError(
            f"h_t = {h_t:.3e} exceeds {CFL_RATIO} * h_x * min sqrt(rho) = "
            f"{CFL_RATIO * h_x * min_sr:.3e}"
        )
    length = _domain_length(m, horizon, pad_factor) + 4.0 * h_x
    n_x = int(np.ceil(length / h_x))
    x = h_x * np.arange(n_x + 1)
    rho = m.rho_at(x)
    q = m.q_at(x)

    t_nodes = h_t * np.arange(n_time + 1)
    f = _control_values(control, t_nodes)
    if abs(f[0]) > 1e-12:
        raise ValueError(f"control must vanish at t = 0, got {f[0]:.3e}")

    # Discrete travel times: the exact solution vanishes ahead of the
    # front, so returned fields and slices are zeroed there.  (Masking
    # *during* the march would feed node-scale perturbations back into the
    # stencil and pollute the traces, so it is applied to outputs only.)
    tau = cumulative_trapezoid(np.sqrt(rho), h_x)
    front = np.searchsorted(tau, t_nodes + 1.5 * h_t, side="right")

    coef = h_t**2 / rho
    lam = 1.0 / h_x**2

    u_prev = np.zeros(n_x + 1)
    u_curr = np.zeros(n_x + 1)
    if system == "dirichlet":
        u_curr[0] = f[1]

    field = None
    if keep_field:
        field = np.zeros((n_time + 1, n_x + 1))
        field[1] = u_curr
    traces = np.zeros(n_time + 1) if trace else None
    slices = {}
    want = set(int(s) for s in slice_steps) if slice_steps is not None else set()

    def record(j, curr):
        if traces is not None:
            if trace == "du_dx_at_0":
                traces[j] = (-3.0 * curr[0] + 4.0 * curr[1] - curr[2]) / (2.0 * h_x)
            else:  # u_at_0
                traces[j] = curr[0]
        if j in want:
            masked = curr.copy()
            masked[front[j] :] = 0.0
            slices[j] = masked

    record(0, u_prev)
    record(1, u_curr)

    for j in range(1, n_time):
        u_next = np.empty(n_x + 1)
        u_next[1:-1] = (
            2.0 * u_curr[1:-1]
            - u_prev[1:-1]
            + coef[1:-1]
            * (lam * (u_curr[2:] - 2.0 * u_curr[1:-1] + u_curr[:-2]) - q[1:-1] * u_curr[1:-1])
        )
        u_next[-1] = 0.0
        if system == "dirichlet":
            u_next[0] = f[j + 1]
        else:  # ghost node: (u_1 - u_{-1}) / (2 h_x) = control
            u_next[0] = (
                2.0 * u_curr[0]
                - u_prev[0]
                + coef[0]
                * (lam * (2.0 * u_curr[1] - 2.0 * u_curr[0] - 2.0 * h_x * f[j]) - q[0] * u_curr[0])
            )
        u_prev, u_curr = u_curr, u_next
        if keep_field:
            field[j + 1] = u_curr
        record(j + 1, u_curr)

    if keep_field:
        for j in range(n_time + 1):
            field[j, front[j] :] = 0.0
    return field, traces, slices, x, h_x, h_t


# ---------------------------------------------------------------------------
# scattering driver (incoming wave from x = +infinity, potential on [0, a])
# ---------------------------------------------------------------------------


def _run_scattering(
    m: MediumProfile,
    incoming: Callable,
    support: tuple,
    t_end: float,
    h_x: float,
    x_left: float = 0.0,
    x_right: Optional[float] = None,
    record_x: Optional[float] = None,
    record_from: Optional[float] = None,
    slice_times: Optional[np.ndarray] = None,
    keep_field: bool = False,
    cfl: float = CFL_RATIO,
):
    """March the scattering system from the free region.

    ``incoming`` is the incoming profile f(tau) with support in
    (support[0], support[1]), 0 < support[0].  The field starts at a time
    t0 < -a - margin as the exact d'Alembert pair f(x + t).  Hard walls at
    x_left (<= 0) and x_right are audited against every recorded point.
    """
    if m.support_bound is None:
        raise ValueError("scattering needs a medium with a support bound")
    if np.max(np.abs(m.rho_at(np.linspace(0, m.x_end, 64)) - 1.0)) > 1e-12:
        raise ValueError("scattering system assumes unit density")
    a = m.support_bound
    s1, s2 = support
    if s1 <= 0.0:
        raise ValueError("incoming profile must be supported in (0, infinity)")

    if not 0.0 < cfl <= CFL_RATIO:
        raise CFLViolationError(f"cfl must lie in (0, {CFL_RATIO}], got {cfl}")
    h_t = cfl * h_x
    margin = 0.2 + 2.0 * h_x
    t0 = -(a + margin + max(0.0, s2 - s1))
    if record_from is not None:
        t0 = min(t0, record_from - 2.0 * h_t)
    if slice_times is not None:
        t0 = min(t0, float(np.min(slice_times)) - 2.0 * h_t)
    n_time = int(np.ceil((t_end - t0) / h_t))
    t0 = t_end - n_time * h_t  # land exactly on t_end
    x_left = -h_x * np.ceil(-x_left / h_x)  # keep x = 0 on the grid

    if x_right is None:
        fit = s2 - t0 + 6.0 * h_x
        quiet = 0.5 * (t_end + (record_x if record_x is not None else 0.0)) + a + 0.2
        x_right = max(fit, quiet)
    n_x = int(np.ceil((x_right - x_left) / h_x))
    x = x_left + h_x * np.arange(n_x + 1)

    # Domain-of-dependence audit: the left wall activates when the incident
    # front x = s1 - t reaches it; its influence cone must miss every
    # recorded point.
    corner_left_t = s1 - x_left
    audited = []
    if record_x is not None:
        last_t = t_end
        audited.append((record_x, last_t))
    if slice_times is not None:
        for ts in np.atleast_1d(slice_times):
            audited.append((max(0.0, x_left), float(ts)))
    for (xa, ta) in audited:
        if ta >= corner_left_t + (xa - x_left):
            raise DomainAuditError(
                f"recording at (x={xa:.3f}, t={ta:.3f}) lies inside the influence "
                f"cone of the left wall corner (x={x_left:.3f}, t={corner_left_t:.3f})"
            )

    q = m.q_at(np.clip(x, 0.0, None))
    q[x < 0.0] = 0.0

    u_prev = incoming(x + t0)
    u_curr = incoming(x + t0 + h_t)
    u_prev[0] = u_prev[-1] = 0.0
    u_curr[0] = u_curr[-1] = 0.0

    coef = h_t**2
    lam = 1.0 / h_x**2

    field = np.zeros((n_time + 1, n_x + 1)) if keep_field else None
    if keep_field:
        field[0] = u_prev
        field[1] = u_curr
    rec = np.full(n_time + 1, np.nan)
    i_rec = int(round((record_x - x_left) / h_x)) if record_x is not None else None
    want = {}
    if slice_times is not None:
        for ts in np.atleast_1d(slice_times):
            j = int(round((float(ts) - t0) / h_t))
            want[j] = float(ts)
    slices = {}

    def record(j, curr):
        if i_rec is not None:
            rec[j] = curr[i_rec]
        if j in want:
            slices[want[j]] = curr.copy()

    record(0, u_prev)
    record(1, u_curr)
    for j in range(1, n_time):
        u_next = np.empty(n_x + 1)
        u_next[1:-1] = (
            2.0 * u_curr[1:-1]
            - u_prev[1:-1]
            + coef * (lam * (u_curr[2:] - 2.0 * u_curr[1:-1] + u_curr[:-2]) - q[1:-1] * u_curr[1:-1])
        )
        u_next[0] = 0.0
        u_next[-1] = 0.0
        u_prev, u_curr = u_curr, u_next
        if keep_field:
            field[j + 1] = u_curr
        record(j + 1, u_curr)

    t_nodes = t0 + h_t * np.arange(n_time + 1)
    return field, rec, slices, x, t_nodes, h_t


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def solve_wave(
    system: str,
    m: MediumProfile,
    control: Union[SampledFunction, Callable],
    horizon: float,
    n_time: Optional[int] = None,
    h_x: Optional[float] = None,
) -> WaveField:
    """Run the leapfrog solver and return the full field.

    For the boundary systems the control is a function of t on [0, horizon]
    with control(0) = 0; for scattering it is the incoming profile f(tau)
    supported in (0, infinity) and ``horizon`` is the final recorded time
    (t = 0 recovers the control-operator state).
    """
    if system not in SYSTEMS:
        raise ValueError(f"unknown system {system!r}")
    if system in ("dirichlet", "neumann"):
        if n_time is None:
            if not isinstance(control, SampledFunction):
                raise ValueError("n_time is required for callable controls")
            n_time = control.grid.n_steps
        field, _, _, x, hx, ht = _run_halfline(
            system, m, control, horizon, n_time, h_x=h_x, keep_field=True
        )
        return WaveField(system=system, u=field, h_x=hx, h_t=ht)

    if not isinstance(control, SampledFunction):
        raise ValueError("scattering control must be a SampledFunction profile")
    nz = np.nonzero(np.abs(control.values) > 1e-14 * max(np.max(np.abs(control.values)), 1e-300))[0]
    if nz.size == 0:
        s1, s2 = 0.25 * control.grid.end, 0.5 * control.grid.end
    else:
        s1 = max(control.grid.nodes[nz[0]] - control.grid.step, 0.5 * control.grid.step)
        s2 = control.grid.nodes[nz[-1]] + control.grid.step
    if h_x is None:
        h_x = 0.5 * control.grid.step
    field, _, _, x, t_nodes, ht = _run_scattering(
        m,
        lambda tau: control(tau) * (tau > 0.0),
        (s1, s2),
        t_end=horizon,
        h_x=h_x,
        keep_field=True,
        slice_times=np.array([horizon]),
    )
    return WaveField(
        system=system, u=field, h_x=h_x, h_t=ht, x_start=float(x[0]), t_start=float(t_nodes[0])
    )


def _alpha_beta(m: MediumProfile) -> tuple:
    h = m.grid.step
    rho0 = float(m.rho[0])
    drho0 = float((-3.0 * m.rho[0] + 4.0 * m.rho[1] - m.rho[2]) / (2.0 * h))
    return float(np.sqrt(rho0)), float(-drho0 / (4.0 * rho0))


def _clean_left_edge(
    values: np.ndarray, grid: UniformGrid, z: int, fit_len: int = 12, degree: int = 3
) -> np.ndarray:
    """Replace the first z nodes by a cubic extrapolated from [z, z+fit_len).

    The probe onsets pollute the first few kernel samples; the kernels are
    smooth, so a short polynomial extension from the clean region is
    accurate to O(((z + fit_len) h)^4).
    """
    out = values.copy()
    idx = np.arange(z, min(z + fit_len, grid.n_nodes))
    coeffs = np.polyfit(grid.nodes[idx], out[idx], degree)
    out[:z] = np.polyval(coeffs, grid.nodes[:z])
    return out


# C-infinity step and bump tables for probe onsets.  A probe that starts
# with a genuine kink (f(t) = t has f'(0) = 1) drags a Lipschitz kink along
# the wavefront and the leapfrog backscatters O(h^(2/3)) broadband noise
# into the traces, which differentiation then amplifies past usefulness;
# a flat smooth onset removes the kink entirely.
_Z = np.linspace(0.0, 1.0, 4097)
with np.errstate(divide="ignore", over="ignore", under="ignore"):
    _PHI = np.where(
        (_Z > 0.0) & (_Z < 1.0), np.exp(-1.0 / np.clip(_Z * (1.0 - _Z), 1e-300, None)), 0.0
    )
_PHI_MASS = float(np.trapezoid(_PHI, _Z))
_PHI_HAT = _PHI / _PHI_MASS  # unit-mass bump on (0, 1)
_STEP = np.concatenate(([0.0], np.cumsum((_PHI_HAT[1:] + _PHI_HAT[:-1]) * 0.5 * (_Z[1] - _Z[0]))))
_STEP /= _STEP[-1]
# equal-area constant: area clipped by the smooth onset of t*S(t/d)
_ONSET_AREA = float(np.trapezoid(_Z * (1.0 - _STEP), _Z))


def _smooth_step(z: np.ndarray) -> np.ndarray:
    return np.interp(z, _Z, _STEP, left=0.0, right=1.0)


def _unit_bump(z: np.ndarray) -> np.ndarray:
    return np.interp(z, _Z, _PHI_HAT, left=0.0, right=0.0)


def _decimate_trace(values: np.ndarray, refine: int, rel_cutoff: float = 0.4) -> np.ndarray:
    """Anti-aliased decimation of a solver-rate trace onto the kernel grid.

    The marching scheme sheds a weak dispersive wake at solver-grid scale;
    plain subsampling would alias it onto the kernel grid where the
    differentiations amplify it.  A zero-phase FIR low-pass at the kernel
    Nyquist removes the wake first (odd reflection keeps the ends linear).
    """
    if refine == 1:
        return values.copy()
    from scipy.signal import firwin

    fir = firwin(8 * refine + 1, rel_cutoff / refine)
    half = len(fir) // 2
    left = 2.0 * values[0] - values[half:0:-1]
    right = 2.0 * values[-1] - values[-2 : -half - 2 : -1]
    padded = np.concatenate([left, values, right])
    smooth = np.convolve(padded, fir, mode="valid")
    return smooth[::refine]


def _extract_dirichlet(
    m: MediumProfile, T: float, n: int, refine: int, onset_steps: int = 8
) -> ResponseKernel:
    # Probe f(t) = t away from a smooth, equal-area onset of width
    # delta = onset_steps * h: the Neumann trace then satisfies
    # g = -alpha + beta t + J^2 r for t > delta up to O(delta^3), so two
    # differentiations of (g + alpha - beta t) give r, and p is rebuilt as
    # the exact antiderivative of r/2 (the second derivative is immediately
    # re-integrated, so the noise floor stays at the one-differentiation
    # level).  The onset window itself is refilled by extrapolation.
    grid2 = UniformGrid(2.0 * T, 2 * n)
    h = grid2.step
    delta = onset_steps * h

    def probe(t):
        t = np.asarray(t, dtype=float)
        z = t / delta
        return t * _smooth_step(z) + _ONSET_AREA * delta * _unit_bump(z)

    n_time = 2 * n * refine
    _, g, _, _, _, _ = _run_halfline(
        "dirichlet",
        m,
        probe,
        2.0 * T,
        n_time,
        trace="du_dx_at_0",
    )
    g = _decimate_trace(g, refine)
    alpha, beta = _alpha_beta(m)
    t = grid2.nodes
    a_fun = SampledFunction(grid2, g + alpha - beta * t)
    r = differentiate(differentiate(a_fun, 1), 1)
    # polluted zone: onset startup burst (~2.5 delta) plus the decimation
    # filter's half width plus the stencil
    cleaned = _clean_left_edge(r.values, grid2, int(np.ceil(2.5 * onset_steps)) + 7)
    return ResponseKernel(
        system="dirichlet", T=T, r=r.with_values(cleaned), alpha=alpha, beta=beta
    )


def _extract_neumann(
    m: MediumProfile, T: float, n: int, refine: int, ramp_steps: int = 4
) -> ResponseKernel:
    # Probe = unit step mollified by a smooth ramp (ramp_steps kernel
    # steps wide); the trace is the running integral of r smeared by the
    # ramp.  One Richardson step over ramp widths (d, 2d) cancels the O(d)
    # smear; the ramp window is then refilled by extrapolation.
    grid2 = UniformGrid(2.0 * T, 2 * n)
    n_time = 2 * n * refine
    h_t = 2.0 * T / n_time
    d = ramp_steps * grid2.step

    def run(width):
        _, tr, _, _, _, _ = _run_halfline(
            "neumann",
            m,
            lambda t: _smooth_step(np.asarray(t, dtype=float) / width),
            2.0 * T,
            n_time,
            trace="u_at_0",
        )
        return _decimate_trace(tr, refine)

    trace = 2.0 * run(d) - run(2.0 * d)
    r = differentiate(SampledFunction(grid2, trace), 1)
    # polluted zone: wider ramp transient (2d) plus the decimation filter's
    # half width (4 kernel nodes) plus the derivative stencil
    z = 2 * ramp_steps + 4 + 2
    cleaned = _clean_left_edge(r.values, grid2, z)
    alpha, beta = _alpha_beta(m)
    return ResponseKernel(
        system="neumann", T=T, r=r.with_values(cleaned), alpha=alpha, beta=beta
    )


_BUMP_GRID = np.linspace(-1.0, 1.0, 4001)
_BUMP_SHAPE = np.exp(-1.0 / np.clip(1.0 - _BUMP_GRID**2, 1e-300, None)) * (
    np.abs(_BUMP_GRID) < 1.0
)
_BUMP_MASS = float(np.trapezoid(_BUMP_SHAPE, _BUMP_GRID))  # over z in (-1, 1)
_BUMP_M2 = float(np.trapezoid(_BUMP_SHAPE * _BUMP_GRID**2, _BUMP_GRID)) / _BUMP_MASS


def _extract_scattering(m: MediumProfile, n: int, pad: float, refine: int) -> ResponseKernel:
    # Narrow incoming bump of unit mass, eight kernel steps wide: the
    # reflected record at x_rec is r convolved with the bump, read along
    # the characteristic theta = x_rec - t + s0.  The incident part is
    # subtracted as the *discrete* free-space solution (a second run with
    # q = 0 on the same grid): that cancels the pulse's dispersive wake,
    # whose continuous re-scattering off the potential would otherwise
    # drown the late (small-theta, multiple-scattering) part of the
    # kernel.  The pulse must stay well resolved for the same reason:
    # 16 * refine cells across its width.  The symmetric bump's second
    # moment is removed afterwards, leaving O(w^4) + O(h^2) probe error.
    a = float(m.support_bound)
    tau_max = 2.0 * a + pad
    grid = UniformGrid(tau_max, n)
    h = grid.step
    w = 8.0 * h
    h_x = w / (16.0 * refine)
    half = 0.5 * w
    s0 = w
    scale = 1.0 / (half * _BUMP_MASS)

    def bump(tau):
        z = (np.asarray(tau, dtype=float) - s0) / half
        out = np.zeros_like(z)
        inside = np.abs(z) < 1.0
        out[inside] = scale * np.exp(-1.0 / (1.0 - z[inside] ** 2))
        return out

    x_rec = a + 2.0 * w + 0.2
    t_end = x_rec + s0
    record_from = t_end - tau_max - 2.0 * h
    # wall-bounce junk reaches x_rec at t_end + 2 |x_left|; keep that
    # margin several pulse widths wide so the smeared junk front stays out
    x_left = -(4.0 * w + 0.2)
    x_right = max(
        (s0 + half) + (a + 0.2 + w + tau_max) + 6.0 * h_x,
        0.5 * (t_end + x_rec) + a + 0.2,
    )
    free = MediumProfile(
        x_end=m.x_end,
        n_cells=m.n_cells,
        rho=np.ones(m.n_cells + 1),
        q=np.zeros(m.n_cells + 1),
        support_bound=m.support_bound,
    )
    records = {}
    for tag, medium in (("full", m), ("free", free)):
        _, rec, _, x_nodes, t_nodes, _ = _run_scattering(
            medium,
            bump,
            (s0 - half, s0 + half),
            t_end=t_end,
            h_x=h_x,
            x_left=x_left,
            x_right=x_right,
            record_x=x_rec,
            record_from=record_from,
        )
        records[tag] = rec
    x_rec_snap = float(x_nodes[int(round((x_rec - x_left) / h_x))])
    reflected = records["full"] - records["free"]
    theta = x_rec_snap - t_nodes + s0
    order = np.argsort(theta)
    raw = np.interp(grid.nodes, theta[order], reflected[order])
    m2 = _BUMP_M2 * half**2
    r = SampledFunction(grid, raw)
    corrected = raw - 0.5 * m2 * differentiate(r, 2).values
    return ResponseKernel(
        system="scattering",
        T=tau_max,
        r=SampledFunction(grid, corrected),
        alpha=1.0,
        beta=0.0,
        support_bound=a,
        pulse_width=w,
    )


def extract_response_kernel(
    system: str,
    m: MediumProfile,
    T: Optional[float] = None,
    n: int = 256,
    refine: Optional[int] = None,
    scattering_pad: float = 0.5,
) -> ResponseKernel:
    """Synthesize the inverse data of a medium by probing the FD solver.

    For the boundary systems the kernel r is produced on [0, 2T] with step
    T/n; for scattering on [0, 2a + scattering_pad].  ``refine`` is the
    internal refinement of the solver relative to the kernel grid
    (defaults: 8 for Dirichlet whose derivative trace is most sensitive to
    the solver's dispersive wake, 4 for Neumann; traces are low-pass
    decimated onto the kernel grid; 2 for scattering).
    """
    if system == "dirichlet":
        if T is None:
            raise ValueError("dirichlet extraction needs T")
        return _extract_dirichlet(m, T, n, refine or 8)
    if system == "neumann":
        if T is None:
            raise ValueError("neumann extraction needs T")
        return _extract_neumann(m, T, n, refine or 4)
    if system == "scattering":
        return _extract_scattering(m, n, scattering_pad, refine or 3)
    raise ValueError(f"unknown system {system!r}")


def apply_control_operator(
    system: str,
    m: MediumProfile,
    f: SampledFunction,
    T: Optional[float] = None,
) -> SampledFunction:
    """Map a control to its final state by running the forward solver.

    Dirichlet: u(., T); Neumann: du/dt(., T) (the well-posed target of the
    Neumann control problem); scattering: u(., 0).  Boundary-system states
    are returned on [0, x(T)] with as many steps as the control grid.
    """
    if system in ("dirichlet", "neumann"):
        if T is None:
            T = f.grid.end
        n_time = f.grid.n_steps
        h_t = T / n_time
        if system == "dirichlet":
            _, _, slices, x, _, _ = _run_halfline(
                system, m, f, T, n_time, slice_steps=np.array([n_time])
            )
            state = slices[n_time]
        else:
            _, _, slices, x, _, ht = _run_halfline(
                system,
                m,
                lambda t: np.interp(t, f.grid.nodes, f.values),
                T + h_t,
                n_time + 1,
                slice_steps=np.array([n_time - 1, n_time + 1]),
            )
            state = (slices[n_time + 1] - slices[n_time - 1]) / (2.0 * ht)
        eik = build_eikonal(m, n=4 * m.n_cells, x_end=float(x[-1]))
        x_T = float(eik.x_at(T))
        out_grid = UniformGrid(x_T, f.grid.n_steps)
        return SampledFunction(out_grid, np.interp(out_grid.nodes, x, state))

    field_time = 0.0
    wf = solve_wave("scattering", m, f, horizon=field_time)
    j0 = int(round((0.0 - wf.t_start) / wf.h_t))
    state = wf.u[j0]
    out_grid = UniformGrid(f.grid.end, f.grid.n_steps)
    return SampledFunction(out_grid, np.interp(out_grid.nodes, wf.x_nodes, state))


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def save_kernel_csv(kernel: ResponseKernel, path_or_buffer) -> None:
    """Two-column CSV ``t,r`` on the kernel's uniform grid."""
    own = isinstance(path_or_buffer, (str, bytes))
    fh = open(path_or_buffer, "w", newline="") if own else path_or_buffer
    try:
        writer = csv.writer(fh)
        writer.writerow(["t", "r"])
        for t, rv in zip(kernel.r.grid.nodes, kernel.r.values):
            writer.writerow([repr(float(t)), repr(float(rv))])
    finally:
        if own:
            fh.close()


def load_kernel_csv(
    path: str,
    system: str = "dirichlet",
    alpha: float = 1.0,
    beta: float = 0.0,
    support_bound: Optional[float] = None,
) -> ResponseKernel:
    """Rebuild a ResponseKernel from a ``t,r`` CSV plus the metadata the
    format does not carry (system tag, jump coefficients, support bound)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header[:2]] != ["t", "r"]:
            raise ValueError(f"{path}: expected header 't,r'")
        rows = [(float(row[0]), float(row[1])) for row in reader if row]
    t, rv = (np.array(col) for col in zip(*rows))
    dt = np.diff(t)
    if np.any(dt <= 0) or np.max(np.abs(dt - dt[0])) > 1e-9 * max(t[-1], 1.0):
        raise ValueError(f"{path}: t must be uniform and increasing")
    grid = UniformGrid(float(t[-1]), len(t) - 1)
    return ResponseKernel.from_samples(
        system, grid, rv, alpha=alpha, beta=beta, support_bound=support_bound
    )


def save_field_csv(field: WaveField, path_or_buffer, stride: int = 1) -> None:
    """Long-format CSV ``x,t,u`` (optionally strided in both directions)."""
    own = isinstance(path_or_buffer, (str, bytes))
    fh = open(path_or_buffer, "w", newline="") if own else path_or_buffer
    try:
        writer = csv.writer(fh)
        writer.writerow(["x", "t", "u"])
        xs = field.x_nodes[::stride]
        for j, t in enumerate(field.t_nodes[::stride]):
            row_vals = field.u[j * stride, ::stride]
            for x, uv in zip(xs, row_vals):
                writer.writerow([repr(float(x)), repr(float(t)), repr(float(uv))])
    finally:
        if own:
            fh.close()
