"""Medium profiles, the travel-time change of variables, the analytic
test-medium catalog, and an independent Runge-Kutta oracle for
Sturm-Liouville targets.

A medium is a density rho(x) > 0 and a potential q(x) sampled on a uniform
spatial grid.  Catalog media carry their analytic closures so solvers can
evaluate them on any grid; CSV-loaded media fall back to cubic-spline
interpolation.  Every medium is extended *constantly* beyond its last
sample when a longer domain is requested: waves never see the extension
within their travel-time horizon, and the travel time keeps growing
without bound, as the half-line problems require.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .numerics import SampledFunction, UniformGrid, cumulative_trapezoid

MIN_DENSITY = 1e-8

CATALOG_NAMES = ("unit", "gl_rational", "krein_exp", "scatter_bump")


@dataclass(frozen=True, eq=False)
class MediumProfile:
    """Sampled density/potential pair on [0, x_end] with n_cells steps."""

    x_end: float
    n_cells: int
    rho: np.ndarray
    q: np.ndarray
    support_bound: Optional[float] = None
    rho_fn: Optional[Callable] = None
    q_fn: Optional[Callable] = None

    def __post_init__(self):
        grid = UniformGrid(self.x_end, self.n_cells)
        rho = np.asarray(self.rho, dtype=float)
        q = np.asarray(self.q, dtype=float)
        if rho.shape != (grid.n_nodes,) or q.shape != (grid.n_nodes,):
            raise ValueError("rho and q must be sampled on the profile grid")
        if not (np.all(np.isfinite(rho)) and np.all(np.isfinite(q))):
            raise ValueError("medium samples must be finite")
        if np.min(rho) < MIN_DENSITY:
            raise ValueError(f"density must stay above {MIN_DENSITY}")
        if self.support_bound is not None:
            beyond = grid.nodes > self.support_bound
            if np.any(np.abs(q[beyond]) > 0.0):
                raise ValueError("q must vanish beyond the declared support bound")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "q", q)

    @property
    def grid(self) -> UniformGrid:
        return UniformGrid(self.x_end, self.n_cells)

    def _interp(self, fn, samples, x):
        x = np.asarray(x, dtype=float)
        clipped = np.minimum(x, self.x_end)  # constant extension to the right
        if fn is not None:
            return np.asarray(fn(clipped), dtype=float)
        spline = CubicSpline(self.grid.nodes, samples)
        return spline(clipped)

    def rho_at(self, x) -> np.ndarray:
        return self._interp(self.rho_fn, self.rho, x)

    def q_at(self, x) -> np.ndarray:
        out = self._interp(self.q_fn, self.q, x)
        if self.support_bound is not None:
            out = np.where(np.asarray(x) > self.support_bound, 0.0, out)
        return out

    def min_sqrt_rho(self) -> float:
        return float(np.sqrt(np.min(self.rho)))


@dataclass(frozen=True, eq=False)
class Eikonal:
    """Travel time tau(x) = int_0^x sqrt(rho) and its tabulated inverse x(t)."""

    tau_of_x: SampledFunction
    x_of_t: SampledFunction

    def tau(self, x) -> np.ndarray:
        return np.interp(x, self.tau_of_x.grid.nodes, self.tau_of_x.values)

    def x_at(self, t) -> np.ndarray:
        return np.interp(t, self.x_of_t.grid.nodes, self.x_of_t.values)


def build_eikonal(m: MediumProfile, n: Optional[int] = None, x_end: Optional[float] = None) -> Eikonal:
    """Cumulative trapezoid of sqrt(rho), inverted by monotone linear interpolation.

    ``n``/``x_end`` let callers request a finer or longer tabulation than the
    stored profile (constant density extension applies beyond the samples).
    """
    n = m.n_cells if n is None else n
    x_end = m.x_end if x_end is None else x_end
    grid = UniformGrid(x_end, n)
    speed = np.sqrt(m.rho_at(grid.nodes))
    tau = cumulative_trapezoid(speed, grid.step)
    if np.any(np.diff(tau) <= 0.0):
        raise RuntimeError("travel time failed to increase; density must be positive")
    tgrid = UniformGrid(float(tau[-1]), n)
    x_of_t = np.interp(tgrid.nodes, tau, grid.nodes)
    return Eikonal(
        tau_of_x=SampledFunction(grid, tau),
        x_of_t=SampledFunction(tgrid, x_of_t),
    )


def sl_solution(
    m: MediumProfile,
    y0: float,
    y0p: float,
    lam: float = 0.0,
    n: Optional[int] = None,
) -> SampledFunction:
    """Fourth-order Runge-Kutta integration of -y'' + q y = lam y from x = 0.

    This is the independent oracle for reconstruction targets: it never
    touches the wave solvers or the integral equations.  The density plays
    no role here.
    """
    n = 4 * m.n_cells if n is None else n
    grid = UniformGrid(m.x_end, n)
    h = grid.step
    x = grid.nodes

    def rate(xv, y, yp):
        return yp, (m.q_at(xv) - lam) * y

    ys = np.empty(grid.n_nodes)
    y, yp = float(y0), float(y0p)
    ys[0] = y
    for i in range(n):
        xi = x[i]
        k1y, k1p = rate(xi, y, yp)
        k2y, k2p = rate(xi + 0.5 * h, y + 0.5 * h * k1y, yp + 0.5 * h * k1p)
        k3y, k3p = rate(xi + 0.5 * h, y + 0.5 * h * k2y, yp + 0.5 * h * k2p)
        k4y, k4p = rate(xi + h, y + h * k3y, yp + h * k3p)
        y += (h / 6.0) * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
        yp += (h / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
        ys[i + 1] = y
    return SampledFunction(grid, ys)


def decaying_sl_solution(m: MediumProfile, k: float, x_end: float, n: int) -> SampledFunction:
    """Backward RK4 oracle for -y'' + q y = -k^2 y with y = exp(-k x) beyond supp q.

    Integrates from x_end (which must exceed the support bound) down to 0;
    used to verify scattering-side readouts.
    """
    if m.support_bound is None:
        raise ValueError("decaying oracle needs a compactly supported potential")
    if x_end <= m.support_bound:
        raise ValueError("start the backward integration beyond the support bound")
    grid = UniformGrid(x_end, n)
    h = grid.step
    x = grid.nodes

    def rate(xv, y, yp):
        return yp, (m.q_at(xv) + k * k) * y

    ys = np.empty(grid.n_nodes)
    y = float(np.exp(-k * x_end))
    yp = float(-k * np.exp(-k * x_end))
    ys[-1] = y
    for i in range(n, 0, -1):
        xi = x[i]
        k1y, k1p = rate(xi, y, yp)
        k2y, k2p = rate(xi - 0.5 * h, y - 0.5 * h * k1y, yp - 0.5 * h * k1p)
        k3y, k3p = rate(xi - 0.5 * h, y - 0.5 * h * k2y, yp - 0.5 * h * k2p)
        k4y, k4p = rate(xi - h, y - h * k3y, yp - h * k3p)
        y -= (h / 6.0) * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
        yp -= (h / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
        ys[i - 1] = y
    return SampledFunction(grid, ys)


def _bump(x, center, half_width, height):
    z = (np.asarray(x, dtype=float) - center) / half_width
    out = np.zeros_like(z)
    inside = np.abs(z) < 1.0
    out[inside] = height * np.e * np.exp(-1.0 / (1.0 - z[inside] ** 2))
    return out


def make_test_medium(
    name: str,
    x_end: Optional[float] = None,
    n_cells: int = 512,
    csv_path: Optional[str] = None,
) -> MediumProfile:
    """Catalog media with analytic closures, plus CSV loading.

    unit          rho = 1, q = 0
    gl_rational   rho = 1, q = 6/(1+x^2)
    krein_exp     rho = 4 exp(2x), q = 0
    scatter_bump  rho = 1, q = smooth bump of height 1 on (0.5, 1.5)
    user_csv      columns x,rho,q from ``csv_path``
    """
    if name == "user_csv":
        if csv_path is None:
            raise ValueError("user_csv medium needs csv_path")
        return load_medium_csv(csv_path)

    defaults = {"unit": 1.0, "gl_rational": 1.0, "krein_exp": 1.0, "scatter_bump": 2.2}
    if name not in defaults:
        raise ValueError(f"unknown catalog medium {name!r}; choose from {CATALOG_NAMES}")
    x_end = defaults[name] if x_end is None else x_end
    grid = UniformGrid(x_end, n_cells)
    x = grid.nodes

    if name == "unit":
        rho_fn = lambda s: np.ones_like(np.asarray(s, dtype=float))
        q_fn = lambda s: np.zeros_like(np.asarray(s, dtype=float))
        support = None
    elif name == "gl_rational":
        rho_fn = lambda s: np.ones_like(np.asarray(s, dtype=float))
        q_fn = lambda s: 6.0 / (1.0 + np.asarray(s, dtype=float) ** 2)
        support = None
    elif name == "krein_exp":
        rho_fn = lambda s: 4.0 * np.exp(2.0 * np.asarray(s, dtype=float))
        q_fn = lambda s: np.zeros_like(np.asarray(s, dtype=float))
        support = None
    else:  # scatter_bump
        rho_fn = lambda s: np.ones_like(np.asarray(s, dtype=float))
        q_fn = lambda s: _bump(s, center=1.0, half_width=0.5, height=1.0)
        support = 1.5
        if x_end < 1.5:
            raise ValueError("scatter_bump needs x_end >= 1.5")

    return MediumProfile(
        x_end=x_end,
        n_cells=n_cells,
        rho=rho_fn(x),
        q=q_fn(x),
        support_bound=support,
        rho_fn=rho_fn,
        q_fn=q_fn,
    )


def load_medium_csv(path: str) -> MediumProfile:
    """Read a medium from CSV with header x,rho,q on a uniform ascending grid."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header[:3]] != ["x", "rho", "q"]:
            raise ValueError(f"{path}: expected header 'x,rho,q'")
        rows = [(float(r[0]), float(r[1]), float(r[2])) for r in reader if r]
    if len(rows) < 3:
        raise ValueError(f"{path}: need at least 3 rows")
    x, rho, q = (np.array(col) for col in zip(*rows))
    dx = np.diff(x)
    if np.any(dx <= 0.0):
        raise ValueError(f"{path}: x column must be strictly increasing")
    spread = np.max(np.abs(dx - dx[0]))
    if spread > 1e-9 * max(abs(x[-1]), 1.0):
        raise ValueError(f"{path}: grid must be uniform (spacing varies by {spread:.2e})")
    if abs(x[0]) > 1e-12 * max(abs(x[-1]), 1.0):
        raise ValueError(f"{path}: grid must start at 0")
    return MediumProfile(x_end=float(x[-1]), n_cells=len(x) - 1, rho=rho, q=q)


def save_medium_csv(m: MediumProfile, path_or_buffer) -> None:
    """Write the x,rho,q table; floats are emitted with repr round-trip precision."""
    own = isinstance(path_or_buffer, (str, bytes))
    fh = open(path_or_buffer, "w", newline="") if own else path_or_buffer
    try:
        writer = csv.writer(fh)
        writer.writerow(["x", "rho", "q"])
        for x, rho, q in zip(m.grid.nodes, m.rho, m.q):
            writer.writerow([repr(float(x)), repr(float(rho)), repr(float(q))])
    finally:
        if own:
            fh.close()
