"""Conservative finite-difference solver for the flux-shift Fokker-Planck problem

    f_t = (x f)_x + f_xx  on (-L, 0) u (0, 1),   f(1, t) = 0,
    slope jump at 0 equal to the outflux N(t) = -f_x(1-, t).

Unknowns live on the nodes x_0 = -L, ..., x_{m-1} = 1 - h; the node x = 1
carries the absorbing value 0. Face fluxes G = x f + f_x use central averages
for the drift (the cell Peclet number |x| h / 2 stays below 1, so the implicit
matrix is an M-matrix) and a zero-flux face at -L. In flux-shift mode the
outflux through the last face is added back into the reset cell inside the
implicit operator, which makes every column sum of the operator zero.

Backward Euler is used in time; each step is a tridiagonal solve plus a
Sherman-Morrison correction for the single reroute entry.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack

from . import _backend
from ._backend import njit
from .kernel import DensityField, Grid1D, TimeGrid, TimeSeries, ou_transition_density

log = logging.getLogger(__name__)

ABSORBING = "absorbing"
FLUX_SHIFT = "flux-shift"


class MassDriftError(RuntimeError):
    pass


@dataclass
class DiscreteOperator:
    """Tridiagonal stencil on the m = n_nodes - 1 unknowns plus the reroute entry.

    ``lower[i]`` couples row i to f_{i-1} (lower[0] unused), ``upper[i]`` couples
    row i to f_{i+1} (upper[m-1] unused). ``reroute`` is the coefficient of
    f_{m-1} added to row ``reset_row`` in flux-shift mode.
    """

    grid: Grid1D
    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray
    outflux_coef: float
    reset_row: int
    mode: str
    advection: str = "central"

    @property
    def size(self):
        return self.diag.shape[0]

    @property
    def reroute(self):
        return self.outflux_coef / self.grid.h if self.mode == FLUX_SHIFT else 0.0

    def dense(self):
        m = self.size
        A = np.diag(self.diag) + np.diag(self.lower[1:], -1) + np.diag(self.upper[:-1], 1)
        A[self.reset_row, m - 1] += self.reroute
        return A

    def apply(self, f):
        f = np.asarray(f, dtype=float)
        out = self.diag * f
        out[1:] += self.lower[1:] * f[:-1]
        out[:-1] += self.upper[:-1] * f[1:]
        out[self.reset_row] += self.reroute * f[-1]
        return out

    def outflux(self, f):
        """Discrete outflux through the face next to x = 1."""
        return self.outflux_coef * np.asarray(f)[..., self.size - 1]


def build_operator(grid, mode=FLUX_SHIFT, advection="central"):
    """Assemble the stencil. ``advection="upwind"`` takes the drift term from
    the upstream node (flux toward 0 from both sides); it is first order and
    kept for comparison with the default central average."""
    if mode not in (ABSORBING, FLUX_SHIFT):
        raise ValueError(f"unknown mode {mode!r}")
    if advection not in ("central", "upwind"):
        raise ValueError(f"unknown advection scheme {advection!r}")
    x = grid.x
    if abs(x[grid.reset_index]) > 1e-14 or abs(x[-1] - 1.0) > 1e-14:
        raise ValueError("grid has no exact node at 0 and 1")
    h = grid.h
    m = grid.n_nodes - 1
    xf = 0.5 * (x[:-1] + x[1:])  # face i+1/2, i = 0..m-1
    # share of the drift flux x f taken from the left node of each face
    theta = np.full(m, 0.5) if advection == "central" else (xf < 0).astype(float)
    right = theta * xf - 1.0 / h  # coefficient of f_i in G_{i+1/2}
    right_up = (1.0 - theta) * xf + 1.0 / h  # coefficient of f_{i+1} in G_{i+1/2}
    diag = right / h
    diag[1:] -= right_up[:-1] / h
    lower = np.zeros(m)
    lower[1:] = -right[:-1] / h
    upper = right_up / h
    upper[-1] = 0.0
    outflux_coef = -right[m - 1]
    return DiscreteOperator(grid, lower, diag, upper, float(outflux_coef), grid.reset_index, mode, advection)


# -- linear solves -----------------------------------------------------------------


@njit(cache=True)
def _thomas_factor(a, b, c):
    m = b.shape[0]
    cp = np.empty(m)
    inv = np.empty(m)
    inv[0] = 1.0 / b[0]
    cp[0] = c[0] * inv[0]
    for i in range(1, m):
        inv[i] = 1.0 / (b[i] - a[i] * cp[i - 1])
        cp[i] = c[i] * inv[i]
    return cp, inv


@njit(cache=True)
def _thomas_solve(a, cp, inv, d, out):
    m = d.shape[0]
    out[0] = d[0] * inv[0]
    for i in range(1, m):
        out[i] = (d[i] - a[i] * out[i - 1]) * inv[i]
    for i in range(m - 2, -1, -1):
        out[i] -= cp[i] * out[i + 1]


@njit(cache=True)
def _march_numba(u, a, cp, inv, z, gamma, last, k_start, k_end, store_every, store, early, k_early,
                 coef, h, n_one, n_out, mass):
    m = u.shape[0]
    y = np.empty(m)
    for k in range(k_start + 1, k_end + 1):
        _thomas_solve(a, cp, inv, u, y)
        corr = y[last] * gamma
        acc = 0.0
        for i in range(m):
            u[i] = y[i] - corr * z[i]
            acc += u[i]
        mass[k] = h * acc
        n_one[k] = (4.0 * u[m - 1] - u[m - 2]) / (2.0 * h)
        n_out[k] = coef * u[m - 1]
        if k % store_every == 0:
            store[k // store_every, :m] = u
        if k <= k_early:
            early[k, :m] = u


class ShiftedSolver:
    """Solves (alpha I - beta A) x = rhs for a fixed operator and coefficients."""

    def __init__(self, op, alpha, beta):
        self.op = op
        m = op.size
        self.a = np.ascontiguousarray(-beta * op.lower)
        self.b = np.ascontiguousarray(alpha - beta * op.diag)
        self.c = np.ascontiguousarray(-beta * op.upper)
        self.cp, self.inv = _thomas_factor(self.a, self.b, self.c)
        # dgttrf pivots, which keeps the fallback robust if the matrix loses dominance
        self.lu = lapack.dgttrf(self.a[1:], self.b, self.c[:-1])
        if self.lu[-1] != 0:
            raise np.linalg.LinAlgError("singular tridiagonal system")
        u_vec = np.zeros(m)
        u_vec[op.reset_row] = -beta * op.reroute
        self.z = self._tri(u_vec)
        self.gamma = 1.0 / (1.0 + self.z[m - 1]) if op.reroute else 0.0
        if not np.isfinite(self.gamma):
            raise np.linalg.LinAlgError("singular rank-one update")

    def _tri(self, d):
        if _backend.USE_NUMBA:
            out = np.empty_like(d)
            _thomas_solve(self.a, self.cp, self.inv, np.ascontiguousarray(d, dtype=float), out)
            return out
        dl, d0, du, du2, ipiv, _ = self.lu
        x, info = lapack.dgttrs(dl, d0, du, du2, ipiv, d)
        if info:
            raise np.linalg.LinAlgError("dgttrs failed")
        return x

    def solve(self, rhs):
        y = self._tri(np.asarray(rhs, dtype=float))
        return y - self.z * (y[-1] * self.gamma)


def step(f_k, dt, op, _solver=None):
    """One backward-Euler step (I - dt A) f_{k+1} = f_k on the m unknowns."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    solver = _solver if _solver is not None else ShiftedSolver(op, 1.0, dt)
    return solver.solve(f_k)


def steady_solve(op, source):
    """Solve A f + source = 0 (absorbing mode; used for manufactured solutions)."""
    return ShiftedSolver(op, 0.0, 1.0).solve(source)


def stationary_profile(op, tol=1e-14, max_iter=200):
    """Discrete stationary density of the flux-shift operator by inverse iteration."""
    if op.mode != FLUX_SHIFT:
        raise ValueError("stationary profile only exists with reinjection")
    solver = ShiftedSolver(op, 1.0, 1e4)
    h = op.grid.h
    f = ou_transition_density(op.grid.x[:-1], 1.0)
    f /= h * f.sum()
    for _ in range(max_iter):
        g = solver.solve(f)
        g /= h * g.sum()
        if np.max(np.abs(g - f)) <= tol * np.max(np.abs(g)):
            return g
        f = g
    return f


# -- time marching ------------------------------------------------------------------


@dataclass
class SolveResult:
    field: DensityField
    N: TimeSeries
    N_reroute: TimeSeries
    early: DensityField = None
    mass: TimeSeries = None
    meta: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.field, self.N))


def _initial_state(grid, f_in, warm_t0):
    x = grid.x
    if f_in is None:
        u0 = ou_transition_density(x, warm_t0)
        u0[-1] = 0.0
        return u0
    u0 = np.asarray(f_in, dtype=float).copy()
    if u0.shape != x.shape:
        raise ValueError("f_in must be sampled on the grid nodes")
    return u0


def solve(f_in, T, dt, grid, mode=FLUX_SHIFT, warm_t0=0.01, store_every=10, early_until=None,
          mass_tol=1e-8, advection="central"):
    """March the density to time T.

    ``f_in=None`` means a point mass at 0, replaced by the exact free OU kernel
    at ``warm_t0`` (the hit probability before then is negligible). Returns the
    field sampled every ``store_every`` steps and N(t) on the fine grid, read
    both by the one-sided stencil and as the rerouted outflux.
    """
    fine = TimeGrid(T, dt)
    stored = fine.coarsen(store_every)
    t_start = 0.0 if f_in is not None else warm_t0
    if f_in is None and not 1e-4 - 1e-15 <= warm_t0 <= 1e-2 + 1e-15:
        raise ValueError("warm_t0 must lie in [1e-4, 1e-2]")
    k_start = fine.index_of(t_start)
    if k_start % store_every:
        raise ValueError("warm start must fall on a stored time")
    op = build_operator(grid, mode, advection)
    m = op.size
    u = np.ascontiguousarray(_initial_state(grid, f_in, warm_t0)[:m])
    store = np.zeros((len(stored), grid.n_nodes))
    store[k_start // store_every, :m] = u
    k_early = -1
    early = None
    if early_until is not None:
        k_early = fine.index_of(early_until)
        early = np.zeros((k_early + 1, grid.n_nodes))
        if k_start <= k_early:
            early[k_start, :m] = u
    n_one = np.zeros(len(fine))
    n_out = np.zeros(len(fine))
    n_one[k_start] = (4.0 * u[m - 1] - u[m - 2]) / (2.0 * grid.h)
    n_out[k_start] = op.outflux(u)
    mass_fine = np.zeros(len(fine))
    mass_fine[: k_start + 1] = grid.h * u.sum()
    solver = ShiftedSolver(op, 1.0, dt)
    mass0 = grid.h * u.sum()
    if _backend.USE_NUMBA:
        _march_numba(u, solver.a, solver.cp, solver.inv, solver.z, solver.gamma, m - 1, k_start,
                     fine.n_steps, store_every, store, early if early is not None else np.zeros((1, 1)),
                     k_early, op.outflux_coef, grid.h, n_one, n_out, mass_fine)
    else:
        for k in range(k_start + 1, fine.n_steps + 1):
            u = solver.solve(u)
            n_one[k] = (4.0 * u[m - 1] - u[m - 2]) / (2.0 * grid.h)
            n_out[k] = op.outflux(u)
            mass_fine[k] = grid.h * u.sum()
            if k % store_every == 0:
                store[k // store_every, :m] = u
            if k <= k_early:
                early[k, :m] = u
    warm = warm_t0 if f_in is None else None
    fld = DensityField(grid, stored, store, warm_t0=warm, start=t_start, reinjection=(mode == FLUX_SHIFT))
    if mode == FLUX_SHIFT:
        drift = np.abs(mass_fine - mass0)
        if drift.max() > mass_tol:
            raise MassDriftError(f"mass drift {drift.max():.3g} exceeds {mass_tol}")
    neg = store.min()
    if neg < -1e-8:
        k, i = np.unravel_index(np.argmin(store), store.shape)
        log.warning("negative density %.3g at t=%g x=%g", neg, stored.t[k], grid.x[i])
    early_field = None
    if early is not None:
        early_field = DensityField(grid, TimeGrid(early_until, dt), early, warm_t0=warm, start=t_start,
                                   reinjection=(mode == FLUX_SHIFT))
    return SolveResult(fld, TimeSeries(fine, n_one), TimeSeries(fine, n_out), early_field,
                       TimeSeries(fine, mass_fine), {"mode": mode, "min_value": float(neg), "mass0": float(mass0)})


# -- diagnostics --------------------------------------------------------------------


def jump_defect(field, N, t):
    """|(f_x(0-) - f_x(0+)) - N(t)| by second-order one-sided stencils, and the
    value mismatch at 0 (zero for a single-valued grid function)."""
    f = field.snapshot(t)
    r = field.grid.reset_index
    h = field.grid.h
    left = (3.0 * f[r] - 4.0 * f[r - 1] + f[r - 2]) / (2.0 * h)
    right = (-3.0 * f[r] + 4.0 * f[r + 1] - f[r + 2]) / (2.0 * h)
    n_t = N.at(t) if isinstance(N, TimeSeries) else float(N)
    return abs((left - right) - n_t), 0.0


@dataclass
class TestFunction:
    """phi(x, t) with the derivatives the weak form needs; all vectorised."""

    name: str
    phi: callable
    phi_t: callable
    phi_x: callable
    phi_xx: callable

    __test__ = False


def _cutoff(x):
    return np.exp(-((x / 4.0) ** 8))


def _cutoff_d(x):
    return _cutoff(x) * (-8.0 / 4.0) * (x / 4.0) ** 7


def _cutoff_dd(x):
    c = _cutoff(x)
    u = x / 4.0
    return c * ((2.0 * u**7) ** 2 - 14.0 / 4.0 * u**6)


def standard_test_functions():
    one = TestFunction(
        "one",
        lambda x, t: np.ones_like(x * t),
        lambda x, t: np.zeros_like(x * t),
        lambda x, t: np.zeros_like(x * t),
        lambda x, t: np.zeros_like(x * t),
    )
    lin = TestFunction(
        "x_cutoff",
        lambda x, t: x * _cutoff(x) + 0.0 * t,
        lambda x, t: np.zeros_like(x * t),
        lambda x, t: _cutoff(x) + x * _cutoff_d(x) + 0.0 * t,
        lambda x, t: 2.0 * _cutoff_d(x) + x * _cutoff_dd(x) + 0.0 * t,
    )
    k = np.pi / 2.0

    def s(x):
        return np.sin(k * x)

    def c(x):
        return np.cos(k * x)

    trig = TestFunction(
        "exp_sin_cutoff",
        lambda x, t: np.exp(-t) * s(x) * _cutoff(x),
        lambda x, t: -np.exp(-t) * s(x) * _cutoff(x),
        lambda x, t: np.exp(-t) * (k * c(x) * _cutoff(x) + s(x) * _cutoff_d(x)),
        lambda x, t: np.exp(-t) * (-k * k * s(x) * _cutoff(x) + 2 * k * c(x) * _cutoff_d(x) + s(x) * _cutoff_dd(x)),
    )
    return [one, lin, trig]


def _trapz_t(values, dt):
    if values.shape[0] < 2:
        return 0.0
    return dt * (values.sum() - 0.5 * (values[0] + values[-1]))


def weak_residual(field, N, phi, signed=False):
    """LHS - RHS of the weak identity over the span [field.start, T]:

    int int (phi_t - x phi_x + phi_xx) f dx dt
      = int (phi(1,t) - phi(0,t)) N dt - int phi(x,t0) f(x,t0) dx + int phi(x,T) f(x,T) dx
    """
    grid = field.grid
    x = grid.x
    h = grid.h
    tt = field.times.t
    k0 = field.times.index_of(field.start)
    X, Tm = np.meshgrid(x, tt[k0:])
    gen = phi.phi_t(X, Tm) - X * phi.phi_x(X, Tm) + phi.phi_xx(X, Tm)
    vals = field.values[k0:]
    inner = h * np.sum(gen * vals, axis=1)
    lhs = _trapz_t(inner, field.times.dt)
    tn = N.t
    kn = N.times.index_of(field.start)
    jump = (phi.phi(np.ones_like(tn[kn:]), tn[kn:]) - phi.phi(np.zeros_like(tn[kn:]), tn[kn:])) * N.values[kn:]
    rhs = _trapz_t(jump, N.times.dt)
    rhs -= h * np.sum(phi.phi(x, tt[k0]) * vals[0])
    rhs += h * np.sum(phi.phi(x, tt[-1]) * vals[-1])
    return lhs - rhs if signed else abs(lhs - rhs)


def l2_initial_convergence(field, f_in):
    """||f(., t) - f_in||_2 for each stored time of ``field``."""
    d = field.values - np.asarray(f_in, dtype=float)[None, :]
    return TimeSeries(field.times, np.sqrt(field.grid.h * np.sum(d * d, axis=1)))
