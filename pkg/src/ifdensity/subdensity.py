"""Sub-densities f_n (exactly n resets by time t) and their sum.

f_0 is built either from the moving-frame heat-kernel representation or by an
absorbing PDE solve. Higher f_n are time convolutions

    f_n(x, t) = int_0^t f_0(x, t - u) f_{T_n}(u) du,

done for every grid node at once with an FFT along the lag axis. Near lag 0,
f_0 behaves like the free OU kernel (a delta at u = 0), so the first
``warm_t0`` of lag is integrated with product weights against that kernel
instead of the trapezoid rule.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft

from . import _backend, fpe
from ._backend import njit
from .firstpassage import renewal_convolve
from .kernel import (
    SQRT_4PI,
    DensityField,
    TimeGrid,
    TimeSeries,
    boundary,
    ou_density_bound,
    ou_transition_density,
    s_of_t,
)

log = logging.getLogger(__name__)

CLIP_LIMIT = 1e-8


def _clip(values, label):
    lo = values.min()
    if lo < 0:
        if lo < -CLIP_LIMIT:
            log.warning("%s: clipped negative values down to %.3g", label, lo)
        else:
            log.debug("%s: clipped roundoff negatives (%.3g)", label, lo)
        np.maximum(values, 0.0, out=values)
    return float(min(lo, 0.0))


# -- f0 from the heat-kernel representation ----------------------------------------


@njit(cache=True)
def _correction_numba(y, bq, w2q, cq):
    inv = -0.25 / w2q
    out = np.zeros(y.shape[0])
    for i in range(y.shape[0]):
        acc = 0.0
        for q in range(cq.shape[0]):
            d = y[i] - bq[q]
            a = d * d * inv[q]
            # e^-50 ~ 2e-22: skipping these leaves the sum unchanged at double precision
            if a > -50.0:
                acc += cq[q] * np.exp(a)
        out[i] = acc
    return out


def _correction_numpy(y, bq, w2q, cq, chunk=64):
    out = np.empty(y.shape[0])
    for i0 in range(0, y.shape[0], chunk):
        d = y[i0 : i0 + chunk, None] - bq[None, :]
        out[i0 : i0 + chunk] = np.exp(-d * d / (4.0 * w2q[None, :])) @ cq
    return out


def _representation_nodes(s, s_nodes, m_vals, order=6, n_geo=24):
    """Quadrature for int_0^s Gamma(y, s, b(tau), tau) M(tau) dtau in w = sqrt(s - tau).

    Returns (b(tau_q), w_q^2, c_q) so that the integral is sum_q c_q exp(-(y - b_q)^2 / (4 w_q^2)).
    Panels follow the s-grid; the panel touching tau = s is split geometrically
    to resolve the boundary layer of width ~|y - b(s)| in w.
    """
    k = int(np.searchsorted(s_nodes, s, side="right")) - 1
    tau_breaks = s_nodes[: k + 1]
    w_breaks = np.sqrt(np.maximum(s - tau_breaks, 0.0))[::-1]  # ascending, ends at sqrt(s)
    if w_breaks[0] > 0:
        w_breaks = np.concatenate(([0.0], w_breaks))
    first = w_breaks[1]
    geo = first * 0.5 ** np.arange(n_geo, 0, -1)
    w_breaks = np.concatenate(([0.0], geo, w_breaks[1:]))
    gx, gw = np.polynomial.legendre.leggauss(order)
    lo, hi = w_breaks[:-1], w_breaks[1:]
    half = 0.5 * (hi - lo)
    wq = (lo[:, None] + half[:, None] * (gx[None, :] + 1.0)).ravel()
    ww = (half[:, None] * gw[None, :]).ravel()
    tau = s - wq * wq
    mq = np.interp(tau, s_nodes, m_vals)
    # dtau = 2 w dw and Gamma has the factor 1 / sqrt(4 pi w^2)
    cq = ww * mq * 2.0 / SQRT_4PI
    keep = cq != 0.0
    return boundary(tau[keep]), (wq * wq)[keep], cq[keep]


def f0_from_representation(grid, times, m):
    """f_0 on ``grid`` at every time of ``times`` from the Volterra solution ``m``."""
    t_need = times.t_end
    if m.times.t_end < t_need - 1e-12:
        raise ValueError(f"M covers t <= {m.times.t_end}, need {t_need}")
    x = grid.x
    vals = np.zeros((len(times), grid.n_nodes))
    s_nodes = m.s_nodes
    m_vals = m.m_values.values
    corr_fn = _correction_numba if _backend.USE_NUMBA else _correction_numpy
    for k, t in enumerate(times.t):
        if t <= 0:
            continue
        s = float(s_of_t(t))
        y = np.exp(t) * x
        free = np.exp(-y * y / (4.0 * s)) / np.sqrt(4.0 * np.pi * s)
        bq, w2q, cq = _representation_nodes(s, s_nodes, m_vals)
        corr = corr_fn(y, bq, w2q, cq) if cq.size else 0.0
        vals[k] = np.exp(t) * (free - corr)
    vals[:, -1] = 0.0
    under = _clip(vals, "f0_from_representation")
    rows = times.t > 0
    mass = np.ones(len(times))
    mass[rows] = grid.h * vals[rows].sum(axis=1)
    return DensityField(grid, times, vals, mass=mass, meta={"n": 0, "route": "representation",
                                                            "max_undershoot": under})


# -- f0 from the absorbing PDE -------------------------------------------------------


def f0_pde(grid, times, warm_t0=0.01, store_every=10, early_until=None):
    """Absorbing-only solve from the exact OU kernel at ``warm_t0``.

    ``times`` is the fine stepping grid; the field is stored every
    ``store_every`` steps. The first-passage density read off the outflux on
    the fine grid is kept in ``meta["flux_fine"]``.
    """
    if not 1e-4 - 1e-15 <= warm_t0 <= 1e-2 + 1e-15:
        raise ValueError("warm_t0 must lie in [1e-4, 1e-2]")
    res = fpe.solve(None, times.t_end, times.dt, grid, mode=fpe.ABSORBING, warm_t0=warm_t0,
                    store_every=store_every, early_until=early_until)
    fld = res.field
    _clip(fld.values, "f0_pde")
    fld.meta.update({"n": 0, "route": "pde", "flux_fine": res.N, "early": res.early})
    return fld


# -- convolution in time -------------------------------------------------------------


def _gl_interval(x, a, b, order, squared=False):
    """alpha, beta weights of int_a^b K(x, u) phi(u) du for the hat functions of [a, b]."""
    gx, gw = np.polynomial.legendre.leggauss(order)
    d = b - a
    if squared:
        # u = a + d w^2 removes the u^-1/2 behaviour at u = a = 0
        w = 0.5 * (gx + 1.0)
        u = a + d * w * w
        jac = 0.5 * gw * 2.0 * d * w
    else:
        u = a + 0.5 * d * (gx + 1.0)
        jac = 0.5 * d * gw
    K = ou_transition_density(x[:, None], u[None, :])
    lam = (u - a) / d
    beta = K @ (jac * lam)
    alpha = K @ (jac * (1.0 - lam))
    return alpha, beta


class LagConvolver:
    """Precomputed lag weights c_j(x) of a kernel field, convolved by FFT.

    ``out[k] = sum_{j<=k} c_j g_{k-j} - e_k g_0`` where ``e_k`` removes the part
    of ``c_k`` that belongs to lags beyond t_k.
    """

    def __init__(self, kernel_field, delta_start=None):
        grid = kernel_field.grid
        times = kernel_field.times
        dt = times.dt
        K = len(times)
        vals = kernel_field.values
        if delta_start is None:
            delta_start = kernel_field.warm_t0 is not None
        c = dt * vals.copy()
        e = 0.5 * dt * vals.copy()
        c[0] *= 0.5
        if delta_start:
            warm = kernel_field.warm_t0
            J0 = times.index_of(warm)
            if J0 < 1:
                raise ValueError("warm start must be at least one stored step")
            x = grid.x
            c[:J0] = 0.0
            c[J0] = 0.5 * dt * vals[J0]
            e[:J0] = 0.0
            for j in range(J0):
                a, b = j * dt, (j + 1) * dt
                alpha, beta = _gl_interval(x, a, b, 40 if j == 0 else 16, squared=(j == 0))
                c[j] += alpha
                c[j + 1] += beta
                e[j] = alpha
            c[:, -1] = 0.0
            e[:, -1] = 0.0
        self.grid = grid
        self.times = times
        self.nfft = sfft.next_fast_len(2 * K - 1, real=True)
        self.C = sfft.rfft(c, n=self.nfft, axis=0)
        self.e = e
        self.kernel_mass = grid.h * c.sum(axis=1)

    def __call__(self, g):
        g = _on_grid(g, self.times)
        K = len(self.times)
        G = sfft.rfft(g, n=self.nfft)
        out = sfft.irfft(self.C * G[:, None], n=self.nfft, axis=0)[:K]
        if g[0] != 0.0:
            out -= self.e * g[0]
        out[0] = 0.0
        return out


def _on_grid(series, times):
    """Values of a TimeSeries on ``times`` (subsampled from a finer uniform grid)."""
    if isinstance(series, TimeSeries):
        if series.times == times:
            return series.values
        stride = int(round(times.dt / series.times.dt))
        if abs(series.times.t_end - times.t_end) > 1e-12 or abs(stride * series.times.dt - times.dt) > 1e-12:
            raise ValueError("series grid is not a refinement of the field grid")
        return series.values[::stride]
    g = np.asarray(series, dtype=float)
    if g.shape != (len(times),):
        raise ValueError("series length does not match the field grid")
    return g


def _as_field(f_like, vals, n, route):
    _clip(vals, f"f{n} ({route})")
    vals[:, -1] = 0.0
    return DensityField(f_like.grid, f_like.times, vals, meta={"n": n, "route": route})


def fn_from_ladder(f0, rung, n=None, conv=None):
    """f_n = f_0 * f_{T_n}; ``conv`` reuses a LagConvolver built from f0."""
    conv = conv if conv is not None else LagConvolver(f0)
    if conv.grid != f0.grid or conv.times != f0.times:
        raise ValueError("convolver was built for a different grid")
    return _as_field(f0, conv(rung), n, "ladder")


def fn_iterate(f_prev, fT1, conv=None):
    """f_n = f_{n-1} * f_{T_1}."""
    n_prev = f_prev.meta.get("n")
    conv = conv if conv is not None else LagConvolver(f_prev)
    return _as_field(f_prev, conv(fT1), None if n_prev is None else n_prev + 1, "iterate")


# -- the series ----------------------------------------------------------------------


@dataclass
class SubdensityStack:
    """f_n for n = 0..n_max. Full fields are kept for n <= ``keep``; mass and
    right-boundary flux are kept for every n."""

    fields: list
    masses: np.ndarray
    fluxes: np.ndarray
    total: DensityField
    n_max: int
    tail_bound: float
    rho: float
    meta: dict = field(default_factory=dict)

    def __getitem__(self, n):
        if n >= len(self.fields):
            raise IndexError(f"f_{n} was not kept (keep={len(self.fields) - 1})")
        return self.fields[n]


def series_n_max(sup_f0, rho, tol, n_cap):
    """Smallest n with sup_f0 * rho^(n+1) / (1 - rho) <= tol, capped at n_cap."""
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"rho_T={rho} must lie in [0, 1)")
    n = 0
    while sup_f0 * rho ** (n + 1) / (1.0 - rho) > tol and n < n_cap:
        n += 1
    return n, sup_f0 * rho ** (n + 1) / (1.0 - rho)


def sum_series(f0, ladder, tol=1e-6, keep=3, mass_tol=1e-4):
    """f = sum_n f_n with the bound-driven n_max, built from ladder rungs."""
    if ladder.rho >= 1.0:
        raise ValueError("rho_T >= 1")
    rows = f0.times.t >= (f0.warm_t0 or 0.0) - 1e-12
    sup_f0 = float(f0.values[rows].max())
    n_max, bound = series_n_max(sup_f0, ladder.rho, tol, ladder.n_max)
    capped = bound > tol
    if capped:
        # the ladder already dropped every rung whose sup fell below its own tol
        log.info("series stops at the ladder length %d; geometric bound %.3g > tol %.3g",
                 n_max, bound, tol)
    conv = LagConvolver(f0)
    total = f0.values.copy()
    fields = [f0]
    masses = [f0.mass.copy()]
    fluxes = [f0.right_flux.copy()]
    for n in range(1, n_max + 1):
        fn = fn_from_ladder(f0, ladder.rung(n), n, conv)
        total += fn.values
        masses.append(fn.mass)
        fluxes.append(fn.right_flux)
        if n <= keep:
            fields.append(fn)
    fsum = DensityField(f0.grid, f0.times, total, warm_t0=f0.warm_t0, start=f0.start,
                        meta={"n_max": n_max, "route": "series"})
    drift = np.abs(fsum.mass[rows] - 1.0).max()
    if drift > mass_tol:
        log.warning("series mass off by %.3g (n_max=%d)", drift, n_max)
    return SubdensityStack(fields, np.array(masses), np.array(fluxes), fsum, n_max, float(bound),
                           ladder.rho, {"sup_f0": sup_f0, "mass_drift": float(drift), "capped": capped,
                                        "ladder_tail": ladder.tail_bound})


def check_support(grid, f_in, eps0=0.05, atol=1e-10):
    f_in = np.asarray(f_in, dtype=float)
    x = grid.x
    if f_in.shape != x.shape:
        raise ValueError("f_in must be sampled on the grid nodes")
    if f_in.min() < 0:
        raise ValueError("f_in must be nonnegative")
    mass = grid.h * f_in.sum()
    if abs(mass - 1.0) > atol:
        raise ValueError(f"f_in has mass {mass}, expected 1")
    bad = (f_in > 0) & ((x > 1.0 - eps0 + 1e-12) | (x < -grid.L + 1.0 - 1e-12))
    if bad.any():
        raise ValueError(f"f_in support must lie in [{-grid.L + 1}, {1 - eps0}]")


@dataclass
class GeneralResult:
    density: DensityField
    f0: DensityField
    fT1: TimeSeries
    firing: TimeSeries
    rungs: list


def general_initial(f_in, f0_delta, fT1, T, dt, eps0=0.05, tol=1e-8, n_cap=60):
    """Density from a smooth initial profile f_in.

    The first excursion starts from f_in (absorbing solve), later ones from 0:
    f = f_0^nu + f_0 * N^nu with N^nu = sum_n f_{T_1}^nu * f_{T_1}^{*(n-1)}.
    ``f0_delta`` is the point-mass f_0 and ``fT1`` its first-passage density
    on the fine grid.
    """
    grid = f0_delta.grid
    check_support(grid, f_in, eps0)
    stride = int(round(f0_delta.times.dt / dt))
    res = fpe.solve(f_in, T, dt, grid, mode=fpe.ABSORBING, store_every=stride)
    f0nu = res.field
    _clip(f0nu.values, "f0 (general)")
    fT1nu = res.N
    rungs = [fT1nu]
    while len(rungs) < n_cap:
        nxt = renewal_convolve(rungs[-1], fT1)
        if nxt.values.max() * T <= tol:
            break
        rungs.append(nxt)
    firing = TimeSeries(fT1nu.times, np.sum([r.values for r in rungs], axis=0))
    conv = LagConvolver(f0_delta)
    vals = f0nu.values + conv(firing)
    vals[:, -1] = 0.0
    _clip(vals, "general density")
    dens = DensityField(grid, f0nu.times, vals, meta={"route": "general"})
    return GeneralResult(dens, f0nu, fT1nu, firing, rungs)


def bump(grid, lo=-1.0, hi=0.5, power=2):
    """Compactly supported smooth-ish bump (1 - z^2)^power on [lo, hi], normalised."""
    x = grid.x
    z = (2.0 * x - (lo + hi)) / (hi - lo)
    f = np.where(np.abs(z) < 1.0, (1.0 - z * z) ** power, 0.0)
    return f / (grid.h * f.sum())


def density_bound_ok(field, rtol=1e-8):
    """f <= ou_density_bound(t) pointwise for t > 0."""
    t = field.times.t
    rows = t > 0
    bound = ou_density_bound(t[rows])
    return bool(np.all(field.values[rows] <= bound[:, None] * (1 + rtol) + 1e-12))
