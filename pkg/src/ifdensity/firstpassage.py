"""First-passage density by the moving-boundary Volterra equation, and the
renewal ladder of jump-time densities built from it.

In the moving frame y = e^t x, s = (e^{2t} - 1)/2 the killed OU density becomes
a heat-equation solution below b(s) = sqrt(2s + 1), and the boundary flux
M(s) = -u_y(b(s), s) solves

    M(s) = 2 J1(s) + 2 int_0^s Gamma_y(b(s), s, b(tau), tau) M(tau) dtau,

with J1(s) = -Gamma_y(b(s), s, 0, 0). The first-passage density is then
f_T1(t) = e^{2t} M(s(t)).
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from ._backend import njit
from .kernel import SQRT_4PI, TimeGrid, TimeSeries, boundary, boundary_source, s_of_t

log = logging.getLogger(__name__)


@dataclass
class MSolution:
    times: TimeGrid
    s_nodes: np.ndarray
    m_values: TimeSeries
    n_clipped: int = 0
    max_undershoot: float = 0.0


@dataclass
class FiringLadder:
    rungs: list
    masses: np.ndarray
    rho: float
    tail_bound: float
    tol: float
    meta: dict = field(default_factory=dict)

    @property
    def times(self):
        return self.rungs[0].times

    @property
    def n_max(self):
        return len(self.rungs)

    def rung(self, n):
        """f_{T_n} for n >= 1."""
        if not 1 <= n <= len(self.rungs):
            raise IndexError(f"rung {n} outside 1..{len(self.rungs)}")
        return self.rungs[n - 1]


# -- Volterra marching ------------------------------------------------------


@njit(cache=True)
def _march_m_numba(s, j1):
    K = s.shape[0] - 1
    m = np.zeros(K + 1)
    b = np.sqrt(2.0 * s + 1.0)
    for k in range(1, K + 1):
        sk = s[k]
        bk = b[k]
        acc = 0.0
        diag = 0.0
        for j in range(k):
            a = sk - s[j]
            c = sk - s[j + 1]
            d = s[j + 1] - s[j]
            ra = np.sqrt(a)
            rc = np.sqrt(c)
            den = ra + rc
            w_all = 2.0 * d / den
            w_hi = 2.0 * d * (2.0 - rc / den) / (3.0 * den)
            tm = 0.5 * (s[j] + s[j + 1])
            bsum = bk + np.sqrt(2.0 * tm + 1.0)
            g = -np.exp(-(sk - tm) / (bsum * bsum)) / (bsum * SQRT_4PI)
            acc += g * (w_all - w_hi) * m[j]
            if j + 1 < k:
                acc += g * w_hi * m[j + 1]
            else:
                diag = g * w_hi
        m[k] = (2.0 * j1[k] + 2.0 * acc) / (1.0 - 2.0 * diag)
    return m


def _march_m_numpy(s, j1):
    K = s.shape[0] - 1
    m = np.zeros(K + 1)
    tm_all = 0.5 * (s[1:] + s[:-1])
    bm_all = np.sqrt(2.0 * tm_all + 1.0)
    for k in range(1, K + 1):
        sk = s[k]
        a = sk - s[:k]
        c = sk - s[1 : k + 1]
        d = s[1 : k + 1] - s[:k]
        ra = np.sqrt(a)
        rc = np.sqrt(c)
        den = ra + rc
        w_all = 2.0 * d / den
        w_hi = 2.0 * d * (2.0 - rc / den) / (3.0 * den)
        bsum = np.sqrt(2.0 * sk + 1.0) + bm_all[:k]
        g = -np.exp(-(sk - tm_all[:k]) / (bsum * bsum)) / (bsum * SQRT_4PI)
        lo = g * (w_all - w_hi)
        hi = g * w_hi
        acc = lo @ m[:k] + hi[:-1] @ m[1:k]
        m[k] = (2.0 * j1[k] + 2.0 * acc) / (1.0 - 2.0 * hi[-1])
    return m


def solve_M(times, rhs_floor=0.0):
    """March the boundary-flux Volterra equation on the image of ``times``.

    Product integration: the 1/sqrt(s - tau) factor is integrated exactly
    against piecewise-linear M, the smooth remainder of the kernel is frozen
    at interval midpoints. Values of J1 below ``rhs_floor`` are treated as 0.
    """
    if not isinstance(times, TimeGrid):
        raise TypeError("solve_M needs a uniform TimeGrid")
    s = s_of_t(times.t)
    j1 = np.asarray(boundary_source(s), dtype=float)
    if rhs_floor > 0:
        j1 = np.where(np.abs(j1) < rhs_floor, 0.0, j1)
    if not np.all(np.isfinite(j1)):
        raise FloatingPointError("kernel evaluation failed")
    march = _march_m_numba if _backend.USE_NUMBA else _march_m_numpy
    m = march(s, j1)
    if not np.all(np.isfinite(m)):
        raise FloatingPointError("Volterra march produced non-finite values")
    neg = m < 0
    undershoot = float(-m[neg].min()) if neg.any() else 0.0
    if neg.any():
        log.info("clipped %d negative M values (max undershoot %.3g)", neg.sum(), undershoot)
        m = np.where(neg, 0.0, m)
    return MSolution(times, s, TimeSeries(times, m), int(neg.sum()), undershoot)


def fT1_from_M(m):
    t = m.times.t
    return TimeSeries(m.times, np.exp(2.0 * t) * m.m_values.values)


def fT1_from_flux(f0):
    """First-passage density as the outflux -d/dx f0(1-, t) of the killed field.

    Uses the fine-step flux recorded by the solver when the field carries one.
    """
    if f0.reinjection:
        raise ValueError("fT1_from_flux needs an absorbing-only field (no reinjection)")
    fine = f0.meta.get("flux_fine")
    if fine is not None:
        return TimeSeries(fine.times, fine.values.copy())
    return TimeSeries(f0.times, np.asarray(f0.right_flux, dtype=float).copy())


# -- renewal convolutions ---------------------------------------------------


@njit(cache=True)
def _causal_conv_numba(a, b):
    n = a.shape[0]
    out = np.zeros(n)
    for k in range(n):
        acc = 0.0
        for j in range(k + 1):
            acc += a[k - j] * b[j]
        out[k] = acc
    return out


def _causal_conv_numpy(a, b):
    return np.convolve(a, b)[: a.shape[0]]


def causal_conv(a, b):
    """out[k] = sum_{j<=k} a[k-j] b[j]."""
    a = np.ascontiguousarray(a, dtype=float)
    b = np.ascontiguousarray(b, dtype=float)
    if _backend.USE_NUMBA:
        return _causal_conv_numba(a, b)
    return _causal_conv_numpy(a, b)


def renewal_convolve(a, b):
    """Trapezoid approximation of (a * b)(t) = int_0^t a(t - s) b(s) ds."""
    if a.times != b.times:
        raise ValueError("renewal_convolve needs series on a common grid")
    av, bv = a.values, b.values
    raw = causal_conv(av, bv)
    raw -= 0.5 * (av * bv[0] + av[0] * bv)
    out = a.times.dt * raw
    out[0] = 0.0
    return TimeSeries(a.times, np.maximum(out, 0.0))


def rho_T(fT1, T=None):
    """P(T1 <= T) as the trapezoid integral of f_T1 on [0, T]."""
    rho = fT1.integral(T)
    if rho < -1e-6 or rho > 1.0 + 1e-6:
        raise ValueError(f"rho_T={rho} outside (0, 1)")
    return float(min(max(rho, 0.0), 1.0))


def build_ladder(fT1, tol=1e-8, n_cap=60):
    """Jump-time densities f_{T_n} = f_{T_{n-1}} * f_T1 until they fall below tol."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    T = fT1.times.t_end
    rho = rho_T(fT1, T)
    if rho >= 1.0 - 1e-6:
        raise ValueError(f"rho_T={rho} too close to 1; f_T1 is broken")
    rungs = [fT1]
    while len(rungs) < n_cap:
        nxt = renewal_convolve(rungs[-1], fT1)
        if nxt.values.max() * T <= tol:
            break
        rungs.append(nxt)
    truncated_by_cap = len(rungs) == n_cap
    masses = np.array([r.integral() for r in rungs])
    # sup f_{T_{m+1}} <= rho sup f_{T_m}, so the dropped rungs sum to a geometric tail
    last_sup = rungs[-1].values.max() if truncated_by_cap else tol / T
    tail = last_sup * (rho if truncated_by_cap else 1.0) / (1.0 - rho)
    return FiringLadder(rungs, masses, rho, float(tail), tol, {"capped": truncated_by_cap})


def firing_rate(ladder):
    """N(t) = sum_n f_{T_n}(t)."""
    total = np.zeros(len(ladder.times))
    for r in ladder.rungs:
        total += r.values
    return TimeSeries(ladder.times, total)


def first_passage(times, tol=1e-8, n_cap=60):
    """Convenience: Volterra f_T1, its ladder and the firing rate on ``times``."""
    m = solve_M(times)
    fT1 = fT1_from_M(m)
    ladder = build_ladder(fT1, tol, n_cap)
    return m, ladder, firing_rate(ladder)
