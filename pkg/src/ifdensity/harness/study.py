"""Refinement studies: manufactured solution, time-step and Volterra
self-refinement, weak-form residuals and the kink defect."""

import logging

import numpy as np

from .. import firstpassage as fp
from .. import fpe
from ..kernel import Grid1D, TimeGrid
from .compare import fit_order

log = logging.getLogger(__name__)


def manufactured_solution(x):
    """f*(x) = (1 - x) exp(-x^2/2); its flux x f + f' = -exp(-x^2/2) is ~1e-8 at x = -6."""
    return (1.0 - x) * np.exp(-0.5 * x * x)


def manufactured_source(x):
    # S = -d/dx (x f* + f*')
    return -x * np.exp(-0.5 * x * x)


def mms_spatial(levels=(50, 100, 200, 400), L=6.0, advection="central"):
    """Max-norm error of the absorbing stationary problem A f + S = 0 against f*."""
    hs, errs = [], []
    for n in levels:
        g = Grid1D(L, 1.0 / n)
        op = fpe.build_operator(g, fpe.ABSORBING, advection)
        x = g.x[:-1]
        f = fpe.steady_solve(op, manufactured_source(x))
        hs.append(g.h)
        errs.append(float(np.max(np.abs(f - manufactured_solution(x)))))
    return fit_order(hs, errs)


def _successive(values, norm):
    return [norm(a - b) for a, b in zip(values[:-1], values[1:])]


def temporal_self_refinement(dts=(4e-4, 2e-4, 1e-4, 5e-5), h=1.0 / 400, L=6.0, T=1.0):
    """Backward-Euler order from successive differences of f(., T) under dt halving."""
    g = Grid1D(L, h)
    snaps = []
    for dt in dts:
        se = int(round(0.01 / dt))
        r = fpe.solve(None, T, dt, g, store_every=se)
        snaps.append(r.field.snapshot(T).copy())
    errs = _successive(snaps, lambda d: float(g.h * np.abs(d).sum()))
    return fit_order(dts[:-1], errs)


def volterra_self_refinement(dts=(1e-3, 5e-4, 2.5e-4, 1.25e-4), T=2.0, coarse=1e-3):
    """Order of the product-integration march from successive sup differences
    of f_T1 on a common coarse grid."""
    curves = []
    for dt in dts:
        f = fp.fT1_from_M(fp.solve_M(TimeGrid(T, dt)))
        curves.append(f.values[:: int(round(coarse / dt))])
    errs = _successive(curves, lambda d: float(np.max(np.abs(d))))
    return fit_order(dts[:-1], errs)


def weak_residual_study(levels=((50, 5e-4), (100, 2.5e-4), (200, 1.25e-4), (400, 6.25e-5)), L=6.0, T=2.0,
                        store_every=10):
    """Weak residual of each standard test function along a joint (h, dt) ladder.

    Returns {name: (hs, residuals)}. The default ladder keeps dt = h / 40.
    """
    phis = fpe.standard_test_functions()
    out = {p.name: ([], []) for p in phis}
    for n, dt in levels:
        g = Grid1D(L, 1.0 / n)
        r = fpe.solve(None, T, dt, g, store_every=store_every)
        for p in phis:
            out[p.name][0].append(g.h)
            out[p.name][1].append(fpe.weak_residual(r.field, r.N, p))
    return out


def jump_defect_refinement(hs=(1.0 / 200, 1.0 / 400), t=1.0, dt=1e-4, L=6.0, advection="central"):
    """Kink defect at t for each h; returns (defects, ratio coarse/fine)."""
    defects = []
    for h in hs:
        g = Grid1D(L, h)
        r = fpe.solve(None, t, dt, g, store_every=100, advection=advection)
        defects.append(fpe.jump_defect(r.field, r.N, t)[0])
    return defects, defects[0] / defects[1]


def flux_shift_spatial(levels=(100, 200, 400, 800), t=1.0, dt=1e-4, L=6.0, window=0.1):
    """Self-refinement of the full problem near the kink and in the far field.

    Returns (kink OrderFit, far-field OrderFit); diagnostic only.
    """
    snaps, grids = [], []
    for n in levels:
        g = Grid1D(L, 1.0 / n)
        r = fpe.solve(None, t, dt, g, store_every=100)
        snaps.append(r.field.snapshot(t))
        grids.append(g)
    coarse = grids[0]
    xc = coarse.x
    on_coarse = [s[:: int(round(coarse.h / g.h))] for s, g in zip(snaps, grids)]
    near = np.abs(xc) <= window
    far = xc <= -1.0
    d_near = _successive(on_coarse, lambda d: float(np.max(np.abs(d[near]))))
    d_far = _successive(on_coarse, lambda d: float(np.max(np.abs(d[far]))))
    hs = [g.h for g in grids[:-1]]
    return fit_order(hs, d_near), fit_order(hs, d_far)


def convergence_study(kinds=("mms", "temporal", "volterra", "weak", "defect")):
    """Run the requested studies and return {kind: result}."""
    out = {}
    if "mms" in kinds:
        out["mms"] = mms_spatial()
    if "temporal" in kinds:
        out["temporal"] = temporal_self_refinement()
    if "volterra" in kinds:
        out["volterra"] = volterra_self_refinement()
    if "weak" in kinds:
        out["weak"] = weak_residual_study()
    if "defect" in kinds:
        out["defect"] = jump_defect_refinement()
    if "kink" in kinds:
        out["kink"] = flux_shift_spatial()
    for k, v in out.items():
        if hasattr(v, "monotone") and not v.monotone:
            log.warning("%s: error sequence is not monotone", k)
    return out
