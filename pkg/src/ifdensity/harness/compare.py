"""Comparison metrics between pipelines, decay and order fits."""

from dataclasses import dataclass

import numpy as np

from ..kernel import DensityField, TimeSeries
from ..mc import ks_distance


@dataclass
class Metric:
    name: str
    value: float
    threshold: float
    # "<=", ">=", "<", "in" (closed, lower end in `lower`), "open" (open interval) or "info" (no check)
    relation: str = "<="
    criterion: int = None
    lower: float = None

    @property
    def passed(self):
        v = self.value
        if self.relation == "info":
            return True
        if not np.isfinite(v):
            return False
        if self.relation == "<=":
            return bool(v <= self.threshold)
        if self.relation == "<":
            return bool(v < self.threshold)
        if self.relation == ">=":
            return bool(v >= self.threshold)
        if self.relation == "in":
            return bool(self.lower <= v <= self.threshold)
        if self.relation == "open":
            return bool(self.lower < v < self.threshold)
        raise ValueError(self.relation)

    def as_dict(self):
        d = {"name": self.name, "value": float(self.value), "threshold": float(self.threshold),
             "relation": self.relation, "pass": self.passed}
        if self.criterion is not None:
            d["criterion"] = self.criterion
        if self.lower is not None:
            d["lower"] = float(self.lower)
        return d


def field_distances(a, b, t):
    """(L1, Linf) over x between two fields at time t."""
    if a.grid != b.grid:
        raise ValueError("fields live on different grids")
    d = a.snapshot(t) - b.snapshot(t)
    return float(a.grid.h * np.abs(d).sum()), float(np.abs(d).max())


def series_sup(a, b, t_lo=None, t_hi=None):
    """sup |a - b| over the common time range (restricted to [t_lo, t_hi])."""
    lo = max(a.t[0], b.t[0], t_lo if t_lo is not None else -np.inf)
    hi = min(a.t[-1], b.t[-1], t_hi if t_hi is not None else np.inf)
    if lo > hi:
        raise ValueError("series have disjoint time ranges")
    fine = a if a.times.dt <= b.times.dt else b
    t = fine.t[(fine.t >= lo - 1e-12) & (fine.t <= hi + 1e-12)]
    return float(np.max(np.abs(np.interp(t, a.t, a.values) - np.interp(t, b.t, b.values))))


def field_cdf(field, t):
    """CDF callable of the normalised density at time t (nodes, trapezoid)."""
    from ..mc import grid_cdf

    c = field.cdf(t)
    if c[-1] <= 0:
        raise ValueError("field has no mass at this time")
    return grid_cdf(field.grid.x, c / c[-1])


def mc_ks(ens, field, t, mask=None):
    return ks_distance(ens, field_cdf(field, t), mask)


def compare(a, b, t=None, t_range=None):
    """Metric dictionary for two fields (at t) or two series (sup over t_range)."""
    if isinstance(a, DensityField) and isinstance(b, DensityField):
        times = [t] if t is not None else [a.t[-1]]
        out = {}
        for tt in times:
            l1, linf = field_distances(a, b, tt)
            out[f"L1@{tt:g}"] = l1
            out[f"Linf@{tt:g}"] = linf
        return out
    if isinstance(a, TimeSeries) and isinstance(b, TimeSeries):
        lo, hi = t_range if t_range is not None else (None, None)
        return {"sup": series_sup(a, b, lo, hi)}
    raise TypeError("compare needs two fields or two series")


def histogram_zscores(hist, curve, n_paths):
    """Per-bin z-scores of an MC histogram against a model density.

    The model is bin-averaged; the standard error uses the model bin
    probability so empty bins with negligible predicted mass do not fail.
    """
    edges = hist.edges
    p = np.diff(np.interp(edges, curve.t, curve.cumulative()))
    w = np.diff(edges)
    sigma = np.sqrt(np.maximum(p * (1.0 - p), 0.0) / n_paths) / w
    diff = hist.density - p / w
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sigma > 0, np.abs(diff) / sigma, np.where(diff == 0, 0.0, np.inf))
    return z


@dataclass
class DecayFit:
    ratio: float
    theta: float
    r2: float
    n_used: int
    bound: float = None

    @property
    def passed(self):
        return self.bound is None or self.ratio <= self.bound


def decay_fit(masses, rho=None, floor=1e-12, slack=0.02):
    """Least-squares slope of log mass against n; ratio = exp(slope)."""
    m = np.asarray(masses, dtype=float)
    n = np.arange(1, m.size + 1)
    keep = m > floor
    if keep.sum() < 4:
        raise ValueError("decay_fit needs at least 4 rungs with mass above the floor")
    slope, icpt = np.polyfit(n[keep], np.log(m[keep]), 1)
    resid = np.log(m[keep]) - (slope * n[keep] + icpt)
    ss = np.sum((np.log(m[keep]) - np.log(m[keep]).mean()) ** 2)
    r2 = 1.0 - resid @ resid / ss if ss > 0 else 1.0
    ratio = float(np.exp(slope))
    return DecayFit(ratio, float(-np.log(ratio)), float(r2), int(keep.sum()),
                    None if rho is None else rho + slack)


@dataclass
class OrderFit:
    order: float
    r2: float
    errors: np.ndarray
    steps: np.ndarray
    monotone: bool


def fit_order(steps, errors):
    steps = np.asarray(steps, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if steps.size < 3:
        raise ValueError("an order fit needs at least 3 levels")
    ls, le = np.log(steps), np.log(errors)
    slope, icpt = np.polyfit(ls, le, 1)
    resid = le - (slope * ls + icpt)
    ss = np.sum((le - le.mean()) ** 2)
    r2 = 1.0 - resid @ resid / ss if ss > 0 else 1.0
    order = np.argsort(steps)
    mono = bool(np.all(np.diff(errors[order]) > 0))
    return OrderFit(float(slope), float(r2), errors, steps, mono)
