"""Pipeline orchestration, acceptance metrics and run artefacts.

Three pipelines produce the density and firing rate independently:

* ``mc``: path simulation,
* ``fpe``: direct flux-shift Fokker-Planck solve,
* ``series``: Volterra first passage, renewal ladder and the sub-density sum.

A :class:`Context` builds each piece lazily and caches it, so the CLI
subcommands and the acceptance tests share one code path.
"""

import json
import logging
import os
import platform
import subprocess
import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .. import __version__, _backend
from .. import firstpassage as fp
from .. import fpe, mc
from .. import subdensity as sd
from ..kernel import Grid1D, TimeGrid, TimeSeries
from . import io, study
from .compare import Metric, decay_fit, field_distances, histogram_zscores, mc_ks, series_sup
from .config import echo_config

log = logging.getLogger(__name__)

# acceptance thresholds
MASS_TOL = 1e-10
L1_TOL = 5e-3
KS_TOL = 0.004 + 5e-3
DUALITY_TOL = 1e-3
FLATNESS_TOL = 1e-6
FLUX_ID_TOL = 1e-3
FIRING_TOL = 2e-3
WEAK_TOL = 1e-3
WEAK_ORDER = 0.9
DELTA_TOL = 1e-3
TAIL_TOL = 1e-3
N_SIGMA = 3.0
N_BINS = 100

ALL_CRITERIA = tuple(range(1, 12))


def _git_revision():
    try:
        here = os.path.dirname(os.path.abspath(__file__))
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], cwd=here, capture_output=True, text=True,
                             timeout=5)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def build_info():
    import scipy

    info = {"package": "ifdensity", "version": __version__, "git": _git_revision(),
            "backend": _backend.backend_name(), "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}
    if _backend.HAS_NUMBA:
        info["numba"] = _backend.numba.__version__
    return info


class _Collector(logging.Handler):
    def __init__(self):
        super().__init__(logging.WARNING)
        self.messages = []

    def emit(self, record):
        self.messages.append(f"{record.name}: {record.getMessage()}")


@dataclass
class Shared:
    m: fp.MSolution
    fT1: TimeSeries
    ladder: fp.FiringLadder
    firing: TimeSeries
    f0: object
    fT1_flux: TimeSeries


@dataclass
class GeneralRun:
    f_in: np.ndarray
    fpe: fpe.SolveResult
    series: sd.GeneralResult


class Context:
    """Lazily built pipeline outputs for one configuration."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.grid = Grid1D(cfg.grid_L, cfg.grid_h)
        self.fine = TimeGrid(cfg.T, cfg.dt)
        self.timings = {}

    def _timed(self, name, fn):
        t0 = time.perf_counter()
        out = fn()
        self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0
        return out

    @cached_property
    def shared(self):
        def build():
            cfg = self.cfg
            m = fp.solve_M(self.fine)
            fT1 = fp.fT1_from_M(m)
            ladder = fp.build_ladder(fT1, cfg.ladder_tol, cfg.ladder_n_cap)
            f0 = sd.f0_pde(self.grid, self.fine, cfg.warm_t0, cfg.store_every)
            return Shared(m, fT1, ladder, fp.firing_rate(ladder), f0, fp.fT1_from_flux(f0))

        return self._timed("series", build)

    @cached_property
    def stack(self):
        return self._timed("series", lambda: sd.sum_series(self.shared.f0, self.shared.ladder,
                                                           self.cfg.series_tol, self.cfg.series_keep))

    @cached_property
    def fpe(self):
        cfg = self.cfg
        return self._timed("fpe", lambda: fpe.solve(None, cfg.T, cfg.dt, self.grid, warm_t0=cfg.warm_t0,
                                                    store_every=cfg.store_every))

    def path_config(self, initial_density=None):
        cfg = self.cfg
        return mc.PathConfig(cfg.T, cfg.mc_substep, cfg.mc_seed, cfg.mc_n_paths, initial_density=initial_density,
                             eps0=cfg.initial_eps0)

    @cached_property
    def ens(self):
        return self._timed("mc", lambda: mc.simulate_ensemble(self.path_config()))

    @cached_property
    def initial_density(self):
        cfg = self.cfg
        if cfg.initial == "file":
            f = io.read_density_file(cfg.initial_file, self.grid)
            mass = self.grid.h * f.sum()
            if abs(mass - 1.0) > 1e-6:
                log.warning("initial density has mass %.8g on the grid; renormalised", mass)
            return f / mass
        return sd.bump(self.grid, -1.0, 0.5)

    @cached_property
    def general(self):
        cfg = self.cfg
        f_in = self.initial_density

        def build():
            res = fpe.solve(f_in, cfg.T, cfg.dt, self.grid, store_every=cfg.store_every, early_until=0.02)
            ser = sd.general_initial(f_in, self.shared.f0, self.shared.fT1, cfg.T, cfg.dt, cfg.initial_eps0,
                                     cfg.ladder_tol, cfg.ladder_n_cap)
            return GeneralRun(f_in, res, ser)

        return self._timed("general", build)

    @cached_property
    def general_ens(self):
        return self._timed("mc", lambda: mc.simulate_ensemble(
            self.path_config((self.grid.x, self.general.f_in))))

    @cached_property
    def studies(self):
        return self._timed("study", lambda: study.convergence_study(("mms", "temporal", "volterra", "weak", "defect")))


# -- criteria ------------------------------------------------------------------------


def _criterion_1(ctx):
    drift = np.abs(ctx.fpe.mass.values - 1.0).max()
    return [Metric("mass_drift_max", drift, MASS_TOL, "<=", 1)]


def _cross_checks(crit, fpe_field, series_field, ens, T, N_series, N_fpe, tag=""):
    l1, _ = field_distances(series_field, fpe_field, T)
    out = [Metric(f"L1_series_fpe{tag}", l1, L1_TOL, "<=", crit),
           Metric(f"KS_mc_fpe{tag}", mc_ks(ens, fpe_field, T), KS_TOL, "<=", crit),
           Metric(f"KS_mc_series{tag}", mc_ks(ens, series_field, T), KS_TOL, "<=", crit)]
    if N_series is not None:
        out.append(Metric(f"sup_N_series_fpe{tag}", series_sup(N_series, N_fpe, 0.1, T), FIRING_TOL, "<=", crit))
        mean, se = mc.mean_jumps(ens)
        for name, N in (("series", N_series), ("fpe", N_fpe)):
            out.append(Metric(f"z_intN_{name}_vs_mc{tag}", abs(N.integral() - mean) / se, N_SIGMA, "<=", crit))
    return out


def _criterion_2(ctx):
    T = ctx.cfg.T
    return _cross_checks(2, ctx.fpe.field, ctx.stack.total, ctx.ens, T, None, None)


def _criterion_3(ctx):
    sh = ctx.shared
    out = [Metric("sup_fT1_volterra_flux", series_sup(sh.fT1, sh.fT1_flux, 0.0, ctx.cfg.T), DUALITY_TOL, "<=", 3)]
    hist = mc.empirical_hitting_histogram(ctx.ens, 1, np.linspace(0.0, ctx.cfg.T, N_BINS + 1))
    n = len(ctx.ens)
    out.append(Metric("max_bin_z_volterra", histogram_zscores(hist, sh.fT1, n).max(), N_SIGMA, "<=", 3))
    out.append(Metric("max_bin_z_flux", histogram_zscores(hist, sh.fT1_flux, n).max(), N_SIGMA, "<=", 3))
    return out


def _criterion_4(ctx):
    f = ctx.shared.fT1
    val = {t: f.values[f.times.index_of(t)] for t in (0.005, 0.01, 0.02)}
    q = {t: v / t for t, v in val.items()}
    worst = max(q[0.01] / q[0.02], q[0.005] / q[0.01])
    return [Metric("fT1_at_0.01", val[0.01], FLATNESS_TOL, "<=", 4),
            Metric("quotient_ratio_max", worst, 1.0, "<", 4)]


def _criterion_5(ctx):
    sh = ctx.shared
    rho = sh.ladder.rho
    n = len(ctx.ens)
    hits = ctx.ens.n_jumps >= 1
    p_hat = hits.mean()
    se = np.sqrt(p_hat * (1.0 - p_hat) / n)
    fit = decay_fit(sh.ladder.masses, rho)
    return [Metric("rho_T", rho, 1.0, "open", 5, lower=0.0),
            Metric("z_rho_vs_mc", abs(rho - p_hat) / se, N_SIGMA, "<=", 5),
            Metric("ladder_mass_ratio", fit.ratio, rho + 0.02, "<=", 5)]


def _criterion_6(ctx, with_refinement=True):
    lad = ctx.shared.ladder
    stack = ctx.stack
    worst = 0.0
    for n in (0, 1, 2):
        fn = stack[n]
        for t in (0.5, 1.0, 2.0):
            k = fn.times.index_of(t)
            worst = max(worst, abs(fn.right_flux[k] - lad.rung(n + 1).at(t)))
    h = ctx.grid.h
    defect = max(fpe.jump_defect(ctx.fpe.field, ctx.fpe.N, t)[0] for t in (0.5, 1.0, 2.0))
    out = [Metric("flux_identity_max", worst, FLUX_ID_TOL, "<=", 6),
           Metric("jump_defect_over_h", defect / h, 1.0, "<=", 6)]
    if with_refinement:
        _, ratio = ctx.studies["defect"]
        out.append(Metric("jump_defect_ratio", ratio, 2.3, "in", 6, lower=1.7))
    return out


def _criterion_7(ctx):
    T = ctx.cfg.T
    out = [Metric("sup_N_ladder_fpe", series_sup(ctx.shared.firing, ctx.fpe.N, 0.1, T), FIRING_TOL, "<=", 7)]
    mean, se = mc.mean_jumps(ctx.ens)
    out.append(Metric("z_intN_ladder_vs_mc", abs(ctx.shared.firing.integral() - mean) / se, N_SIGMA, "<=", 7))
    out.append(Metric("z_intN_fpe_vs_mc", abs(ctx.fpe.N.integral() - mean) / se, N_SIGMA, "<=", 7))
    return out


def _criterion_8(ctx, with_refinement=True):
    from .compare import fit_order

    out = []
    res = ctx.fpe
    for phi in fpe.standard_test_functions():
        out.append(Metric(f"weak_residual_{phi.name}", fpe.weak_residual(res.field, res.N, phi), WEAK_TOL, "<=", 8))
    if with_refinement:
        for name, (hs, r) in ctx.studies["weak"].items():
            if name == "one":
                # exact discrete identity: stays at roundoff on every level
                out.append(Metric("weak_residual_one_max_over_levels", max(r), 1e-8, "<=", 8))
            else:
                out.append(Metric(f"weak_order_{name}", fit_order(hs, r).order, WEAK_ORDER, ">=", 8))
    return out


def _criterion_9(ctx):
    g = ctx.grid
    f0 = sd.f0_pde(g, TimeGrid(2e-3, ctx.cfg.dt), warm_t0=1e-4, store_every=1)
    u = f0.snapshot(1e-3)
    x = g.x
    out = []
    for name, phi in (("one", np.ones_like(x)), ("x", x), ("x2", x * x), ("cos", np.cos(x))):
        err = abs(g.h * np.sum(phi * u) - phi[g.reset_index])
        out.append(Metric(f"delta_limit_{name}", err, DELTA_TOL, "<=", 9))
    return out


def _criterion_10(ctx):
    gen = ctx.general
    early = gen.fpe.early
    l2 = fpe.l2_initial_convergence(early, gen.f_in)
    ts = (0.0025, 0.005, 0.01, 0.02)
    vals = [l2.values[early.times.index_of(t)] for t in ts]
    worst = max(a / b for a, b in zip(vals[:-1], vals[1:]))
    fld = gen.fpe.field
    k_hi = fld.times.index_of(min(0.1, ctx.cfg.T))
    i5 = ctx.grid.index_of(-5.0)
    tail = max(fld.cdf(t)[i5] for t in fld.t[: k_hi + 1])
    out = [Metric("l2_ratio_max", worst, 1.0, "<", 10), Metric("tail_mass_below_-5", tail, TAIL_TOL, "<=", 10)]
    out += _cross_checks(10, gen.fpe.field, gen.series.density, ctx.general_ens, ctx.cfg.T, gen.series.firing,
                         gen.fpe.N, tag="_general")
    return out


def _criterion_11(ctx):
    s = ctx.studies
    return [Metric("mms_spatial_order", s["mms"].order, 2.2, "in", 11, lower=1.8),
            Metric("be_temporal_order", s["temporal"].order, 1.2, "in", 11, lower=0.8),
            Metric("volterra_order", s["volterra"].order, 1.0, ">=", 11)]


CRITERIA = {
    1: (_criterion_1, {"fpe"}),
    2: (_criterion_2, {"fpe", "series", "mc"}),
    3: (_criterion_3, {"series", "mc"}),
    4: (_criterion_4, {"series"}),
    5: (_criterion_5, {"series", "mc"}),
    6: (_criterion_6, {"series", "fpe"}),
    7: (_criterion_7, {"series", "fpe", "mc"}),
    8: (_criterion_8, {"fpe"}),
    9: (_criterion_9, {"fpe"}),
    10: (_criterion_10, {"fpe", "series", "mc"}),
    11: (_criterion_11, {"fpe", "series"}),
}


def evaluate(ctx, criteria):
    metrics = []
    for c in criteria:
        fn, needs = CRITERIA[c]
        if needs <= set(ctx.cfg.pipelines):
            metrics += fn(ctx)
    return metrics


def info_metrics(ctx):
    """Pipeline summaries that carry no threshold."""
    out = []
    pipes = set(ctx.cfg.pipelines)
    if "mc" in pipes:
        mean, se = mc.mean_jumps(ctx.ens)
        out += [Metric("mc_P_T1_le_T", float((ctx.ens.n_jumps >= 1).mean()), np.nan, "info"),
                Metric("mc_mean_jumps", mean, np.nan, "info"), Metric("mc_mean_jumps_se", se, np.nan, "info")]
    if "series" in pipes:
        out += [Metric("rho_T_volterra", ctx.shared.ladder.rho, np.nan, "info"),
                Metric("ladder_rungs", ctx.shared.ladder.n_max, np.nan, "info")]
    if "fpe" in pipes:
        N, Nr = ctx.fpe.N, ctx.fpe.N_reroute
        sel = N.t >= 10 * ctx.cfg.dt + ctx.cfg.warm_t0
        rel = np.abs(N.values[sel] - Nr.values[sel]) / np.maximum(np.abs(N.values[sel]), 1e-300)
        big = N.values[sel] > 1e-6
        out.append(Metric("flux_readout_rel_diff", float(rel[big].max()) if big.any() else 0.0, np.nan, "info"))
        fld = ctx.fpe.field
        i1 = ctx.grid.index_of(-ctx.cfg.grid_L + 1.0)
        out.append(Metric("left_strip_mass_max", float(max(fld.cdf(t)[i1] for t in fld.t)), np.nan, "info"))
    return out


# -- artefacts -----------------------------------------------------------------------


def _snapshot_times(times, T):
    want = [T / 4, T / 2, T]
    out = []
    for t in want:
        try:
            times.index_of(t)
            out.append(t)
        except ValueError:
            pass
    return out


def _write_outputs(ctx, out_dir, fields=True):
    cfg = ctx.cfg
    pipes = set(cfg.pipelines)
    general = cfg.initial == "file"
    T = cfg.T
    if "mc" in pipes:
        ens = ctx.general_ens if general else ctx.ens
        edges = np.linspace(-cfg.grid_L, 1.0, int(round((cfg.grid_L + 1.0) / 0.05)) + 1)
        counts, _ = np.histogram(ens.x_end, bins=edges)
        io.write_histogram_csv(os.path.join(out_dir, "density_mc.csv"), T, edges, counts / len(ens) / np.diff(edges))
        all_jumps = ens.jump_times[np.isfinite(ens.jump_times)]
        tedges = np.linspace(0.0, T, N_BINS + 1)
        c, _ = np.histogram(all_jumps, bins=tedges)
        rate = TimeSeries(TimeGrid(T, T / N_BINS), np.concatenate(([0.0], c / len(ens) / np.diff(tedges))))
        io.write_series_csv(os.path.join(out_dir, "firing_mc.csv"), rate, "N")
    if "fpe" in pipes:
        res = ctx.general.fpe if general else ctx.fpe
        io.write_field_csv(os.path.join(out_dir, "density_fpe.csv"), res.field,
                           _snapshot_times(res.field.times, T))
        io.write_series_csv(os.path.join(out_dir, "firing_fpe.csv"), res.N, "N")
    if "series" in pipes:
        io.write_ladder_csv(os.path.join(out_dir, "ladder.csv"), ctx.shared.ladder, cfg.store_every)
        if not fields:
            io.write_series_csv(os.path.join(out_dir, "fT1.csv"), ctx.shared.fT1)
            io.write_series_csv(os.path.join(out_dir, "firing_series.csv"), ctx.shared.firing, "N")
        elif general:
            dens, N = ctx.general.series.density, ctx.general.series.firing
        else:
            dens, N = ctx.stack.total, ctx.shared.firing
        if fields:
            io.write_field_csv(os.path.join(out_dir, "density_series.csv"), dens, _snapshot_times(dens.times, T))
            io.write_series_csv(os.path.join(out_dir, "firing_series.csv"), N, "N")
    io.write_plot_script(out_dir)


@dataclass
class RunManifest:
    config: str
    build: dict
    metrics: list
    warnings: list
    timings: dict
    status: str = "ok"
    error: str = None
    extra: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.status == "ok" and all(m.passed for m in self.metrics)

    def criteria_status(self):
        out = {}
        for m in self.metrics:
            if m.criterion is not None:
                out[m.criterion] = out.get(m.criterion, True) and m.passed
        return out

    def to_json(self):
        d = {"config": self.config, "build": self.build, "metrics": [m.as_dict() for m in self.metrics],
             "warnings": self.warnings, "timings": self.timings, "status": self.status}
        if self.error:
            d["error"] = self.error
        d.update(self.extra)
        return json.dumps(d, indent=2, sort_keys=False, default=float)


def run(cfg, criteria=ALL_CRITERIA, out_dir=None, ctx=None, write=True, fields=True):
    """Execute the configured pipelines, evaluate ``criteria`` and write artefacts."""
    ctx = ctx or Context(cfg)
    out_dir = out_dir or cfg.outputs
    collector = _Collector()
    root = logging.getLogger("ifdensity")
    root.addHandler(collector)
    metrics, status, error = [], "ok", None
    try:
        metrics = evaluate(ctx, criteria) + info_metrics(ctx)
        if write:
            os.makedirs(out_dir, exist_ok=True)
            _write_outputs(ctx, out_dir, fields)
    except Exception as exc:  # recorded in the manifest, then re-raised by the CLI
        status, error = "failed", f"{type(exc).__name__}: {exc}"
        log.exception("run aborted")
    finally:
        root.removeHandler(collector)
    warnings = list(collector.messages)
    if "series" in cfg.pipelines and "shared" in ctx.__dict__:
        warnings.append(f"ladder tail bound {ctx.shared.ladder.tail_bound:.3g}")
        if "stack" in ctx.__dict__:
            warnings.append(f"series n_max {ctx.stack.n_max}, tail bound {ctx.stack.tail_bound:.3g}")
    manifest = RunManifest(echo_config(cfg), build_info(), metrics, warnings, dict(ctx.timings), status, error)
    if status != "ok":
        manifest.extra["partial_outputs"] = True
    if write:
        os.makedirs(out_dir, exist_ok=True)
        io.write_metrics_csv(os.path.join(out_dir, "metrics.csv"), metrics)
        with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
            fh.write(manifest.to_json())
    return manifest
