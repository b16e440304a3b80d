import dataclasses
import importlib
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ifdensity import firstpassage as fp
from ifdensity.harness import cli, compare, config
run = importlib.import_module("ifdensity.harness.run")  # the package re-exports run() under the same name
from ifdensity.harness.config import ConfigError, RunConfig, echo_config, parse_config
from ifdensity.kernel import TimeGrid, TimeSeries

# -- config ---------------------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(T=st.sampled_from([0.5, 1.0, 2.0]), dt=st.sampled_from([1e-4, 2.5e-4, 1e-3]),
       h=st.sampled_from([1 / 50, 1 / 100, 1 / 400]), paths=st.integers(1, 10**7), seed=st.integers(0, 2**40),
       tol=st.floats(1e-12, 1e-2), pipes=st.lists(st.sampled_from(config.PIPELINES), min_size=1, unique=True))
def test_config_round_trip(T, dt, h, paths, seed, tol, pipes):
    cfg = RunConfig(T=T, dt=dt, grid_h=h, mc_n_paths=paths, mc_seed=seed, series_tol=tol, pipelines=tuple(pipes))
    assert parse_config(echo_config(cfg)) == cfg


def test_config_parsing_details():
    cfg = parse_config("grid.h = 1/400  # fraction\nmc.n_paths = 1e3\npipelines = fpe, series\n")
    assert cfg.grid_h == 1 / 400 and cfg.mc_n_paths == 1000 and cfg.pipelines == ("fpe", "series")
    for bad in ("nokey\n", "grid.q = 1\n", "dt = -1\n", "pipelines = mc, gpu\n", "initial = file\n"):
        with pytest.raises(ConfigError):
            parse_config(bad)


# -- fits and comparisons -------------------------------------------------------------


def test_decay_fit_recovers_ratio():
    m = 0.6 * 0.3 ** np.arange(10)
    fit = compare.decay_fit(m, rho=0.3)
    assert fit.ratio == pytest.approx(0.3, rel=1e-12)
    assert fit.passed and fit.r2 == pytest.approx(1.0)
    with pytest.raises(ValueError):
        compare.decay_fit(m[:3])


def test_fit_order_exact_power():
    h = np.array([0.1, 0.05, 0.025])
    fit = compare.fit_order(h, 3 * h**2)
    assert fit.order == pytest.approx(2.0) and fit.monotone
    with pytest.raises(ValueError):
        compare.fit_order(h[:2], h[:2])


def test_metric_relations():
    assert compare.Metric("a", 1.0, 1.0, "<=").passed
    assert not compare.Metric("a", 1.0, 1.0, "<").passed
    assert compare.Metric("a", 2.0, 2.3, "in", lower=1.7).passed
    assert not compare.Metric("a", 1.0, 1.0, "open", lower=0.0).passed
    assert not compare.Metric("a", np.nan, 1.0).passed
    assert compare.Metric("a", np.nan, np.nan, "info").passed


def test_series_sup_disjoint():
    a = TimeSeries(TimeGrid(1.0, 0.1), np.zeros(11))
    with pytest.raises(ValueError):
        compare.series_sup(a, a, 2.0, 3.0)


def test_histogram_zscores_exact_model():
    from ifdensity.mc import Histogram

    tg = TimeGrid(1.0, 1e-3)
    curve = TimeSeries(tg, np.ones(len(tg)))
    edges = np.linspace(0, 1, 11)
    h = Histogram(edges, np.ones(10), np.zeros(10), 100)
    assert np.all(compare.histogram_zscores(h, curve, 100) < 1e-9)


# -- harness runs ---------------------------------------------------------------------


def test_mutation_dropping_rung_one_is_caught(small_ctx):
    """A ladder that silently loses f_{T_1} must fail the firing and decay checks."""
    good = {m.name: m for m in run._criterion_7(small_ctx) + run._criterion_5(small_ctx)}
    # the coarse grid leaves an O(h^2) gap of a few 1e-3; the mutant is off by f_T1 itself
    assert good["sup_N_ladder_fpe"].value < 5e-3 and good["ladder_mass_ratio"].passed
    sh = small_ctx.shared
    lad = sh.ladder
    broken = dataclasses.replace(lad, rungs=lad.rungs[1:], masses=lad.masses[1:])
    mutant = run.Context(small_ctx.cfg)
    mutant.__dict__["shared"] = dataclasses.replace(sh, ladder=broken, firing=fp.firing_rate(broken))
    mutant.__dict__["fpe"] = small_ctx.fpe
    mutant.__dict__["ens"] = small_ctx.ens
    bad = {m.name: m for m in run._criterion_7(mutant)}
    assert bad["sup_N_ladder_fpe"].value > 50 * good["sup_N_ladder_fpe"].value
    assert not bad["z_intN_ladder_vs_mc"].passed


def test_mc_only_run(tmp_path):
    cfg = RunConfig(T=0.5, mc_n_paths=2000, pipelines=("mc",), outputs=str(tmp_path / "a"))
    man = run.run(cfg)
    assert man.status == "ok" and man.passed
    names = {m.name for m in man.metrics}
    assert {"mc_P_T1_le_T", "mc_mean_jumps"} <= names
    assert not any(m.criterion for m in man.metrics)
    for f in ("density_mc.csv", "firing_mc.csv", "metrics.csv", "manifest.json", "plot.py"):
        assert (tmp_path / "a" / f).exists()


def test_rerun_is_byte_identical(tmp_path):
    outs = []
    for d in ("a", "b"):
        cfg = RunConfig(T=0.5, dt=5e-4, grid_h=1 / 50, mc_n_paths=3000, store_every=2, pipelines=("mc", "series"),
                        outputs=str(tmp_path / d))
        run.run(cfg, criteria=(3, 4, 5))
        outs.append((tmp_path / d / "metrics.csv").read_bytes())
    assert outs[0] == outs[1]


def test_manifest_contents(tmp_path):
    cfg = RunConfig(T=0.5, dt=5e-4, grid_h=1 / 50, store_every=2, pipelines=("series",), outputs=str(tmp_path))
    man = run.run(cfg, criteria=(4,), fields=False)
    d = json.loads((tmp_path / "manifest.json").read_text())
    assert {"config", "build", "metrics", "warnings", "timings", "status"} <= set(d)
    assert d["build"]["backend"] in ("numba", "numpy")
    assert parse_config(d["config"]) == cfg
    assert man.criteria_status() == {4: True}
    assert any("ladder tail bound" in w for w in d["warnings"])


def test_failure_is_recorded(tmp_path):
    # criterion 9 needs dt to divide 1e-4; the error lands in the manifest
    cfg = RunConfig(T=0.5, dt=5e-4, grid_h=1 / 50, store_every=2, pipelines=("fpe",), outputs=str(tmp_path))
    man = run.run(cfg, criteria=(9,))
    assert man.status == "failed" and not man.passed
    assert json.loads((tmp_path / "manifest.json").read_text())["partial_outputs"] is True


# -- CLI --------------------------------------------------------------------------------


def test_cli_exit_codes(tmp_path, capsys):
    assert cli.main(["sim", "--paths", "500", "--out", str(tmp_path / "s")]) == 0
    assert cli.main(["sim", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert cli.main(["firstpassage", "--dt", "2.5e-4", "--out", str(tmp_path / "f")]) == 0
    # the delta-limit moment x^2 cannot meet its tolerance at t = 1e-3, so solve exits 1
    assert cli.main(["solve", "--grid-h", "1/50", "--out", str(tmp_path / "p")]) == 1
    out = capsys.readouterr().out
    assert "PASS [ 4] fT1_at_0.01" in out and "FAIL [ 9] delta_limit_x2" in out


def test_cli_config_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("T = 0.5\nmc.n_paths = 300\nmc.seed = 9\n")
    assert cli.main(["sim", "--config", str(p), "--out", str(tmp_path / "o")]) == 0
    d = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert "mc.seed = 9" in d["config"]
