import numpy as np
import pytest

from ifdensity import firstpassage as fp
from ifdensity import fpe
from ifdensity import subdensity as sd
from ifdensity.kernel import Grid1D, TimeGrid, ou_transition_density

G = Grid1D(6.0, 1.0 / 100)
T = 1.0
DT = 2.5e-4


@pytest.fixture(scope="module")
def pieces():
    fine = TimeGrid(T, DT)
    m = fp.solve_M(fine)
    fT1 = fp.fT1_from_M(m)
    lad = fp.build_ladder(fT1)
    f0 = sd.f0_pde(G, fine, 0.01, 4)
    return m, fT1, lad, f0


@pytest.fixture(scope="module")
def stack(pieces):
    _, _, lad, f0 = pieces
    return sd.sum_series(f0, lad, keep=3)


def test_representation_agrees_with_pde(pieces):
    m, _, _, f0 = pieces
    rep = sd.f0_from_representation(G, TimeGrid(T, 0.05), m)
    for t in (0.5, 1.0):
        d = rep.snapshot(t) - f0.snapshot(t)
        assert G.h * np.abs(d).sum() < 5e-4
    assert sd.density_bound_ok(rep)


def test_representation_far_field_is_free_kernel(pieces):
    m = pieces[0]
    rep = sd.f0_from_representation(G, TimeGrid(0.1, 0.05), m)
    x = G.x
    sel = x <= -2.0
    np.testing.assert_allclose(rep.snapshot(0.1)[sel], ou_transition_density(x[sel], 0.1), rtol=1e-8, atol=1e-300)


def test_representation_mass_is_survival(pieces):
    m, fT1, _, _ = pieces
    rep = sd.f0_from_representation(G, TimeGrid(T, 0.1), m)
    for t in (0.3, 0.6, 1.0):
        assert rep.mass[rep.times.index_of(t)] == pytest.approx(1.0 - fT1.integral(t), abs=1e-4)


def test_f0_mass_matches_flux_integral(pieces):
    _, _, _, f0 = pieces
    flux = f0.meta["flux_fine"]
    k = flux.times.index_of(T)
    k0 = flux.times.index_of(0.01)
    # backward Euler loses exactly dt * outflux per step
    lost = DT * flux.values[k0 + 1:k + 1].sum()
    assert f0.mass[-1] == pytest.approx(1.0 - lost, abs=1e-4)


def test_ladder_and_iterate_routes_agree(pieces):
    _, fT1, lad, f0 = pieces
    conv = sd.LagConvolver(f0)
    f1 = sd.fn_from_ladder(f0, lad.rung(1), 1, conv)
    f1b = sd.fn_iterate(f0, fT1, conv)
    np.testing.assert_array_equal(f1.values, f1b.values)
    f2 = sd.fn_from_ladder(f0, lad.rung(2), 2, conv)
    f2b = sd.fn_iterate(f1, fT1)
    assert np.max(np.abs(f2.values - f2b.values)) < 1e-6
    assert f2b.meta["n"] == 2


def test_flux_identity(stack, pieces):
    lad = pieces[2]
    for n in (0, 1, 2):
        fn = stack[n]
        for t in (0.5, 1.0):
            assert abs(fn.right_flux[fn.times.index_of(t)] - lad.rung(n + 1).at(t)) < 5e-3


def test_series_mass_and_positivity(stack):
    f = stack.total
    rows = f.t >= 0.01
    assert np.abs(f.mass[rows] - 1.0).max() < 1e-3
    assert f.values.min() > -1e-8
    assert stack.meta["capped"] == (stack.tail_bound > 1e-6)
    with pytest.raises(IndexError):
        stack[4]


def test_series_matches_reinjection_solve(stack):
    r = fpe.solve(None, T, DT, G, store_every=4)
    d = stack.total.snapshot(T) - r.field.snapshot(T)
    assert G.h * np.abs(d).sum() < 1e-3


def _partition_error(dt):
    fine = TimeGrid(T, dt)
    fT1 = fp.fT1_from_M(fp.solve_M(fine))
    lad = fp.build_ladder(fT1)
    f0 = sd.f0_pde(G, fine, 0.01, int(round(1e-3 / dt)))
    f1 = sd.fn_from_ladder(f0, lad.rung(1), 1)
    k = f1.times.index_of(T)
    want = lad.rung(1).integral() - lad.rung(2).integral()
    return abs(f1.mass[k] - want)


def test_partition_error_is_first_order_in_dt():
    # the backward-Euler outflux is a rectangle rule, the ladder a trapezoid
    e1, e2 = _partition_error(5e-4), _partition_error(2.5e-4)
    assert e2 < 1e-4
    assert 1.6 < e1 / e2 < 2.4


def test_lag_convolver_preserves_mass_of_constant(pieces):
    f0 = pieces[3]
    conv = sd.LagConvolver(f0)
    g = np.ones(len(f0.times))
    g[0] = 0.0
    out = conv(g)
    k = f0.times.index_of(0.5)
    # int_0^t mass0(t - s) ds
    want = f0.times.dt * (f0.mass[: k + 1].sum() - 0.5 * (f0.mass[0] + f0.mass[k]))
    assert G.h * out[k].sum() == pytest.approx(want, rel=1e-3)


def test_series_n_max():
    n, bound = sd.series_n_max(2.0, 0.5, 1e-3, 60)
    assert bound <= 1e-3 and 2.0 * 0.5 ** n / 0.5 > 1e-3
    assert sd.series_n_max(2.0, 0.5, 1e-30, 5)[0] == 5
    with pytest.raises(ValueError):
        sd.series_n_max(1.0, 1.0, 1e-3, 5)


def test_support_checks():
    f = sd.bump(G, -1.0, 0.5)
    assert G.h * f.sum() == pytest.approx(1.0)
    sd.check_support(G, f)
    with pytest.raises(ValueError):
        sd.check_support(G, sd.bump(G, -1.0, 0.99))
    with pytest.raises(ValueError):
        sd.check_support(G, 2 * f)


def test_general_initial_matches_reinjection_solve(pieces):
    _, fT1, _, f0 = pieces
    f_in = sd.bump(G, -1.0, 0.5)
    gen = sd.general_initial(f_in, f0, fT1, T, DT)
    r = fpe.solve(f_in, T, DT, G, store_every=4)
    d = gen.density.snapshot(T) - r.field.snapshot(T)
    assert G.h * np.abs(d).sum() < 1e-3
    assert abs(gen.firing.at(0.5) - r.N.at(0.5)) < 5e-3
