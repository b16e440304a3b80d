import numpy as np
import pytest
from scipy.integrate import quad

from ifdensity import fpe
from ifdensity.harness import study
from ifdensity.kernel import Grid1D, ou_transition_density

G = Grid1D(6.0, 1.0 / 100)


@pytest.fixture(scope="module")
def coarse_run():
    return fpe.solve(None, 1.0, 2.5e-4, G, store_every=4)


def exact_stationary(x):
    """Stationary density with reinjection at 0: zero flux for x < 0, flux -N0 on (0, 1)."""
    raw = np.array([np.exp(-0.5 * xi * xi) * quad(lambda y: np.exp(0.5 * y * y), max(xi, 0.0), 1.0)[0]
                    for xi in x])
    norm = quad(lambda xi: np.exp(-0.5 * xi * xi) * quad(lambda y: np.exp(0.5 * y * y), max(xi, 0.0), 1.0)[0],
                -12, 1, points=[0.0], limit=200)[0]
    return raw / norm, 1.0 / norm


def test_flux_shift_columns_conserve_mass(rng):
    op = fpe.build_operator(G, fpe.FLUX_SHIFT)
    A = op.dense()
    np.testing.assert_allclose(A.sum(axis=0), 0.0, atol=1e-9 * np.abs(A).max())
    f = rng.random(op.size)
    assert abs(G.h * op.apply(f).sum()) < 1e-9
    np.testing.assert_allclose(op.apply(f), A @ f, rtol=1e-12, atol=1e-9)


def test_absorbing_loss_equals_outflux(rng):
    op = fpe.build_operator(G, fpe.ABSORBING)
    f = rng.random(op.size)
    assert G.h * op.apply(f).sum() == pytest.approx(-op.outflux(f), rel=1e-10)


def test_bad_options():
    with pytest.raises(ValueError):
        fpe.build_operator(G, "dirichlet")
    with pytest.raises(ValueError):
        fpe.build_operator(G, advection="quick")
    with pytest.raises(ValueError):
        fpe.solve(None, 1.0, 1e-3, G, warm_t0=0.5)
    with pytest.raises(ValueError):
        fpe.step(np.zeros(G.n_nodes - 1), -1.0, fpe.build_operator(G))


def test_mass_conserved(coarse_run):
    m = coarse_run.mass.values
    assert np.abs(m - 1.0).max() < 1e-10
    assert np.abs(np.diff(m)).max() < 1e-14
    assert coarse_run.field.values.min() > -1e-8


def test_readouts_agree(coarse_run):
    N, Nr = coarse_run.N, coarse_run.N_reroute
    sel = N.t >= 0.2
    # both are second order in h and differ by O(h^2)
    assert np.max(np.abs(N.values[sel] - Nr.values[sel])) < 5e-3


def test_stationary_profile_matches_closed_form():
    g = Grid1D(6.0, 1.0 / 200)
    op = fpe.build_operator(g)
    p = fpe.stationary_profile(op)
    exact, N0 = exact_stationary(g.x[:-1])
    assert np.max(np.abs(p - exact)) < 1e-4
    assert op.outflux(p) == pytest.approx(N0, rel=1e-4)
    assert np.max(np.abs(op.apply(p))) < 1e-8


def test_long_run_approaches_stationary_state():
    r = fpe.solve(None, 8.0, 1e-3, G, store_every=10)
    exact, N0 = exact_stationary(G.x[:-1])
    assert np.max(np.abs(r.field.snapshot(8.0)[:-1] - exact)) < 1e-3
    assert r.N.values[-1] == pytest.approx(N0, rel=2e-3)


def test_mms_second_order():
    fit = study.mms_spatial(levels=(25, 50, 100, 200))
    assert 1.8 <= fit.order <= 2.2
    assert fit.monotone


def test_upwind_is_first_order():
    fit = study.mms_spatial(levels=(25, 50, 100, 200), advection="upwind")
    assert 0.8 <= fit.order <= 1.2


def test_backward_euler_first_order():
    fit = study.temporal_self_refinement(dts=(2e-3, 1e-3, 5e-4, 2.5e-4), h=1.0 / 100, T=0.5)
    assert 0.8 <= fit.order <= 1.2


def test_step_matches_dense_solve(rng):
    op = fpe.build_operator(G)
    f = rng.random(op.size)
    got = fpe.step(f, 1e-3, op)
    want = np.linalg.solve(np.eye(op.size) - 1e-3 * op.dense(), f)
    np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-12)


def test_jump_condition_at_reset(coarse_run):
    for t in (0.5, 1.0):
        defect, value_gap = fpe.jump_defect(coarse_run.field, coarse_run.N, t)
        assert defect <= G.h
        assert value_gap == 0.0


def test_weak_residuals(coarse_run):
    for phi in fpe.standard_test_functions():
        r = fpe.weak_residual(coarse_run.field, coarse_run.N, phi)
        assert r < (1e-10 if phi.name == "one" else 1e-2), phi.name


def test_general_start_and_l2(rng):
    x = G.x
    f_in = np.where((x > -1) & (x < 0.5), (x + 1) ** 2 * (0.5 - x) ** 2, 0.0)
    f_in /= G.h * f_in.sum()
    r = fpe.solve(f_in, 0.1, 2.5e-4, G, store_every=4, early_until=0.02)
    assert r.early.snapshot(0.0)[10] == f_in[10]
    l2 = fpe.l2_initial_convergence(r.early, f_in).values
    assert l2[0] == 0.0 and np.all(np.diff(l2[1:]) > 0)


def test_absorbing_mass_equals_one_minus_hits():
    r = fpe.solve(None, 1.0, 2.5e-4, G, mode=fpe.ABSORBING, store_every=4)
    k = r.mass.times.index_of(1.0)
    # backward Euler: mass loss is the rectangle rule of the outflux from the warm start
    k0 = r.mass.times.index_of(0.01)
    lost = r.mass.values[k0] - r.mass.values[k]
    assert lost == pytest.approx(2.5e-4 * r.N_reroute.values[k0 + 1:k + 1].sum(), rel=1e-10)
    assert r.mass.values[k0] == pytest.approx(1.0, abs=1e-10)


def test_warm_start_is_free_kernel():
    r = fpe.solve(None, 0.02, 1e-4, G, store_every=100)
    k = r.field.times.index_of(0.01)
    np.testing.assert_allclose(r.field.values[k, :-1], ou_transition_density(G.x[:-1], 0.01), rtol=1e-14)
