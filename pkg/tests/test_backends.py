"""The numba kernels and the numpy fallbacks must agree."""

import numpy as np
import pytest

from ifdensity import _backend
from ifdensity import firstpassage as fp
from ifdensity import fpe, mc
from ifdensity import subdensity as sd
from ifdensity.kernel import Grid1D, TimeGrid

needs_numba = pytest.mark.skipif(not _backend.HAS_NUMBA, reason="numba not installed")


def both(fn):
    prev = _backend.backend_name()
    try:
        _backend.set_backend("numba")
        a = fn()
        _backend.set_backend("numpy")
        b = fn()
    finally:
        _backend.set_backend(prev)
    return a, b


@needs_numba
def test_mc_streams_identical():
    cfg = mc.PathConfig(1.0, 1e-3, seed=3, n_paths=3000)
    a, b = both(lambda: mc.simulate_ensemble(cfg))
    np.testing.assert_array_equal(a.n_jumps, b.n_jumps)
    np.testing.assert_allclose(a.x_end, b.x_end, rtol=0, atol=1e-12)
    np.testing.assert_allclose(a.jump_times, b.jump_times, atol=1e-12)
    assert (a.meta["backend"], b.meta["backend"]) == ("numba", "numpy")


@needs_numba
def test_mc_with_initial_density():
    g = Grid1D(2.0, 1.0 / 50)
    f = sd.bump(g, -1.0, 0.5)
    cfg = mc.PathConfig(0.5, 1e-3, seed=4, n_paths=1000, initial_density=(g.x, f))
    a, b = both(lambda: mc.simulate_ensemble(cfg))
    np.testing.assert_allclose(a.x_end, b.x_end, atol=1e-12)


@needs_numba
def test_simulate_path_both_backends():
    cfg = mc.PathConfig(1.0, 1e-3, seed=3, n_paths=10)
    a, b = both(lambda: mc.simulate_path(7, cfg))
    assert a.n_jumps == b.n_jumps and a.x_end == pytest.approx(b.x_end, abs=1e-12)


@needs_numba
def test_volterra_march():
    a, b = both(lambda: fp.solve_M(TimeGrid(1.0, 1e-3)).m_values.values)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


@needs_numba
def test_causal_conv(rng):
    x, y = rng.random(500), rng.random(500)
    a, b = both(lambda: fp.causal_conv(x, y))
    np.testing.assert_allclose(a, b, rtol=1e-12)


@needs_numba
def test_fpe_march():
    g = Grid1D(6.0, 1.0 / 100)
    a, b = both(lambda: fpe.solve(None, 0.5, 5e-4, g, store_every=2, early_until=0.02))
    np.testing.assert_allclose(a.field.values, b.field.values, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(a.N.values, b.N.values, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(a.mass.values, b.mass.values, atol=1e-13)
    np.testing.assert_allclose(a.early.values, b.early.values, rtol=1e-9, atol=1e-12)


@needs_numba
def test_representation_correction():
    g = Grid1D(6.0, 1.0 / 50)
    tg = TimeGrid(1.0, 1e-3)
    m = fp.solve_M(tg)
    a, b = both(lambda: sd.f0_from_representation(g, TimeGrid(1.0, 0.25), m).values)
    np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-14)


def test_set_backend_rejects_unknown():
    with pytest.raises(ValueError):
        _backend.set_backend("cuda")


def test_env_flag_forces_numpy():
    import os
    import subprocess
    import sys

    env = dict(os.environ, IFDENSITY_NO_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "import ifdensity; print(ifdensity.backend_name())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
