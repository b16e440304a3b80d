"""Monte Carlo simulation of the reset OU jump diffusion (X_t, n_t).

Transitions are exact OU increments on a substep grid. A hit between two
substep endpoints is detected with the drift-frozen Brownian-bridge crossing
probability exp(-(1 - x0)(1 - x1) / dt). Each path draws its randomness from
a counter-based SplitMix64 stream keyed on (seed, path index), so ensembles
are reproducible regardless of scheduling, and the numba and numpy backends
consume identical random numbers.
"""

import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _backend
from ._backend import njit, prange
from .kernel import TimeGrid

log = logging.getLogger(__name__)

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0
TWO_PI = 2.0 * np.pi
# crossing probabilities below exp(-40) are treated as 0
_ARG_CUT = 40.0

DUMP_MAGIC = b"IFDENS01"


class SimulationError(RuntimeError):
    def __init__(self, msg, completed=0):
        super().__init__(msg)
        self.completed = completed


@dataclass
class PathConfig:
    t_end: float
    substep: float = 1e-3
    seed: int = 0
    n_paths: int = 1
    record_jump_times: bool = True
    y0: float = 0.0
    # optional initial density as (x nodes, density values); overrides y0
    initial_density: tuple = None
    eps0: float = 0.05
    barrier: float = 1.0
    reset: float = 0.0
    max_jumps: int = 64

    def __post_init__(self):
        if self.t_end < 0:
            raise ValueError("t_end must be nonnegative")
        if self.substep <= 0:
            raise ValueError("substep must be positive")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if not self.y0 < self.barrier:
            raise ValueError("start point must lie below the threshold")
        if self.initial_density is not None:
            if self.eps0 <= 0:
                raise ValueError("eps0 must be positive when a density is supplied")
            xs, fs = (np.asarray(a, dtype=float) for a in self.initial_density)
            if np.any(fs < 0):
                raise ValueError("initial density must be nonnegative")
            support = xs[fs > 0]
            if support.size and support.max() > self.barrier - self.eps0 + 1e-12:
                raise ValueError(f"initial density must be supported in (-inf, 1 - {self.eps0}]")

    def echo(self):
        d = asdict(self)
        if self.initial_density is not None:
            xs, fs = self.initial_density
            d["initial_density"] = hashlib.sha256(
                np.ascontiguousarray(xs, dtype="<f8").tobytes() + np.ascontiguousarray(fs, dtype="<f8").tobytes()
            ).hexdigest()
        return d

    def digest(self):
        return hashlib.sha256(json.dumps(self.echo(), sort_keys=True).encode()).digest()


@dataclass
class PathSample:
    x_end: float
    n_jumps: int
    jump_times: list


@dataclass
class PathEnsemble:
    x_end: np.ndarray
    n_jumps: np.ndarray
    jump_times: np.ndarray
    config: PathConfig
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.x_end.shape[0]

    def __getitem__(self, i):
        n = int(self.n_jumps[i])
        return PathSample(float(self.x_end[i]), n, self.jump_times[i, :n].tolist())

    @property
    def samples(self):
        return [self[i] for i in range(len(self))]

    def kth_jump_times(self, k):
        have = self.n_jumps >= k
        return self.jump_times[have, k - 1]


# -- counter-based random numbers --------------------------------------------


@njit(cache=True)
def _mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def _uniform(key, ctr):
    z = _mix64(key + (ctr + np.uint64(1)) * GOLDEN)
    return (np.float64(z >> _S11) + 0.5) * _INV53


@njit(cache=True)
def _path_key(seed, index):
    return _mix64(_mix64(seed * GOLDEN + GOLDEN) + np.uint64(index) * GOLDEN)


def _mix64_np(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _uniform_np(key, ctr):
    z = _mix64_np(key + (ctr + np.uint64(1)) * GOLDEN)
    return ((z >> _S11).astype(np.float64) + 0.5) * _INV53


def _path_keys_np(seed, n):
    idx = np.arange(n, dtype=np.uint64)
    base = _mix64_np(np.array([seed], dtype=np.uint64) * GOLDEN + GOLDEN)
    return _mix64_np(base + idx * GOLDEN)


# -- path kernels --------------------------------------------------------------


@njit(cache=True)
def _one_path(key, x0, t_end, dt, barrier, reset, times_row, max_jumps):
    e_full = np.exp(-dt)
    sd_full = np.sqrt(-np.expm1(-2.0 * dt))
    x = x0
    t = 0.0
    n = 0
    ctr = np.uint64(1)
    spare = 0.0
    have_spare = False
    while t_end - t > 1e-12 * max(t_end, 1.0):
        h = t_end - t
        if h >= dt:
            h = dt
            e = e_full
            sd = sd_full
        else:
            e = np.exp(-h)
            sd = np.sqrt(-np.expm1(-2.0 * h))
        if have_spare:
            z = spare
            have_spare = False
        else:
            r = np.sqrt(-2.0 * np.log(_uniform(key, ctr)))
            ang = TWO_PI * _uniform(key, ctr + np.uint64(1))
            z = r * np.cos(ang)
            spare = r * np.sin(ang)
            have_spare = True
        x1 = e * x + sd * z
        hit = False
        th = 0.0
        if x1 >= barrier:
            hit = True
            th = t + h * (barrier - x) / (x1 - x)
        else:
            arg = (barrier - x) * (barrier - x1) / h
            if arg < _ARG_CUT:
                u3 = _uniform(key, ctr + np.uint64(2))
                if u3 < np.exp(-arg):
                    hit = True
                    th = t + 0.5 * h
        ctr += np.uint64(3)
        if hit:
            if n < max_jumps:
                times_row[n] = th
            n += 1
            x = reset
            t = th
        else:
            x = x1
            t = t + h
    return x, n


@njit(cache=True)
def _sample_initial(key, cdf, xs):
    u = _uniform(key, np.uint64(0))
    return np.interp(u, cdf, xs)


@njit(cache=True, parallel=True)
def _ensemble_numba(seed, n_paths, x0, cdf, xs, t_end, dt, barrier, reset, max_jumps, x_end, n_jumps, jt):
    use_density = cdf.shape[0] > 0
    for i in prange(n_paths):
        key = _path_key(seed, i)
        start = _sample_initial(key, cdf, xs) if use_density else x0
        xe, n = _one_path(key, start, t_end, dt, barrier, reset, jt[i], max_jumps)
        x_end[i] = xe
        n_jumps[i] = n


def _ensemble_numpy(seed, n_paths, x0, cdf, xs, t_end, dt, barrier, reset, max_jumps, x_end, n_jumps, jt):
    keys = _path_keys_np(seed, n_paths)
    if cdf.shape[0] > 0:
        x = np.interp(_uniform_np(keys, np.uint64(0)), cdf, xs)
    else:
        x = np.full(n_paths, float(x0))
    t = np.zeros(n_paths)
    n = np.zeros(n_paths, dtype=np.int64)
    ctr = np.ones(n_paths, dtype=np.uint64)
    spare = np.zeros(n_paths)
    have_spare = np.zeros(n_paths, dtype=bool)
    e_full = np.exp(-dt)
    sd_full = np.sqrt(-np.expm1(-2.0 * dt))
    tol = 1e-12 * max(t_end, 1.0)
    idx = np.arange(n_paths)
    while True:
        active = t_end - t[idx] > tol
        idx = idx[active]
        if idx.size == 0:
            break
        ti, xi, ci, ki = t[idx], x[idx], ctr[idx], keys[idx]
        h = np.minimum(t_end - ti, dt)
        full = h == dt
        e = np.where(full, e_full, np.exp(-h))
        sd = np.where(full, sd_full, np.sqrt(-np.expm1(-2.0 * h)))
        use_spare = have_spare[idx]
        fresh = ~use_spare
        z = spare[idx]
        if fresh.any():
            r = np.sqrt(-2.0 * np.log(_uniform_np(ki[fresh], ci[fresh])))
            ang = TWO_PI * _uniform_np(ki[fresh], ci[fresh] + np.uint64(1))
            z[fresh] = r * np.cos(ang)
            spare[idx[fresh]] = r * np.sin(ang)
        have_spare[idx] = fresh
        x1 = e * xi + sd * z
        over = x1 >= barrier
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            arg = (barrier - xi) * (barrier - x1) / h
        cand = ~over & (arg < _ARG_CUT)
        bridge = np.zeros(idx.size, dtype=bool)
        if cand.any():
            u3 = _uniform_np(ki[cand], ci[cand] + np.uint64(2))
            bridge[cand] = u3 < np.exp(-arg[cand])
        th = np.where(over, ti + h * (barrier - xi) / np.where(over, x1 - xi, 1.0), ti + 0.5 * h)
        hit = over | bridge
        ctr[idx] = ci + np.uint64(3)
        hi = idx[hit]
        if hi.size:
            slot = n[hi]
            ok = slot < max_jumps
            jt[hi[ok], slot[ok]] = th[hit][ok]
            n[hi] += 1
        x[idx] = np.where(hit, reset, x1)
        t[idx] = np.where(hit, th, ti + h)
    x_end[:] = x
    n_jumps[:] = n


def _density_table(cfg):
    if cfg.initial_density is None:
        return np.zeros(0), np.zeros(0)
    xs, fs = (np.asarray(a, dtype=float) for a in cfg.initial_density)
    cdf = np.zeros_like(xs)
    cdf[1:] = np.cumsum(0.5 * (fs[1:] + fs[:-1]) * np.diff(xs))
    cdf /= cdf[-1]
    return cdf, xs


def simulate_ensemble(cfg):
    """Simulate ``cfg.n_paths`` independent paths; deterministic in (seed, config)."""
    n = cfg.n_paths
    x_end = np.empty(n)
    n_jumps = np.empty(n, dtype=np.int64)
    width = cfg.max_jumps if cfg.record_jump_times else 0
    try:
        jt = np.full((n, max(width, 1)), np.nan)
    except MemoryError as exc:
        raise SimulationError("could not allocate ensemble storage", completed=0) from exc
    cdf, xs = _density_table(cfg)
    run = _ensemble_numba if _backend.USE_NUMBA else _ensemble_numpy
    seed = np.uint64(cfg.seed % (1 << 64))
    run(seed, n, float(cfg.y0), cdf, xs, float(cfg.t_end), float(cfg.substep), float(cfg.barrier),
        float(cfg.reset), int(width), x_end, n_jumps, jt)
    if not np.all(np.isfinite(x_end)):
        raise SimulationError("non-finite state in simulated paths", completed=int(np.isfinite(x_end).sum()))
    if cfg.record_jump_times and n_jumps.max(initial=0) > cfg.max_jumps:
        raise SimulationError(f"a path exceeded max_jumps={cfg.max_jumps}; raise the cap", completed=n)
    if not cfg.record_jump_times:
        jt = np.full((n, 0), np.nan)
    return PathEnsemble(x_end, n_jumps, jt, cfg, {"backend": _backend.backend_name()})


def simulate_path(stream, cfg):
    """Simulate the path with index ``stream`` of the ensemble described by ``cfg``."""
    if _backend.USE_NUMBA:
        jt = np.full((1, max(cfg.max_jumps, 1)), np.nan)
        cdf, xs = _density_table(cfg)
        # numba boxes uint64 results as Python ints; keep the key unsigned
        key = np.uint64(_path_key(np.uint64(cfg.seed % (1 << 64)), np.uint64(stream)))
        start = _sample_initial(key, cdf, xs) if cdf.shape[0] else float(cfg.y0)
        xe, nj = _one_path(key, start, float(cfg.t_end), float(cfg.substep), float(cfg.barrier),
                           float(cfg.reset), jt[0], int(cfg.max_jumps))
        return PathSample(float(xe), int(nj), jt[0, : min(nj, cfg.max_jumps)].tolist())
    single = PathConfig(**{**cfg.__dict__, "n_paths": int(stream) + 1})
    return simulate_ensemble(single)[int(stream)]


# -- estimators -------------------------------------------------------------------


def empirical_subcdf(ens, n, x):
    """P(X_T <= x, n_T = n) with its binomial standard error."""
    if n < 0:
        raise ValueError("n must be >= 0")
    hit = (ens.n_jumps == n) & (ens.x_end <= x)
    p = hit.mean()
    return float(p), float(np.sqrt(p * (1.0 - p) / len(ens)))


@dataclass
class Histogram:
    edges: np.ndarray
    density: np.ndarray
    stderr: np.ndarray
    count: int
    empty: bool = False

    @property
    def centers(self):
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def width(self):
        return np.diff(self.edges)

    def integral(self):
        return float((self.density * self.width).sum())


def empirical_hitting_histogram(ens, k, bins):
    """Histogram of T_k over paths with at least k jumps, normalised by the
    total path count so it estimates the sub-probability density of T_k on
    [0, t_end]."""
    if not ens.config.record_jump_times:
        raise ValueError("ensemble was simulated without jump-time recording")
    if k < 1:
        raise ValueError("k must be >= 1")
    edges = bins.t if isinstance(bins, TimeGrid) else np.asarray(bins, dtype=float)
    n = len(ens)
    times = ens.kth_jump_times(k)
    width = np.diff(edges)
    if times.size == 0:
        log.warning("no path reached jump %d", k)
        z = np.zeros(len(edges) - 1)
        return Histogram(edges, z, z.copy(), 0, empty=True)
    counts, _ = np.histogram(times, bins=edges)
    p = counts / n
    return Histogram(edges, p / width, np.sqrt(p * (1.0 - p) / n) / width, int(times.size))


def ks_distance(ens, cdf, mask=None):
    """Two-sided KS statistic between the law of x_end (optionally restricted to
    ``mask``) and the CDF callable ``cdf``."""
    x = np.sort(ens.x_end if mask is None else ens.x_end[mask])
    n = x.size
    if n == 0:
        raise ValueError("no samples")
    F = np.asarray(cdf(x), dtype=float)
    if np.any(np.diff(F) < -1e-12):
        raise ValueError("cdf is not monotone on the sample points")
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


def grid_cdf(xs, cumulative):
    """Callable CDF from tabulated nodes (linear interpolation, clamped)."""
    xs = np.asarray(xs, dtype=float)
    c = np.maximum.accumulate(np.asarray(cumulative, dtype=float))

    def cdf(x):
        return np.interp(x, xs, c, left=0.0, right=c[-1])

    return cdf


def mean_jumps(ens):
    n = ens.n_jumps.astype(float)
    return float(n.mean()), float(n.std(ddof=1) / np.sqrt(n.size)) if n.size > 1 else 0.0


# -- binary dump ------------------------------------------------------------------


def dump_ensemble(ens, path):
    """Little-endian dump: magic, 32-byte config hash, path count, then per path
    x_end f8, n_jumps u4, jump_times f8[n_jumps]."""
    with open(path, "wb") as fh:
        fh.write(DUMP_MAGIC)
        fh.write(ens.config.digest())
        fh.write(struct.pack("<Q", len(ens)))
        rec = ens.jump_times.shape[1]
        for i in range(len(ens)):
            n = int(ens.n_jumps[i])
            fh.write(struct.pack("<dI", float(ens.x_end[i]), n))
            fh.write(np.ascontiguousarray(ens.jump_times[i, : min(n, rec)], dtype="<f8").tobytes())


def load_ensemble(path, config):
    with open(path, "rb") as fh:
        if fh.read(8) != DUMP_MAGIC:
            raise ValueError("not an ensemble dump")
        digest = fh.read(32)
        if digest != config.digest():
            raise ValueError("dump was written for a different configuration")
        (n,) = struct.unpack("<Q", fh.read(8))
        x_end = np.empty(n)
        n_jumps = np.empty(n, dtype=np.int64)
        jt = np.full((n, max(config.max_jumps, 1)), np.nan)
        for i in range(n):
            x_end[i], n_jumps[i] = struct.unpack("<dI", fh.read(12))
            k = int(n_jumps[i])
            if k:
                jt[i, :k] = np.frombuffer(fh.read(8 * k), dtype="<f8")
    return PathEnsemble(x_end, n_jumps, jt, config)
