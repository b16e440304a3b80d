"""Grids, coordinate transforms and closed-form kernels.

The model is fixed to the normalised leaky integrate-and-fire neuron

    dX = -X dt + sqrt(2) dB,   reset 0, threshold 1,

so the free transition law is Gaussian and the absorbing problem maps onto a
heat equation with the moving boundary ``b(s) = sqrt(2 s + 1)``.
"""

from dataclasses import dataclass, field

import numpy as np

SQRT_2PI = np.sqrt(2.0 * np.pi)
SQRT_4PI = np.sqrt(4.0 * np.pi)


class DomainError(ValueError):
    """Argument outside the domain where a kernel is defined."""


@dataclass(frozen=True)
class ModelParams:
    v_reset: float = 0.0
    v_fire: float = 1.0
    drift_slope: float = 1.0
    diffusion: float = 1.0

    def __post_init__(self):
        if not self.v_reset < self.v_fire:
            raise ValueError("v_reset must be below v_fire")
        fixed = (self.v_reset, self.v_fire, self.drift_slope, self.diffusion)
        if fixed != (0.0, 1.0, 1.0, 1.0):
            raise ValueError("model constants are fixed to V_R=0, V_F=1, drift -x, diffusion 1")


MODEL = ModelParams()


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid on [-L, 1] with nodes on x = 0 and x = 1.

    ``h`` must divide both 1 and ``L``.
    """

    L: float = 6.0
    h: float = 1.0 / 400

    def __post_init__(self):
        if self.L <= 0 or self.h <= 0:
            raise ValueError("L and h must be positive")
        m = 1.0 / self.h
        if abs(m - round(m)) > 1e-9 * m:
            raise ValueError(f"h={self.h} does not divide 1")
        r = self.L / self.h
        if abs(r - round(r)) > 1e-9 * r:
            raise ValueError(f"h={self.h} does not divide L={self.L}")
        if self.n_nodes < 16:
            raise ValueError("grid needs at least 16 nodes")

    @property
    def per_unit(self):
        return int(round(1.0 / self.h))

    @property
    def reset_index(self):
        return int(round(self.L / self.h))

    @property
    def n_nodes(self):
        return self.reset_index + self.per_unit + 1

    @property
    def x_min(self):
        return -self.L

    @property
    def x_max(self):
        return 1.0

    @property
    def x(self):
        i = np.arange(self.n_nodes) - self.reset_index
        return i / self.per_unit

    def index_of(self, x):
        return int(round((x + self.L) / self.h))


@dataclass(frozen=True)
class TimeGrid:
    t_end: float
    dt: float

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.t_end < 0:
            raise ValueError("t_end must be nonnegative")
        n = self.t_end / self.dt
        if abs(n - round(n)) * self.dt > 1e-12 * max(self.t_end, 1.0):
            raise ValueError(f"dt={self.dt} does not divide t_end={self.t_end}")

    @property
    def n_steps(self):
        return int(round(self.t_end / self.dt))

    @property
    def t(self):
        return np.linspace(0.0, self.t_end, self.n_steps + 1)

    def __len__(self):
        return self.n_steps + 1

    def index_of(self, t):
        k = int(round(t / self.dt))
        if k < 0 or k > self.n_steps or abs(k * self.dt - t) > 1e-9 * max(self.dt, abs(t)):
            raise ValueError(f"t={t} is not a node of the time grid")
        return k

    def coarsen(self, stride):
        if self.n_steps % stride:
            raise ValueError(f"stride {stride} does not divide {self.n_steps} steps")
        return TimeGrid(self.t_end, self.dt * stride)


@dataclass
class TimeSeries:
    times: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.times),):
            raise ValueError(f"series length {self.values.shape} does not match grid {len(self.times)}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("series contains non-finite values")

    @property
    def t(self):
        return self.times.t

    def integral(self, t_upper=None):
        """Trapezoid integral from 0 to ``t_upper`` (default: end of grid)."""
        k = len(self.values) - 1 if t_upper is None else self.times.index_of(t_upper)
        v = self.values[: k + 1]
        if k == 0:
            return 0.0
        return self.times.dt * (v.sum() - 0.5 * (v[0] + v[-1]))

    def cumulative(self):
        v = self.values
        out = np.zeros_like(v)
        out[1:] = np.cumsum(0.5 * (v[1:] + v[:-1])) * self.times.dt
        return out

    def at(self, t):
        return float(np.interp(t, self.t, self.values))

    def subsample(self, stride):
        return TimeSeries(self.times.coarsen(stride), self.values[::stride].copy())


@dataclass
class DensityField:
    """f(x_i, t_k) on a truncated space-time grid.

    ``values[k]`` is the profile at ``times.t[k]``. Fields started from a point
    mass carry ``warm_t0``: rows before it are placeholders (zeros) because the
    delta is never put on the grid; consumers use the exact free kernel there.
    """

    grid: Grid1D
    times: TimeGrid
    values: np.ndarray
    mass: np.ndarray = None
    right_flux: np.ndarray = None
    warm_t0: float = None
    start: float = 0.0
    reinjection: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        expected = (len(self.times), self.grid.n_nodes)
        if self.values.shape != expected:
            raise ValueError(f"field shape {self.values.shape} != {expected}")
        if self.mass is None:
            self.mass = self.grid.h * self.values.sum(axis=1)
            if self.warm_t0 is not None:
                self.mass[self.times.t < self.warm_t0 - 1e-12] = 1.0
        if self.right_flux is None:
            self.right_flux = right_flux(self.values, self.grid.h)

    @property
    def t(self):
        return self.times.t

    def snapshot(self, t):
        return self.values[self.times.index_of(t)]

    def cdf(self, t):
        """Cumulative of the (sub-)density at time ``t`` on the grid nodes."""
        f = self.snapshot(t)
        c = np.zeros_like(f)
        c[1:] = np.cumsum(0.5 * (f[1:] + f[:-1])) * self.grid.h
        return c


def right_flux(values, h):
    """-d/dx f(1-) by the second-order one-sided stencil (f(1) = 0)."""
    v = np.asarray(values)
    return (4.0 * v[..., -2] - v[..., -3] - 3.0 * v[..., -1]) / (2.0 * h)


@dataclass(frozen=True)
class MovingFrame:
    s: np.ndarray
    y: np.ndarray
    b: np.ndarray


def s_of_t(t):
    return 0.5 * np.expm1(2.0 * np.asarray(t, dtype=float))


def t_of_s(s):
    return 0.5 * np.log1p(2.0 * np.asarray(s, dtype=float))


def boundary(s):
    return np.sqrt(2.0 * np.asarray(s, dtype=float) + 1.0)


def to_moving_frame(x, t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("t must be nonnegative")
    s = s_of_t(t)
    return MovingFrame(s=s, y=np.exp(t) * np.asarray(x, dtype=float), b=boundary(s))


def from_moving_frame(y, s):
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise DomainError("s must be nonnegative")
    t = t_of_s(s)
    return np.exp(-t) * np.asarray(y, dtype=float), t


def ou_variance(t):
    return -np.expm1(-2.0 * np.asarray(t, dtype=float))


def ou_transition_density(x, t, y0=0.0):
    """Density of N(e^-t y0, 1 - e^-2t) at ``x``."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise DomainError("ou_transition_density needs t > 0")
    v = ou_variance(t)
    d = np.asarray(x, dtype=float) - np.exp(-t) * y0
    return np.exp(-0.5 * d * d / v) / np.sqrt(2.0 * np.pi * v)


def ou_density_bound(t):
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise DomainError("ou_density_bound needs t > 0")
    return 1.0 / np.sqrt(2.0 * np.pi * ou_variance(t))


def heat_kernel(y, s, xi, tau):
    ds = np.asarray(s, dtype=float) - tau
    if np.any(ds <= 0):
        raise DomainError("heat_kernel needs s > tau")
    d = np.asarray(y, dtype=float) - xi
    return np.exp(-d * d / (4.0 * ds)) / np.sqrt(4.0 * np.pi * ds)


def heat_kernel_dy(y, s, xi, tau):
    """d/dy of the heat kernel at a general point pair."""
    ds = np.asarray(s, dtype=float) - tau
    if np.any(ds <= 0):
        raise DomainError("heat_kernel_dy needs s > tau")
    d = np.asarray(y, dtype=float) - xi
    return -d / (2.0 * ds) * np.exp(-d * d / (4.0 * ds)) / np.sqrt(4.0 * np.pi * ds)


def heat_kernel_dy_boundary(s, tau):
    """d/dy heat kernel between boundary points (b(s), s) and (b(tau), tau).

    Uses (b(s) - b(tau)) / (2 (s - tau)) = 1 / (b(s) + b(tau)), which has no
    0/0 as tau -> s.
    """
    s = np.asarray(s, dtype=float)
    ds = s - tau
    if np.any(ds <= 0):
        raise DomainError("heat_kernel_dy_boundary needs s > tau")
    bsum = boundary(s) + boundary(tau)
    return -np.exp(-ds / (bsum * bsum)) / (np.sqrt(4.0 * np.pi * ds) * bsum)


def boundary_source(s):
    """J1(s) = -Gamma_y(b(s), s, 0, 0), the free flux through the moving boundary."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0
    sp = s[pos]
    b = boundary(sp)
    out[pos] = b / (2.0 * sp) * np.exp(-0.5 - 0.25 / sp) / np.sqrt(4.0 * np.pi * sp)
    return out if out.ndim else float(out)


def brownian_first_passage_density(t, level=1.0):
    """First-passage density of sqrt(2) B from 0 to ``level``.

    As t -> 0 the OU hitting density approaches exp(-1/4) times this.
    """
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    tp = t[pos]
    out[pos] = level / np.sqrt(4.0 * np.pi * tp**3) * np.exp(-level * level / (4.0 * tp))
    return out if out.ndim else float(out)
