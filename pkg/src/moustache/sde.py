"""Euler integrators for the radial diffusion, its geometric-time transform,
and Bessel comparison processes.

Natural time is the diffusion's own clock; geometric time is
``s = ln(1 + t)``, under which the rescaled process ``X(s) = e^{-s/2} R(e^s - 1)``
is asymptotically stationary.  Reaching radial level L costs natural time of
order L^2 but geometric time of order only 4 ln L, which is what makes the
very large times in this package affordable.

All integrators are pure functions of (arguments, config, generator): no
shared mutable state, safe to run concurrently.  Deterministic parallel
streams come from :func:`derive_stream`, which maps (seed, task_index) to an
independent generator; results are then reproducible for a fixed seed no
matter how tasks are scheduled.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from moustache import _kernels as K
from moustache.errors import (
    BlowupError,
    ConfigError,
    DriftDomainError,
    StepLimitError,
)

__all__ = [
    "PathKind",
    "StepStats",
    "TrajectoryGrid",
    "IntegratorConfig",
    "CoupledTriple",
    "derive_stream",
    "integrate_r",
    "integrate_x",
    "integrate_bessel",
    "to_geometric",
    "to_natural",
    "coupled_triple",
    "first_hitting",
    "sample_r_endpoint",
    "sample_bessel_endpoint",
    "sample_x_endpoint",
    "count_exit_hits",
]


class PathKind(enum.Enum):
    R = "R"
    X = "X"
    BESSEL = "BESSEL"


def _raise_status(status: int) -> None:
    if status == K.OK:
        return
    if status == K.HALVING_EXHAUSTED:
        raise StepLimitError(
            "step halving exhausted near the boundary; decrease dt or "
            "increase max_halvings")
    if status == K.NONFINITE:
        raise BlowupError("trajectory produced a non-finite value")
    if status == K.DRIFT_DOMAIN:
        raise DriftDomainError(
            "geometric-time drift denominator underflow (represented radial "
            "path reached 1); integrate in natural time instead")
    raise RuntimeError(f"unexpected integrator status {status}")


@dataclass(frozen=True)
class StepStats:
    """Smallest, largest and mean step actually taken along a grid."""

    min: float
    max: float
    mean: float

    @classmethod
    def from_times(cls, times: np.ndarray) -> Optional["StepStats"]:
        if len(times) < 2:
            return None
        d = np.diff(times)
        return cls(float(d.min()), float(d.max()), float(d.mean()))


@dataclass
class TrajectoryGrid:
    """A discretized sample path: strictly increasing times plus values.

    ``kind`` distinguishes radial paths (values above 1), geometric-time
    paths (positive values, times are absolute geometric times) and Bessel
    paths of dimension ``bessel_dim`` (nonnegative values).
    """

    times: np.ndarray
    values: np.ndarray
    kind: PathKind
    bessel_dim: Optional[float] = None
    step_stats: Optional[StepStats] = field(default=None)

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.step_stats is None:
            self.step_stats = StepStats.from_times(self.times)
        self.validate()

    def validate(self) -> None:
        if self.times.ndim != 1 or self.values.ndim != 1:
            raise ValueError("times and values must be one-dimensional")
        if len(self.times) != len(self.values) or len(self.times) < 1:
            raise ValueError("times and values must have equal length >= 1")
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")
        if not (np.all(np.isfinite(self.times)) and np.all(np.isfinite(self.values))):
            raise ValueError("times and values must be finite")
        if self.kind is PathKind.R:
            v, t = self.values, self.times
            if np.any(v[t > 0] <= 1.0) or v[0] < 1.0:
                raise ValueError("radial path must stay above 1 for t > 0")
        elif self.kind is PathKind.X:
            if np.any(self.values <= 0.0):
                raise ValueError("geometric-time path must stay positive")
        elif self.kind is PathKind.BESSEL:
            if self.bessel_dim is None or self.bessel_dim < 2.0:
                raise ValueError("Bessel path needs dimension >= 2")
            if np.any(self.values < 0.0):
                raise ValueError("Bessel path must be nonnegative")

    def __len__(self) -> int:
        return len(self.times)

    def to_csv(self, path) -> None:
        """Write `time,value` rows at full double precision."""
        with open(path, "w") as fh:
            fh.write("time,value\n")
            for t, v in zip(self.times, self.values):
                fh.write(f"{t:.17g},{v:.17g}\n")


@dataclass(frozen=True)
class IntegratorConfig:
    """Numerical knobs for the Euler integrators.

    dt_natural / dt_geometric  base steps in the two clocks.
    boundary_guard  minimum admissible distance above the boundary before a
                    proposed step is rejected and halved; also the size of
                    the deterministic entrance displacement used when a path
                    starts exactly on the boundary.
    max_halvings    cap on step subdivision per base step.
    seed            default 64-bit seed for generators derived by rng().
    """

    dt_natural: float = 1e-3
    dt_geometric: float = 1e-3
    boundary_guard: float = 1e-4
    max_halvings: int = 90
    seed: int = 0

    def __post_init__(self) -> None:
        if not (self.dt_natural > 0 and self.dt_geometric > 0):
            raise ConfigError("steps must be > 0")
        if not self.boundary_guard > 0:
            raise ConfigError("boundary_guard must be > 0")
        if self.max_halvings < 1:
            raise ConfigError("max_halvings must be >= 1")

    def rng(self, task_index: int = 0) -> np.random.Generator:
        return derive_stream(self.seed, task_index)


def derive_stream(seed: int, task_index: int = 0) -> np.random.Generator:
    """Independent generator for (seed, task_index); the parallel contract.

    Streams for distinct task indices are statistically independent and
    reproducible, so a task-per-chunk decomposition gives results that do
    not depend on how many workers execute the chunks.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(task_index,)))


@dataclass
class CoupledTriple:
    """Shared-noise radial and Bessel paths on one grid.

    bes2 is dominated by r at every grid point; switch_time is the last grid
    time at which the radial path was at or below e^{2/delta} (None when the
    level was never visited within the horizon).
    """

    bes2: TrajectoryGrid
    r: TrajectoryGrid
    bes2d: TrajectoryGrid
    delta: float
    switch_time: Optional[float]

    def validate(self) -> None:
        if not (len(self.bes2) == len(self.r) == len(self.bes2d)):
            raise ValueError("coupled paths must share one grid")
        if not (np.array_equal(self.bes2.times, self.r.times)
                and np.array_equal(self.r.times, self.bes2d.times)):
            raise ValueError("coupled paths must share one grid")
        if np.any(self.bes2.values > self.r.values):
            raise ValueError("pathwise domination bes2 <= r violated")


def _rng_or_default(cfg: IntegratorConfig, rng) -> np.random.Generator:
    return rng if rng is not None else cfg.rng()


def integrate_r(r0: float, horizon: float, cfg: IntegratorConfig,
                rng: Optional[np.random.Generator] = None) -> TrajectoryGrid:
    """Euler path of the radial diffusion dR = (1/(R ln R) + 1/(2R)) dt + dB.

    r0 must be >= 1.  A start exactly at 1 (the entrance boundary, where the
    drift is singular) is displaced deterministically to 1 + boundary_guard
    before stepping; this biases hitting times by O(boundary_guard).
    """
    if not r0 >= 1.0:
        raise ValueError("r0 must be >= 1")
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    rng = _rng_or_default(cfg, rng)
    if horizon == 0:
        return TrajectoryGrid(np.array([0.0]), np.array([r0]), PathKind.R)
    x0 = max(r0, 1.0 + cfg.boundary_guard)
    ts, xs, n, st = K._natural_path(x0, horizon, cfg.dt_natural, 1.0, -1.0,
                                    cfg.boundary_guard, cfg.max_halvings, rng)
    _raise_status(st)
    return TrajectoryGrid(ts[:n].copy(), xs[:n].copy(), PathKind.R)


def integrate_bessel(d: float, x0: float, horizon: float, cfg: IntegratorConfig,
                     rng: Optional[np.random.Generator] = None) -> TrajectoryGrid:
    """Euler path of the d-dimensional Bessel SDE dX = ((d-1)/2X) dt + dB.

    Requires d >= 2 (no boundary attainment); a start at 0 is displaced to
    the boundary guard, mirroring the radial entrance rule.
    """
    if d < 2.0:
        raise ValueError("Bessel dimension must be >= 2")
    if x0 < 0.0:
        raise ValueError("x0 must be >= 0")
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    rng = _rng_or_default(cfg, rng)
    if horizon == 0:
        return TrajectoryGrid(np.array([0.0]), np.array([x0]), PathKind.BESSEL,
                              bessel_dim=d)
    start = max(x0, cfg.boundary_guard)
    ts, xs, n, st = K._natural_path(start, horizon, cfg.dt_natural, 0.0, d,
                                    cfg.boundary_guard, cfg.max_halvings, rng)
    _raise_status(st)
    return TrajectoryGrid(ts[:n].copy(), xs[:n].copy(), PathKind.BESSEL,
                          bessel_dim=d)


def integrate_x(x0: float, s_horizon: float, s_origin: float,
                cfg: IntegratorConfig,
                rng: Optional[np.random.Generator] = None) -> TrajectoryGrid:
    """Euler path of the geometric-time SDE on [s_origin, s_origin + s_horizon].

    The drift carries absolute geometric time through its nonhomogeneous
    term 1/(X (ln X + s/2)), so integration can resume mid-path.  The
    denominator ln(x0) + s_origin/2 is the log of the represented radial
    value; it must be positive.
    """
    if x0 <= 0.0:
        raise ValueError("x0 must be > 0")
    if s_origin < 0.0:
        raise ValueError("s_origin must be >= 0")
    if s_horizon < 0:
        raise ValueError("s_horizon must be >= 0")
    rng = _rng_or_default(cfg, rng)
    if s_horizon == 0:
        return TrajectoryGrid(np.array([s_origin]), np.array([x0]), PathKind.X)
    if math.log(x0) + 0.5 * s_origin <= 1e-12:
        raise DriftDomainError(
            "ln(x0) + s_origin/2 must be positive (radial value above 1)")
    ts, xs, n, st = K._x_path(x0, s_origin, s_horizon, cfg.dt_geometric,
                              cfg.boundary_guard, cfg.max_halvings, rng)
    _raise_status(st)
    return TrajectoryGrid(ts[:n].copy(), xs[:n].copy(), PathKind.X)


def to_geometric(r_path: TrajectoryGrid) -> TrajectoryGrid:
    """Coordinate change R -> X: s = ln(1+t), X = R / sqrt(1+t)."""
    if r_path.kind is not PathKind.R:
        raise ValueError("to_geometric expects a radial path")
    if np.any(r_path.times < 0):
        raise ValueError("natural times must be >= 0")
    s = np.log1p(r_path.times)
    x = r_path.values / np.sqrt(1.0 + r_path.times)
    return TrajectoryGrid(s, x, PathKind.X, step_stats=StepStats.from_times(s))


def to_natural(x_path: TrajectoryGrid) -> TrajectoryGrid:
    """Coordinate change X -> R: t = e^s - 1, R = sqrt(1+t) X."""
    if x_path.kind is not PathKind.X:
        raise ValueError("to_natural expects a geometric-time path")
    t = np.expm1(x_path.times)
    r = np.exp(0.5 * x_path.times) * x_path.values
    return TrajectoryGrid(t, r, PathKind.R, step_stats=StepStats.from_times(t))


def coupled_triple(delta: float, horizon: float, cfg: IntegratorConfig,
                   rng: Optional[np.random.Generator] = None) -> CoupledTriple:
    """Radial, BES(2) and BES(2+delta) paths driven by one Brownian motion.

    All start at 1 and share the grid.  The joint step control keeps
    bes2 <= r exactly at every grid point; above the level e^{2/delta} the
    radial increments are in turn dominated by the BES(2+delta) increments.
    """
    if delta <= 0:
        raise ValueError("delta must be > 0")
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    rng = _rng_or_default(cfg, rng)
    if horizon == 0:
        one = np.array([1.0])
        zero = np.array([0.0])
        trip = CoupledTriple(
            bes2=TrajectoryGrid(zero, one, PathKind.BESSEL, bessel_dim=2.0),
            r=TrajectoryGrid(zero, one.copy(), PathKind.R),
            bes2d=TrajectoryGrid(zero, one.copy(), PathKind.BESSEL,
                                 bessel_dim=2.0 + delta),
            delta=delta, switch_time=0.0)
        trip.validate()
        return trip
    ts, rs, b2, b2d, n, st = K._coupled_paths(delta, horizon, cfg.dt_natural,
                                              cfg.boundary_guard,
                                              cfg.max_halvings, rng)
    _raise_status(st)
    ts, rs, b2, b2d = ts[:n].copy(), rs[:n].copy(), b2[:n].copy(), b2d[:n].copy()
    level = math.exp(2.0 / delta)
    below = np.flatnonzero(rs <= level)
    switch = float(ts[below[-1]]) if len(below) else None
    trip = CoupledTriple(
        bes2=TrajectoryGrid(ts, b2, PathKind.BESSEL, bessel_dim=2.0),
        r=TrajectoryGrid(ts, rs, PathKind.R),
        bes2d=TrajectoryGrid(ts, b2d, PathKind.BESSEL, bessel_dim=2.0 + delta),
        delta=delta, switch_time=switch)
    trip.validate()
    return trip


def first_hitting(path: TrajectoryGrid, level: float) -> Optional[float]:
    """Smallest time at which the path crosses ``level``, by linear
    interpolation between the bracketing grid points; None when never hit."""
    v = path.values
    t = path.times
    if v[0] == level:
        return float(t[0])
    sign0 = v[0] - level
    for i in range(1, len(v)):
        si = v[i] - level
        if si == 0.0:
            return float(t[i])
        if (si > 0) != (sign0 > 0):
            frac = (level - v[i - 1]) / (v[i] - v[i - 1])
            return float(t[i - 1] + frac * (t[i] - t[i - 1]))
    return None


def sample_r_endpoint(r0: float, horizon: float, n_paths: int,
                      cfg: IntegratorConfig,
                      rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Terminal values R(horizon) over n_paths independent radial paths."""
    if not r0 >= 1.0 or horizon <= 0 or n_paths < 1:
        raise ValueError("need r0 >= 1, horizon > 0, n_paths >= 1")
    rng = _rng_or_default(cfg, rng)
    out = np.empty(n_paths)
    st = K._natural_endpoints(max(r0, 1.0 + cfg.boundary_guard), horizon,
                              cfg.dt_natural, 1.0, -1.0, cfg.boundary_guard,
                              cfg.max_halvings, n_paths, rng, out)
    _raise_status(st)
    return out


def sample_bessel_endpoint(d: float, x0: float, horizon: float, n_paths: int,
                           cfg: IntegratorConfig,
                           rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Terminal values of n_paths independent BES(d) paths."""
    if d < 2.0 or x0 < 0.0 or horizon <= 0 or n_paths < 1:
        raise ValueError("need d >= 2, x0 >= 0, horizon > 0, n_paths >= 1")
    rng = _rng_or_default(cfg, rng)
    out = np.empty(n_paths)
    st = K._natural_endpoints(max(x0, cfg.boundary_guard), horizon,
                              cfg.dt_natural, 0.0, d, cfg.boundary_guard,
                              cfg.max_halvings, n_paths, rng, out)
    _raise_status(st)
    return out


def sample_x_endpoint(x0: float, s_horizon: float, n_paths: int,
                      cfg: IntegratorConfig,
                      rng: Optional[np.random.Generator] = None,
                      s_origin: float = 0.0) -> np.ndarray:
    """Terminal values X(s_origin + s_horizon) over n_paths geometric paths."""
    if x0 <= 0.0 or s_horizon <= 0 or n_paths < 1:
        raise ValueError("need x0 > 0, s_horizon > 0, n_paths >= 1")
    rng = _rng_or_default(cfg, rng)
    x0 = max(x0, 1.0 + cfg.boundary_guard) if s_origin == 0.0 and x0 <= 1.0 else x0
    if math.log(x0) + 0.5 * s_origin <= 1e-12:
        raise DriftDomainError("represented radial start must exceed 1")
    out = np.empty(n_paths)
    st = K._x_endpoints(x0, s_origin, s_horizon, cfg.dt_geometric,
                        cfg.boundary_guard, cfg.max_halvings, n_paths, rng, out)
    _raise_status(st)
    return out


def count_exit_hits(a: float, r0: float, b: float, n_paths: int,
                    cfg: IntegratorConfig,
                    rng: Optional[np.random.Generator] = None) -> int:
    """Number of radial paths from r0 absorbed at b before a.

    Interior barrier crossings between grid points are resolved with the
    exact bridge crossing probability, so the estimate carries no
    O(sqrt(dt)) absorption bias.
    """
    if not (1.0 < a < r0 < b):
        raise ValueError("need 1 < a < r0 < b")
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    rng = _rng_or_default(cfg, rng)
    hits, st = K._exit_hits(a, r0, b, cfg.dt_natural, cfg.boundary_guard,
                            cfg.max_halvings, n_paths, rng)
    _raise_status(st)
    return int(hits)
