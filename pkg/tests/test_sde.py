"""Integrator checks: trivial contracts, coordinate changes, couplings, and
Monte Carlo moments against independently computed oracles.

The h-transform oracle used below: the repelled radial process is the Doob
ln-transform of BES(2) killed at 1, so E[f(R_t)] from r0 equals
E_bes2[f(X_t) (ln X_t / ln r0) 1{tau_1 > t}].  Frozen values at (r0=2, t=1),
computed by a 2e5-path killed-BES2 simulation with bridge-crossing
absorption at dt=2.5e-4:  P(tau_1 > 1) = 0.7695 +- 0.0009, hence
E[1/ln R(1)] = 1.1102 +- 0.0014 and E[R(1)^2] = 8.556 +- 0.02.
"""

import math

import numpy as np
import pytest

from moustache.errors import DriftDomainError
from moustache.sde import (
    CoupledTriple,
    IntegratorConfig,
    PathKind,
    TrajectoryGrid,
    coupled_triple,
    count_exit_hits,
    derive_stream,
    first_hitting,
    integrate_bessel,
    integrate_r,
    integrate_x,
    sample_bessel_endpoint,
    sample_r_endpoint,
    sample_x_endpoint,
    to_geometric,
    to_natural,
)

CFG = IntegratorConfig()


class TestTrajectoryGrid:
    def test_validation(self):
        with pytest.raises(ValueError):
            TrajectoryGrid(np.array([0.0, 0.0]), np.array([2.0, 2.0]), PathKind.R)
        with pytest.raises(ValueError):
            TrajectoryGrid(np.array([0.0, 1.0]), np.array([2.0, 0.5]), PathKind.R)
        with pytest.raises(ValueError):
            TrajectoryGrid(np.array([0.0]), np.array([1.0]), PathKind.BESSEL)

    def test_step_stats(self):
        g = TrajectoryGrid(np.array([0.0, 1.0, 3.0]), np.array([2.0, 2.5, 2.2]),
                           PathKind.R)
        assert g.step_stats.min == 1.0
        assert g.step_stats.max == 2.0
        assert g.step_stats.mean == 1.5

    def test_csv_roundtrip(self, tmp_path):
        g = integrate_r(3.0, 0.25, CFG, derive_stream(5, 0))
        f = tmp_path / "traj.csv"
        g.to_csv(f)
        data = np.loadtxt(f, delimiter=",", skiprows=1)
        assert np.array_equal(data[:, 0], g.times)
        assert np.array_equal(data[:, 1], g.values)


class TestIntegrateR:
    def test_zero_horizon(self):
        g = integrate_r(5.0, 0.0, CFG)
        assert len(g) == 1
        assert g.times[0] == 0.0 and g.values[0] == 5.0

    def test_stays_above_one(self):
        g = integrate_r(1.0, 2.0, CFG, derive_stream(1, 0))
        assert np.all(g.values[1:] > 1.0)
        assert g.values[0] == 1.0 + CFG.boundary_guard

    def test_rejects_bad_start(self):
        with pytest.raises(ValueError):
            integrate_r(0.5, 1.0, CFG)

    def test_martingale_oracle(self):
        # correct finite-t value via the h-transform (see module docstring);
        # the paper-style constancy claim is checked in test_acceptance
        n = 30_000
        vals = sample_r_endpoint(2.0, 1.0, n, CFG, derive_stream(2, 0))
        est = np.mean(1.0 / np.log(vals))
        se = np.std(1.0 / np.log(vals)) / math.sqrt(n)
        assert abs(est - 1.1102) < 4 * se + 0.006

    def test_second_moment_oracle(self):
        n = 30_000
        vals = sample_r_endpoint(2.0, 1.0, n, CFG, derive_stream(3, 0))
        est = np.mean(vals ** 2)
        se = np.std(vals ** 2) / math.sqrt(n)
        assert abs(est - 8.556) < 4 * se + 0.08


class TestIntegrateBessel:
    def test_zero_horizon(self):
        g = integrate_bessel(2.5, 0.7, 0.0, CFG)
        assert len(g) == 1 and g.values[0] == 0.7

    def test_dimension_guard(self):
        with pytest.raises(ValueError):
            integrate_bessel(1.5, 1.0, 1.0, CFG)

    def test_moment_bes2(self):
        # Ito oracle: E X(t)^2 = x0^2 + d t
        n = 20_000
        v = sample_bessel_endpoint(2.0, 1.0, 1.0, n, CFG, derive_stream(4, 0))
        se = np.std(v ** 2) / math.sqrt(n)
        assert abs(np.mean(v ** 2) - 3.0) < 3 * se

    def test_moment_bes3_from_origin(self):
        n = 20_000
        v = sample_bessel_endpoint(3.0, 0.0, 1.0, n, CFG, derive_stream(5, 0))
        se = np.std(v ** 2) / math.sqrt(n)
        assert abs(np.mean(v ** 2) - 3.0) < 3 * se


class TestIntegrateX:
    def test_zero_horizon(self):
        g = integrate_x(1.0, 0.0, 0.0, CFG)
        assert len(g) == 1 and g.values[0] == 1.0

    def test_domain_guard(self):
        with pytest.raises(DriftDomainError):
            integrate_x(0.5, 1.0, 0.0, CFG)   # ln(0.5) + 0 < 0

    def test_long_run_second_moment(self):
        # int x^2 dν = 2 for the Rayleigh invariant law (quadrature oracle
        # in test_laws); time average over the second half of a long path
        g = integrate_x(1.5, 1000.0, 0.0, IntegratorConfig(seed=6),
                        derive_stream(6, 0))
        half = g.times > 500.0
        num = np.trapezoid(g.values[half] ** 2, g.times[half])
        den = g.times[-1] - g.times[half][0]
        assert 1.8 <= num / den <= 2.2

    def test_resume_uses_absolute_time(self):
        # drift at s_origin=100 is closer to homogeneous than at s_origin=0;
        # check the origin actually matters by comparing one deterministic
        # drift evaluation through a single tiny step
        cfg = IntegratorConfig(dt_geometric=1e-6)
        a = integrate_x(0.8, 1e-6, 100.0, cfg, derive_stream(7, 0))
        b = integrate_x(0.8, 1e-6, 1.0, cfg, derive_stream(7, 0))
        # same noise, different drift term 1/(x(ln x + s/2))
        assert a.values[-1] != b.values[-1]


class TestCoordinateChanges:
    def test_constant_x_maps_to_sqrt_profile(self):
        s = np.linspace(0.0, 2.0, 9)
        xp = TrajectoryGrid(s, np.full(9, 3.0), PathKind.X)
        rp = to_natural(xp)
        u = np.expm1(s)
        assert np.allclose(rp.times, u)
        assert np.allclose(rp.values, 3.0 * np.sqrt(1.0 + u), rtol=1e-14)

    def test_fixed_point_and_endpoints(self):
        rp = integrate_r(2.0, 1.0, CFG, derive_stream(8, 0))
        xp = to_geometric(rp)
        assert xp.values[0] == rp.values[0]
        assert xp.times[-1] == pytest.approx(math.log(1.0 + rp.times[-1]), rel=1e-15)

    def test_natural_time_e3_minus_1(self):
        rp = TrajectoryGrid(np.array([0.0, math.e ** 3 - 1.0]),
                            np.array([2.0, 2.0]), PathKind.R)
        xp = to_geometric(rp)
        assert xp.times[-1] == pytest.approx(3.0, rel=1e-15)

    def test_round_trip_exact(self):
        rp = integrate_r(2.0, 1.0, CFG, derive_stream(9, 0))
        back = to_natural(to_geometric(rp))
        assert np.max(np.abs(back.values - rp.values) / rp.values) < 1e-12
        assert np.max(np.abs(back.times - rp.times) / (1.0 + rp.times)) < 1e-12

    def test_kind_checks(self):
        rp = integrate_r(2.0, 0.1, CFG, derive_stream(10, 0))
        with pytest.raises(ValueError):
            to_natural(rp)


class TestCoupledTriple:
    def test_zero_horizon(self):
        trip = coupled_triple(1.0, 0.0, CFG)
        assert len(trip.r) == 1
        assert trip.bes2.values[0] == trip.bes2d.values[0] == 1.0

    def test_pathwise_domination_many_seeds(self):
        # bes2 <= r must hold exactly at every grid point, no tolerance
        for seed in range(20):
            trip = coupled_triple(0.8, 5.0, CFG, derive_stream(seed, 1))
            assert np.all(trip.bes2.values <= trip.r.values)
            trip.validate()

    def test_shared_grid(self):
        trip = coupled_triple(2.0, 3.0, CFG, derive_stream(11, 0))
        assert np.array_equal(trip.r.times, trip.bes2.times)
        assert np.array_equal(trip.r.times, trip.bes2d.times)

    def test_increment_domination_after_switch(self):
        # above e^{2/delta} radial increments are dominated by the
        # BES(2+delta) increments (discretized form, 1e-9 per-step slack)
        hits = 0
        for seed in range(12):
            trip = coupled_triple(2.0, 8.0, CFG, derive_stream(seed, 2))
            if trip.switch_time is None or trip.switch_time >= trip.r.times[-1]:
                continue
            i0 = int(np.searchsorted(trip.r.times, trip.switch_time))
            dr = trip.r.values[i0:] - trip.r.values[i0]
            db = trip.bes2d.values[i0:] - trip.bes2d.values[i0]
            tol = 1e-9 * np.arange(dr.size)
            assert np.all(dr <= db + tol)
            hits += 1
        assert hits >= 3  # the level e must be left behind in several runs

    def test_rejects_bad_delta(self):
        with pytest.raises(ValueError):
            coupled_triple(0.0, 1.0, CFG)


class TestFirstHitting:
    def test_constant_at_level(self):
        p = TrajectoryGrid(np.array([0.0, 1.0]), np.array([5.0, 5.0]), PathKind.X)
        assert first_hitting(p, 5.0) == 0.0

    def test_interpolated(self):
        p = TrajectoryGrid(np.array([0.0, 1.0]), np.array([1.0, 3.0]), PathKind.X)
        assert first_hitting(p, 2.0) == pytest.approx(0.5, rel=1e-15)

    def test_not_hit(self):
        p = TrajectoryGrid(np.array([0.0, 1.0]), np.array([1.0, 3.0]), PathKind.X)
        assert first_hitting(p, 4.0) is None

    def test_downcrossing(self):
        p = TrajectoryGrid(np.array([0.0, 2.0]), np.array([4.0, 2.0]), PathKind.X)
        assert first_hitting(p, 3.0) == pytest.approx(1.0, rel=1e-15)


class TestExitEnsemble:
    def test_matches_scale_function(self):
        n = 4000
        hits = count_exit_hits(2.0, 4.0, 16.0, n, CFG, derive_stream(12, 0))
        p_hat = hits / n
        se = math.sqrt((2.0 / 3.0) * (1.0 / 3.0) / n)
        assert abs(p_hat - 2.0 / 3.0) < 3 * se

    def test_near_lower_barrier(self):
        n = 2000
        hits = count_exit_hits(2.0, 2.002, 16.0, n, CFG, derive_stream(13, 0))
        assert hits / n < 0.02

    def test_step_consistency(self):
        # order-1 weak consistency: quartering dt moves the estimate by
        # less than the Monte Carlo CI width
        n = 2000
        h1 = count_exit_hits(2.0, 4.0, 16.0, n, IntegratorConfig(dt_natural=4e-3),
                             derive_stream(14, 0))
        h2 = count_exit_hits(2.0, 4.0, 16.0, n, IntegratorConfig(dt_natural=1e-3),
                             derive_stream(14, 1))
        ci_width = 2 * 1.96 * math.sqrt((2.0 / 3.0) * (1.0 / 3.0) / n)
        assert abs(h1 - h2) / n < ci_width


class TestDeterminism:
    def test_stream_reproducibility(self):
        a = sample_r_endpoint(2.0, 0.5, 100, CFG, derive_stream(42, 3))
        b = sample_r_endpoint(2.0, 0.5, 100, CFG, derive_stream(42, 3))
        assert np.array_equal(a, b)

    def test_streams_differ_across_tasks(self):
        a = sample_r_endpoint(2.0, 0.5, 100, CFG, derive_stream(42, 0))
        b = sample_r_endpoint(2.0, 0.5, 100, CFG, derive_stream(42, 1))
        assert not np.array_equal(a, b)
