"""Observation model, Jacobian, and coordinate frame tests."""

import math

import numpy as np
import pytest

from satweight.geodesy import (
    DegenerateGeometryError,
    EcefPosition,
    Epoch,
    NavState,
    SatelliteChannel,
    ecef_to_enu,
    ecef_to_geodetic,
    enu_rotation,
    geodetic_to_ecef,
    jacobian_row,
    observation_function,
)

C = 299_792_458.0


class TestObservationFunction:
    def test_pythagorean_triple_zero_clock(self):
        state = NavState(EcefPosition(0.0, 0.0, 0.0), 0.0)
        assert observation_function(state, EcefPosition(3.0, 4.0, 0.0)) == 5.0

    def test_clock_term_is_c_delta(self):
        state = NavState(EcefPosition(0.0, 0.0, 0.0), 1e-6)
        assert observation_function(state, EcefPosition(3.0, 4.0, 0.0)) == pytest.approx(
            5.0 + 299.792458, abs=1e-12
        )

    def test_matches_independent_evaluation(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            p = rng.uniform(-1e7, 1e7, 3)
            s = rng.uniform(-2.6e7, 2.6e7, 3)
            delta = rng.uniform(-1e-3, 1e-3)
            expected = math.dist(tuple(p), tuple(s)) + C * delta
            got = observation_function(
                NavState(EcefPosition(*p), delta), EcefPosition(*s)
            )
            assert got == pytest.approx(expected, rel=1e-9)

    def test_clock_delta_property(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            p, s = rng.uniform(-1e7, 1e7, 3), rng.uniform(-2.6e7, 2.6e7, 3)
            delta = rng.uniform(-1e-3, 1e-3)
            with_clock = observation_function(NavState(EcefPosition(*p), delta), EcefPosition(*s))
            without = observation_function(NavState(EcefPosition(*p), 0.0), EcefPosition(*s))
            assert with_clock - without == pytest.approx(C * delta, abs=1e-6)

    def test_coincident_positions_raise(self):
        state = NavState(EcefPosition(1.0, 2.0, 3.0), 0.0)
        with pytest.raises(DegenerateGeometryError):
            observation_function(state, EcefPosition(1.0, 2.0, 3.0))


class TestJacobianRow:
    def test_axis_aligned_los(self):
        row = jacobian_row(NavState(EcefPosition(0, 0, 0), 0.0), EcefPosition(10.0, 0.0, 0.0))
        np.testing.assert_allclose(row, [-1.0, 0.0, 0.0, C])

    def test_unit_norm_of_position_part(self):
        rng = np.random.default_rng(9)
        for _ in range(200):
            p, s = rng.uniform(-1e7, 1e7, 3), rng.uniform(-2.6e7, 2.6e7, 3)
            row = jacobian_row(NavState(EcefPosition(*p), 0.0), EcefPosition(*s))
            assert abs(np.linalg.norm(row[:3]) - 1.0) <= 1e-12

    def test_finite_difference_oracle(self):
        rng = np.random.default_rng(10)
        worst = 0.0
        for _ in range(1000):
            p = rng.uniform(-6.4e6, 6.4e6, 3)
            s = rng.uniform(-2.6e7, 2.6e7, 3)
            if np.linalg.norm(p - s) < 1e6:
                continue
            delta = rng.uniform(-1e-3, 1e-3)
            state = NavState(EcefPosition(*p), delta)
            row = jacobian_row(state, EcefPosition(*s))
            h_pos = 0.5  # [m]; range ~1e7 keeps cancellation mild
            fd = np.empty(4)
            for k in range(3):
                dp = np.zeros(3)
                dp[k] = h_pos
                fp = observation_function(NavState(EcefPosition(*(p + dp)), delta), EcefPosition(*s))
                fm = observation_function(NavState(EcefPosition(*(p - dp)), delta), EcefPosition(*s))
                fd[k] = (fp - fm) / (2 * h_pos)
            h_clk = 1e-9
            fp = observation_function(NavState(EcefPosition(*p), delta + h_clk), EcefPosition(*s))
            fm = observation_function(NavState(EcefPosition(*p), delta - h_clk), EcefPosition(*s))
            fd[3] = (fp - fm) / (2 * h_clk)
            # error relative to each block's natural scale: the position part
            # is a unit vector, the clock part has magnitude c
            rel = np.abs(fd - row) / np.array([1.0, 1.0, 1.0, C])
            worst = max(worst, float(rel.max()))
        assert worst <= 1e-6

    def test_zero_range_raises(self):
        with pytest.raises(DegenerateGeometryError):
            jacobian_row(NavState(EcefPosition(5.0, 5.0, 5.0), 0.0), EcefPosition(5.0, 5.0, 5.0))


class TestEnu:
    def test_origin_maps_to_zero(self):
        origin = EcefPosition(*geodetic_to_ecef(0.7, 0.3, 100.0))
        np.testing.assert_allclose(ecef_to_enu(origin, origin), [0.0, 0.0, 0.0], atol=1e-12)

    def test_equatorial_z_offset_is_north(self):
        origin = EcefPosition(*geodetic_to_ecef(0.0, 0.0, 0.0))
        point = EcefPosition(origin.x, origin.y, origin.z + 1.0)
        e, n, u = ecef_to_enu(point, origin)
        assert n == pytest.approx(1.0, abs=1e-9)
        assert abs(e) < 1e-9
        assert abs(u) < 1e-9

    def test_round_trip_with_independent_inverse(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            lat, lon, h = rng.uniform(-1.4, 1.4), rng.uniform(-3.1, 3.1), rng.uniform(0, 3000)
            origin = geodetic_to_ecef(lat, lon, h)
            point = origin + rng.uniform(-5e4, 5e4, 3)
            enu = ecef_to_enu(point, EcefPosition(*origin))
            # independent inverse: ENU basis columns assembled from scratch
            east = np.array([-math.sin(lon), math.cos(lon), 0.0])
            north = np.array(
                [-math.sin(lat) * math.cos(lon), -math.sin(lat) * math.sin(lon), math.cos(lat)]
            )
            up = np.array(
                [math.cos(lat) * math.cos(lon), math.cos(lat) * math.sin(lon), math.sin(lat)]
            )
            lat0, lon0, _ = ecef_to_geodetic(origin)
            east2 = np.array([-math.sin(lon0), math.cos(lon0), 0.0])
            # the frame is anchored at the origin's own geodetic coordinates
            basis = np.column_stack(
                [
                    east2,
                    np.array(
                        [
                            -math.sin(lat0) * math.cos(lon0),
                            -math.sin(lat0) * math.sin(lon0),
                            math.cos(lat0),
                        ]
                    ),
                    np.array(
                        [
                            math.cos(lat0) * math.cos(lon0),
                            math.cos(lat0) * math.sin(lon0),
                            math.sin(lat0),
                        ]
                    ),
                ]
            )
            back = origin + basis @ enu
            np.testing.assert_allclose(back, point, atol=1e-9)
            del east, north, up

    def test_isometry(self):
        rng = np.random.default_rng(12)
        origin = EcefPosition(*geodetic_to_ecef(0.9, -1.2, 50.0))
        for _ in range(100):
            p1 = origin.as_array() + rng.uniform(-1e5, 1e5, 3)
            p2 = origin.as_array() + rng.uniform(-1e5, 1e5, 3)
            d_ecef = np.linalg.norm(p1 - p2)
            d_enu = np.linalg.norm(ecef_to_enu(p1, origin) - np.asarray(ecef_to_enu(p2, origin)))
            assert d_enu == pytest.approx(d_ecef, abs=1e-9)

    def test_accepts_navstate_origin(self):
        origin = NavState(EcefPosition(*geodetic_to_ecef(0.5, 0.5, 0.0)), 1e-4)
        np.testing.assert_allclose(ecef_to_enu(origin.position, origin), [0, 0, 0], atol=1e-12)

    def test_rotation_is_orthonormal(self):
        rot = enu_rotation(0.7, -2.0)
        np.testing.assert_allclose(rot @ rot.T, np.eye(3), atol=1e-14)

    def test_geodetic_round_trip_near_poles(self):
        for lat in (1.45, 1.55, -1.5, math.pi / 2):
            p = geodetic_to_ecef(lat, 0.4, 120.0)
            lat2, lon2, h2 = ecef_to_geodetic(p)
            assert lat2 == pytest.approx(lat, abs=1e-12)
            assert h2 == pytest.approx(120.0, abs=1e-6)


class TestDomainTypes:
    def test_non_finite_position_rejected(self):
        with pytest.raises(ValueError):
            EcefPosition(float("nan"), 0.0, 0.0)
        with pytest.raises(ValueError):
            NavState(EcefPosition(0, 0, 0), float("inf"))

    def test_channel_invariants(self):
        pos = EcefPosition(1e7, 0, 0)
        with pytest.raises(ValueError):
            SatelliteChannel("a", pos, pseudo_range=-1.0)
        with pytest.raises(ValueError):
            SatelliteChannel("a", pos, pseudo_range=1.0, elevation=2.0)
        with pytest.raises(ValueError):
            SatelliteChannel("a", pos, pseudo_range=1.0, cn0=-3.0)

    def test_epoch_needs_five_unique_satellites(self):
        pos = EcefPosition(1e7, 0, 0)
        chans = [SatelliteChannel(f"s{i}", pos, 1.0) for i in range(4)]
        with pytest.raises(ValueError):
            Epoch(tuple(chans))
        dup = [SatelliteChannel("same", pos, 1.0) for _ in range(5)]
        with pytest.raises(ValueError):
            Epoch(tuple(dup))
