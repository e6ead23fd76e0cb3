"""Weighted least-squares solver tests against independent oracles."""

import math

import numpy as np
import pytest

from conftest import C_LIGHT, gn_solve_arrays, make_epoch

from satweight.geodesy import DegenerateGeometryError, EcefPosition, Epoch, NavState, SatelliteChannel
from satweight.wls import RankDeficiencyError, SolverConfig, WeightVector, objective, solve


class TestWeightVector:
    def test_rejects_negative_and_short(self):
        with pytest.raises(ValueError):
            WeightVector(np.array([1.0, -0.1, 1.0, 1.0, 1.0]))
        with pytest.raises(ValueError):
            WeightVector(np.array([1.0, 1.0, 1.0, 0.0, 0.0]))  # only 3 positive

    def test_accepts_mixed_zero_weights(self):
        WeightVector(np.array([1.0, 0.0, 2.0, 3.0, 4.0]))


class TestSolverConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            SolverConfig(step_tolerance=0.0)
        with pytest.raises(ValueError):
            SolverConfig(damping_up=0.5)
        with pytest.raises(ValueError):
            SolverConfig(damping_down=1.5)


class TestSolve:
    def test_noiseless_recovery(self):
        epoch, truth = make_epoch(seed=1, n=6, noise=0.0)
        result = solve(epoch, WeightVector(np.ones(6)))
        assert result.converged
        pos_err = np.linalg.norm(
            result.state.position.as_array() - truth.position.as_array()
        )
        assert pos_err <= 1e-6
        assert abs(result.state.clock_bias - truth.clock_bias) <= 1e-14

    def test_weight_scale_invariance(self):
        # small-scale geometry: float64 residual noise at ECEF magnitudes is
        # itself ~3e-9 m, above the 1e-9 agreement being asserted
        epoch, _ = make_epoch(seed=2, n=6, noise=2.0, radius=1e3, shell=2e4, clock_bias=1e-6)
        r1 = solve(epoch, WeightVector(np.ones(6)))
        r2 = solve(epoch, WeightVector(7.3 * np.ones(6)))
        assert np.linalg.norm(
            r1.state.position.as_array() - r2.state.position.as_array()
        ) <= 1e-9
        # at full ECEF scale the argmin is still shared to the float noise floor
        epoch_big, _ = make_epoch(seed=2, n=6, noise=2.0)
        b1 = solve(epoch_big, WeightVector(np.ones(6)))
        b2 = solve(epoch_big, WeightVector(7.3 * np.ones(6)))
        assert np.linalg.norm(
            b1.state.position.as_array() - b2.state.position.as_array()
        ) <= 5e-8

    def test_zero_weight_matches_explicit_exclusion(self):
        epoch, _ = make_epoch(seed=3, n=5, noise=0.5, biases={2: 50.0})
        w = np.ones(5)
        w[2] = 0.0
        result = solve(epoch, WeightVector(w))
        # oracle: independent Gauss-Newton on the 4-satellite subproblem
        keep = [0, 1, 3, 4]
        oracle = gn_solve_arrays(
            epoch.sat_positions()[keep], epoch.pseudo_ranges()[keep]
        )
        got = result.state.as_array()
        assert np.linalg.norm(got[:3] - oracle[:3]) <= 1e-9 * max(1.0, np.linalg.norm(oracle[:3]))
        assert abs(got[3] - oracle[3]) * C_LIGHT <= 1e-6
        # the excluded satellite's residual is still reported
        assert len(result.residuals) == 5
        assert abs(result.residuals[2]) > 10.0

    def test_never_increases_objective(self):
        for seed in range(8):
            epoch, _ = make_epoch(seed=seed, n=7, noise=5.0, biases={1: 80.0})
            w = WeightVector(np.ones(7))
            cfg = SolverConfig(max_iterations=3)  # force early stop
            result = solve(epoch, w, cfg)
            start = objective(epoch, w, cfg.initial_state)
            assert objective(epoch, w, result.state) <= start

    def test_noiseless_objective_near_zero(self):
        epoch, _ = make_epoch(seed=4, n=8, noise=0.0)
        w = WeightVector(np.ones(8))
        result = solve(epoch, w)
        assert objective(epoch, w, result.state) <= 1e-12

    def test_permutation_invariance(self):
        # small scale for the same float-noise-floor reason as above
        epoch, _ = make_epoch(seed=5, n=7, noise=3.0, radius=1e3, shell=2e4, clock_bias=1e-6)
        w = np.geomspace(0.5, 8.0, 7)
        r1 = solve(epoch, WeightVector(w))
        order = [3, 0, 6, 2, 5, 1, 4]
        r2 = solve(epoch.permuted(order), WeightVector(w[order]))
        assert np.linalg.norm(
            r1.state.position.as_array() - r2.state.position.as_array()
        ) <= 1e-9
        np.testing.assert_allclose(r2.residuals, r1.residuals[order], atol=1e-9)

    def test_covariance_only_on_convergence(self):
        epoch, _ = make_epoch(seed=6, n=6, noise=1.0)
        done = solve(epoch, WeightVector(np.ones(6)))
        assert done.converged and done.covariance is not None
        cov = done.covariance
        np.testing.assert_allclose(cov, cov.T, atol=1e-20)
        assert np.all(np.linalg.eigvalsh(cov) > 0)
        stopped = solve(epoch, WeightVector(np.ones(6)), SolverConfig(max_iterations=2))
        assert not stopped.converged
        assert stopped.covariance is None

    def test_rank_deficiency_raises(self):
        # five satellites at only three distinct positions cannot fix 4 states
        epoch, _ = make_epoch(seed=7, n=5, noise=0.0)
        chans = list(epoch.channels)
        for i in (1, 3):
            src = chans[0]
            chans[i] = SatelliteChannel(
                chans[i].sat_id, src.position, src.pseudo_range, src.elevation
            )
        degenerate = Epoch(tuple(chans), epoch.truth_state)
        with pytest.raises(RankDeficiencyError):
            solve(degenerate, WeightVector(np.ones(5)))

    def test_misaligned_weights_rejected(self):
        epoch, _ = make_epoch(seed=8, n=6)
        with pytest.raises(ValueError):
            solve(epoch, WeightVector(np.ones(5)))

    def test_coincident_satellite_raises(self):
        epoch, truth = make_epoch(seed=9, n=5, noise=0.0)
        chans = list(epoch.channels)
        chans[0] = SatelliteChannel(
            "atrcv", truth.position, chans[0].pseudo_range, chans[0].elevation
        )
        bad = Epoch(tuple(chans), truth)
        start_at_truth = SolverConfig(initial_state=truth)
        with pytest.raises(DegenerateGeometryError):
            solve(bad, WeightVector(np.ones(5)), start_at_truth)


class TestObjective:
    def test_zero_at_truth_for_noiseless(self):
        epoch, truth = make_epoch(seed=10, n=6, noise=0.0)
        assert objective(epoch, WeightVector(np.ones(6)), truth) == pytest.approx(0.0, abs=1e-12)

    def test_single_three_meter_residual(self):
        epoch, truth = make_epoch(seed=11, n=5, noise=0.0, biases={0: 3.0})
        assert objective(epoch, WeightVector(np.ones(5)), truth) == pytest.approx(9.0, rel=1e-12)

    def test_matches_summation_oracle(self):
        epoch, _ = make_epoch(seed=12, n=7, noise=4.0)
        w = np.abs(np.random.default_rng(13).normal(1.0, 0.3, 7))
        state = NavState(EcefPosition(1000.0, -2000.0, 6_370_000.0), 3e-4)
        total = 0.0
        for wi, ch in zip(w, epoch.channels):
            d = math.dist(
                (state.position.x, state.position.y, state.position.z),
                (ch.position.x, ch.position.y, ch.position.z),
            )
            total += wi * (ch.pseudo_range - d - C_LIGHT * state.clock_bias) ** 2
        assert objective(epoch, WeightVector(w), state) == pytest.approx(total, rel=1e-12)


class TestBruteForceGrid:
    """2-D slice equivalence with an exhaustive 1-cm grid search.

    The noise is built as J @ [dx, dy, 0, 0] plus a component orthogonal to
    the Jacobian column space, so the full 4-state minimizer sits on the
    fixed z/clock slice (up to nonlinearity far below a centimeter) and can
    be compared cell-by-cell with the planar grid minimum.
    """

    @staticmethod
    def _grid_argmin(sats, rho, z, clock, x0, y0, half=50.0, step=0.01):
        """Exhaustive 1-cm planar search (1e8 cells), jitted to stay fast."""
        from numba import njit, prange

        @njit(parallel=True, cache=True)
        def search(sat_arr, rho_eff, zc, xc, yc, half_w, step_w):
            n_cells = int(round(2.0 * half_w / step_w)) + 1
            n_sat = sat_arr.shape[0]
            row_min = np.empty(n_cells)
            row_arg = np.empty(n_cells, np.int64)
            for i in prange(n_cells):
                x = xc - half_w + i * step_w
                best = 1e300
                arg = 0
                for j in range(n_cells):
                    y = yc - half_w + j * step_w
                    total = 0.0
                    for s in range(n_sat):
                        ddx = x - sat_arr[s, 0]
                        ddy = y - sat_arr[s, 1]
                        ddz = zc - sat_arr[s, 2]
                        res = rho_eff[s] - math.sqrt(ddx * ddx + ddy * ddy + ddz * ddz)
                        total += res * res
                    if total < best:
                        best = total
                        arg = j
                row_min[i] = best
                row_arg[i] = arg
            i_best = int(np.argmin(row_min))
            return xc - half_w + i_best * step_w, yc - half_w + row_arg[i_best] * step_w

        rho_eff = np.asarray(rho, dtype=float) - C_LIGHT * clock
        return search(np.asarray(sats, dtype=float), rho_eff, z, x0, y0, half, step)

    def test_matches_grid_on_slice(self):
        rng = np.random.default_rng(99)
        for trial in range(20):
            epoch, truth = make_epoch(seed=200 + trial, n=5, noise=0.0)
            sats = epoch.sat_positions()
            t = truth.as_array()
            d = t[:3] - sats
            r_geom = np.sqrt((d * d).sum(axis=1))
            jac = np.column_stack([d / r_geom[:, None], np.ones(5)])
            shift = np.array([rng.uniform(-30, 30), rng.uniform(-30, 30), 0.0, 0.0])
            raw = rng.normal(0.0, 3.0, 5)
            ortho = raw - jac @ np.linalg.lstsq(jac, raw, rcond=None)[0]
            rho = epoch.pseudo_ranges() + jac @ shift + ortho
            noisy = Epoch(
                tuple(
                    SatelliteChannel(c.sat_id, c.position, float(p), c.elevation)
                    for c, p in zip(epoch.channels, rho)
                ),
                truth,
            )
            result = solve(noisy, WeightVector(np.ones(5)))
            assert result.converged
            gx, gy = self._grid_argmin(
                sats, rho, t[2], t[3], t[0], t[1]
            )
            sol = result.state.position.as_array()
            assert abs(sol[0] - gx) <= 0.015
            assert abs(sol[1] - gy) <= 0.015
            assert abs(sol[2] - t[2]) <= 0.01
