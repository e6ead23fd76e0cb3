"""Per-epoch satellite weighting strategies for the positioning benchmark.

Reference strategies (equal weights, ground-truth weights, genie-aided
exclusion), the parametric elevation/C/N0 variance model, the learned
predictor, and an iterative residual-test fault detection and exclusion
baseline. Every strategy returns a WeightVector aligned with the epoch's
channels; the FDE additionally reports whether it could certify a solution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .geodesy import Epoch, observation_function
from .lstm import LstmModel, lstm_forward, prediction_mask
from .residual_matrix import build_residual_matrix, normalize_matrix
from .synth import weight_label
from .wls import RankDeficiencyError, SolverConfig, WeightVector, solve

# Learned weights are floored at this fraction of the largest weight: small
# enough that a floored satellite has negligible pull on the solution, large
# enough that the normal matrix stays well conditioned when the network
# de-weights most of a small epoch.
PREDICTED_WEIGHT_FLOOR_RATIO = 1e-4


@dataclass(frozen=True)
class SigmaModelCoeffs:
    """Calibrated variance coefficients of the parametric noise model."""

    sigma2_z: float = 4.0        # zenith variance term [m^2]
    sigma2_cn0: float = 2.5e3    # C/N0-scaled term [m^2 * Hz]
    sigma2_accel: float = 0.01   # acceleration-scaled term [m^2 / (m/s^2)^2]

    def __post_init__(self):
        if self.sigma2_z < 0 or self.sigma2_cn0 < 0 or self.sigma2_accel < 0:
            raise ValueError("variance coefficients must be >= 0")


@dataclass(frozen=True)
class FdeConfig:
    global_test_alpha: float = 0.01
    max_exclusions: int | None = None   # None: as many as geometry allows
    min_satellites: int = 4
    sigma: float = 3.0                  # assumed measurement sigma [m]

    def __post_init__(self):
        if not 0.0 < self.global_test_alpha < 1.0:
            raise ValueError("global_test_alpha must be in (0, 1)")
        if self.min_satellites < 4:
            raise ValueError("min_satellites must be >= 4")
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")


def equal_weights(epoch: Epoch) -> WeightVector:
    """Unit weight for every satellite."""
    return WeightVector(np.ones(epoch.n))


def ground_truth_weights(epoch: Epoch) -> WeightVector:
    """Inverse squared true residuals (floored), requiring ground truth."""
    if epoch.truth_state is None:
        raise ValueError("ground_truth_weights needs an epoch with truth_state")
    w = [
        weight_label(ch.pseudo_range - observation_function(epoch.truth_state, ch.position))
        for ch in epoch.channels
    ]
    return WeightVector(np.array(w))


def genie_aided_weights(epoch: Epoch) -> WeightVector:
    """Exclude exactly the satellites flagged as biased by the generator."""
    flags = [ch.truth_is_biased for ch in epoch.channels]
    if any(f is None for f in flags):
        raise ValueError("genie_aided_weights needs truth bias flags on every channel")
    w = np.array([0.0 if f else 1.0 for f in flags])
    if int(np.count_nonzero(w)) < 4:
        raise ValueError("fewer than 4 unbiased satellites; genie exclusion unsolvable")
    return WeightVector(w)


def sigma_model_weights(epoch: Epoch, coeffs: SigmaModelCoeffs | None = None) -> WeightVector:
    """Inverse of the parametric per-channel variance.

    Variance = (sigma2_z + sigma2_cn0 / cn0_linear + sigma2_accel * a^2)
    / sin^2(elevation), with C/N0 converted from dB-Hz to a linear ratio.
    Channels at zero elevation or zero C/N0 get weight 0 (infinite variance).
    """
    coeffs = coeffs or SigmaModelCoeffs()
    w = np.empty(epoch.n)
    for i, ch in enumerate(epoch.channels):
        s = np.sin(ch.elevation)
        if s <= 0.0 or ch.cn0 <= 0.0:
            w[i] = 0.0
            continue
        cn0_linear = 10.0 ** (ch.cn0 / 10.0)
        var = (
            coeffs.sigma2_z
            + coeffs.sigma2_cn0 / cn0_linear
            + coeffs.sigma2_accel * ch.acceleration**2
        ) / (s * s)
        w[i] = 1.0 / var if var > 0 else 0.0
    return WeightVector(w)


def predicted_weights(
    epoch: Epoch,
    model: LstmModel,
    solver_config: SolverConfig | None = None,
) -> WeightVector:
    """Learned weights: residual matrix -> normalization -> LSTM -> weights."""
    matrix = build_residual_matrix(epoch, solver_config)
    normalized = normalize_matrix(matrix, model.clip)
    mask = prediction_mask(epoch.n, epoch.n)
    pred = lstm_forward(model, normalized.values, mask)[: epoch.n]
    if model.log_labels:
        pred = np.expm1(pred)
    top = float(pred.max())
    if top <= 0.0:
        # dead outputs carry no ranking information; degrade to equal weights
        return WeightVector(np.ones(epoch.n))
    return WeightVector(np.maximum(pred, top * PREDICTED_WEIGHT_FLOOR_RATIO))


def fde_residual_test(
    epoch: Epoch,
    config: FdeConfig | None = None,
    solver_config: SolverConfig | None = None,
) -> tuple[WeightVector, bool]:
    """Iterative residual-test fault detection and exclusion.

    Repeatedly solves the equal-weight WLS and applies a chi-square global
    consistency test to the weighted residual sum of squares (N_active - 4
    degrees of freedom, measurement sigma from the config). While the test
    fails, the satellite with the largest standardized residual is excluded
    and the reduced problem re-solved, until the test passes or no further
    exclusion is allowed. The flag is False when no certified solution was
    reached; the returned weights then describe the last active subset.
    """
    config = config or FdeConfig()
    n = epoch.n
    max_excl = config.max_exclusions if config.max_exclusions is not None else max(n - 4, 0)
    active = np.ones(n, dtype=bool)

    while True:
        weights = WeightVector(active.astype(float))
        try:
            result = solve(epoch, weights, solver_config)
        except RankDeficiencyError:
            return weights, False
        n_active = int(active.sum())
        dof = n_active - 4
        if dof < 1:
            # no redundancy left to certify the solution
            return weights, False

        res_act = result.residuals[active]
        t_stat = float(np.sum(res_act**2)) / config.sigma**2
        if t_stat <= stats.chi2.ppf(1.0 - config.global_test_alpha, dof):
            return weights, True

        excluded = n - n_active
        if excluded >= max_excl or n_active - 1 < config.min_satellites:
            return weights, False

        # standardized residuals via the hat-matrix leverages of the active set
        sats = epoch.sat_positions()[active]
        pos = result.state.position.as_array()
        d = pos - sats
        rng = np.sqrt(np.einsum("ij,ij->i", d, d))
        jac = np.column_stack([d / rng[:, None], np.ones(n_active)])
        gram_inv = np.linalg.inv(jac.T @ jac)
        leverage = np.einsum("ij,jk,ik->i", jac, gram_inv, jac)
        denom = config.sigma * np.sqrt(np.clip(1.0 - leverage, 1e-12, None))
        standardized = np.abs(res_act) / denom

        worst = np.flatnonzero(active)[int(np.argmax(standardized))]
        active[worst] = False
