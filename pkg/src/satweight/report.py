"""Positioning-error statistics, CDF summaries, CRLB, and benchmark reports.

Evaluates weighting strategies epoch by epoch, decomposes position errors
into horizontal/vertical components in the local ENU frame at the truth
position, and aggregates empirical CDFs with nearest-rank quantiles. The
CRLB utilities give the covariance floor for unbiased estimators under the
Gaussian noise model, plus the 1-sigma horizontal confidence ellipse.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geodesy import Epoch, NavState, ecef_to_enu, ecef_to_geodetic, enu_rotation, jacobian_row
from .lstm import LstmModel
from .strategies import (
    FdeConfig,
    SigmaModelCoeffs,
    equal_weights,
    fde_residual_test,
    genie_aided_weights,
    ground_truth_weights,
    predicted_weights,
    sigma_model_weights,
)
from .wls import RankDeficiencyError, SolverConfig, solve

STRATEGY_NAMES = ("equal", "ground_truth", "genie", "sigma_model", "predicted", "fde")


@dataclass(frozen=True)
class ErrorRecord:
    epoch_id: int
    strategy: str
    horizontal_error: float  # [m], NaN when not solvable
    vertical_error: float    # [m], NaN when not solvable
    solvable: bool


@dataclass(frozen=True)
class CdfSummary:
    strategy: str
    component: str            # "horizontal" | "vertical"
    sorted_errors: np.ndarray
    q68: float
    q95: float
    availability: float


@dataclass(frozen=True)
class CrlbResult:
    fim: np.ndarray                       # 4x4 Fisher information
    position_covariance_bound: np.ndarray  # 3x3 ECEF position block of fim^-1
    ellipse_semi_axes: tuple[float, float]  # 1-sigma semi-axes [m], major first
    ellipse_orientation: float            # major-axis azimuth from east [rad]


def position_errors(result_state: NavState, truth: NavState) -> tuple[float, float]:
    """Horizontal and vertical error [m] of an estimate w.r.t. truth (ENU)."""
    e, n, u = ecef_to_enu(result_state.position, truth)
    return float(math.hypot(e, n)), float(abs(u))


def empirical_cdf_quantile(errors, q: float) -> float:
    """Nearest-rank quantile: value at rank ceil(q * n) of the sorted sample."""
    errors = np.sort(np.asarray(errors, dtype=float))
    if errors.size == 0:
        raise ValueError("empty error list")
    if not 0.0 < q < 1.0:
        raise ValueError("quantile must be in (0, 1)")
    rank = max(1, math.ceil(q * errors.size))
    return float(errors[rank - 1])


def crlb(epoch: Epoch, sigmas) -> CrlbResult:
    """Cramer-Rao bound for the position under independent Gaussian noise.

    FIM = H^T R^-1 H with Jacobian rows taken at the truth state and
    R = diag(sigmas^2). The horizontal 1-sigma ellipse comes from the
    east/north block of the bound rotated into the local frame at truth.
    """
    if epoch.truth_state is None:
        raise ValueError("crlb needs an epoch with truth_state")
    sigmas = np.asarray(sigmas, dtype=float)
    if sigmas.shape != (epoch.n,):
        raise ValueError("sigmas must align with epoch channels")
    if np.any(sigmas <= 0):
        raise ValueError("sigmas must be positive")

    h_rows = np.array(
        [jacobian_row(epoch.truth_state, ch.position) for ch in epoch.channels]
    )
    w = 1.0 / sigmas**2
    fim = (h_rows * w[:, None]).T @ h_rows

    # Invert in a meters-scaled parameterization: the raw FIM mixes meters
    # and seconds and is numerically near-singular in float64. The position
    # block of the inverse is identical either way.
    jac_m = h_rows.copy()
    jac_m[:, 3] = 1.0
    fim_m = (jac_m * w[:, None]).T @ jac_m
    try:
        cov_m = np.linalg.inv(fim_m)
    except np.linalg.LinAlgError:
        raise RankDeficiencyError("singular Fisher information matrix") from None
    if np.linalg.cond(fim_m) > 1e12:
        raise RankDeficiencyError("singular Fisher information matrix")
    pos_bound = cov_m[:3, :3]

    lat, lon, _ = ecef_to_geodetic(epoch.truth_state.position.as_array())
    rot = enu_rotation(lat, lon)
    enu_cov = rot @ pos_bound @ rot.T
    east_north = enu_cov[:2, :2]
    eigvals, eigvecs = np.linalg.eigh(east_north)
    # eigh returns ascending order; report the major axis first
    major, minor = math.sqrt(eigvals[1]), math.sqrt(max(eigvals[0], 0.0))
    v = eigvecs[:, 1]
    orientation = math.atan2(v[1], v[0])
    return CrlbResult(
        fim=fim,
        position_covariance_bound=pos_bound,
        ellipse_semi_axes=(major, minor),
        ellipse_orientation=orientation,
    )


# Canonical geometry for reproducible confidence-ellipse studies: receiver
# at 45N 5E, eight satellites with stratified azimuths and a sweep of
# elevations between 15 and 75 degrees.
CANONICAL_GEOMETRY = {
    "receiver_lat_deg": 45.0,
    "receiver_lon_deg": 5.0,
    "receiver_height_m": 200.0,
    "azimuths_deg": [16.6, 77.0, 107.6, 160.7, 221.8, 240.0, 305.3, 353.2],
    "elevations_deg": [73.9, 21.8, 25.3, 22.5, 74.1, 46.0, 73.9, 19.3],
    "orbit_radius_m": 26_560_000.0,
    "clock_bias_s": 0.0,
}


def canonical_epoch(geometry: dict | None = None) -> Epoch:
    """Noiseless epoch on the published canonical geometry.

    Pseudo-ranges equal the modeled observations at the truth state, so
    callers can superpose whatever noise the study needs.
    """
    import math as _math

    from .geodesy import EcefPosition, SatelliteChannel, geodetic_to_ecef, observation_function

    geo = geometry or CANONICAL_GEOMETRY
    lat = _math.radians(geo["receiver_lat_deg"])
    lon = _math.radians(geo["receiver_lon_deg"])
    recv = geodetic_to_ecef(lat, lon, geo["receiver_height_m"])
    truth = NavState(EcefPosition.from_array(recv), geo.get("clock_bias_s", 0.0))
    rot_t = enu_rotation(lat, lon).T
    radius = geo.get("orbit_radius_m", 26_560_000.0)

    channels = []
    for i, (az_deg, el_deg) in enumerate(zip(geo["azimuths_deg"], geo["elevations_deg"])):
        az, el = _math.radians(az_deg), _math.radians(el_deg)
        u = rot_t @ np.array(
            [_math.cos(el) * _math.sin(az), _math.cos(el) * _math.cos(az), _math.sin(el)]
        )
        ru = float(recv @ u)
        dist = -ru + _math.sqrt(ru * ru + radius**2 - float(recv @ recv))
        sat = EcefPosition.from_array(recv + dist * u)
        channels.append(
            SatelliteChannel(
                sat_id=f"C{i:02d}",
                position=sat,
                pseudo_range=observation_function(truth, sat),
                elevation=el,
            )
        )
    return Epoch(tuple(channels), truth_state=truth)


@dataclass(frozen=True)
class EvalConfig:
    strategies: tuple[str, ...] = ("equal", "ground_truth", "genie", "predicted")
    split: str = "test"
    solver: SolverConfig = field(default_factory=SolverConfig)
    fde: FdeConfig = field(default_factory=FdeConfig)
    sigma_coeffs: SigmaModelCoeffs = field(default_factory=SigmaModelCoeffs)

    def __post_init__(self):
        unknown = set(self.strategies) - set(STRATEGY_NAMES)
        if unknown:
            raise ValueError(f"unknown strategies: {sorted(unknown)}")


@dataclass
class BenchmarkReport:
    records: list[ErrorRecord]
    summaries: list[CdfSummary]
    meta: dict

    def summary(self, strategy: str, component: str) -> CdfSummary:
        for s in self.summaries:
            if s.strategy == strategy and s.component == component:
                return s
        raise KeyError(f"no summary for {strategy}/{component}")


def _strategy_weights(name, epoch, model, config):
    """Weights and solvability flag for one strategy on one epoch."""
    if name == "equal":
        return equal_weights(epoch), True
    if name == "ground_truth":
        return ground_truth_weights(epoch), True
    if name == "genie":
        return genie_aided_weights(epoch), True
    if name == "sigma_model":
        return sigma_model_weights(epoch, config.sigma_coeffs), True
    if name == "predicted":
        if model is None:
            raise ValueError("the 'predicted' strategy needs a trained model")
        return predicted_weights(epoch, model, config.solver), True
    if name == "fde":
        return fde_residual_test(epoch, config.fde, config.solver)
    raise ValueError(f"unknown strategy {name!r}")


def evaluate_epoch(
    epoch_id: int,
    epoch: Epoch,
    strategies: tuple[str, ...],
    model: LstmModel | None,
    config: EvalConfig,
) -> list[ErrorRecord]:
    """All requested strategies on one epoch; failures become solvable=False."""
    if epoch.truth_state is None:
        raise ValueError("evaluation needs epochs with truth_state")
    out = []
    for name in strategies:
        result = None
        try:
            weights, solvable = _strategy_weights(name, epoch, model, config)
            if solvable:
                result = solve(epoch, weights, config.solver)
                solvable = result.converged
        except (RankDeficiencyError, ValueError):
            solvable = False
        if solvable and result is not None:
            h_err, v_err = position_errors(result.state, epoch.truth_state)
        else:
            solvable = False
            h_err, v_err = float("nan"), float("nan")
        out.append(ErrorRecord(epoch_id, name, h_err, v_err, solvable))
    return out


def summarize(records: list[ErrorRecord], strategies: tuple[str, ...]) -> list[CdfSummary]:
    """Per-strategy CDF summaries over the solvable epochs."""
    summaries = []
    for name in strategies:
        recs = [r for r in records if r.strategy == name]
        solved = [r for r in recs if r.solvable]
        availability = len(solved) / len(recs) if recs else 0.0
        for component in ("horizontal", "vertical"):
            errs = np.sort(
                [getattr(r, f"{component}_error") for r in solved]
            ) if solved else np.array([])
            q68 = empirical_cdf_quantile(errs, 0.68) if errs.size else float("nan")
            q95 = empirical_cdf_quantile(errs, 0.95) if errs.size else float("nan")
            summaries.append(
                CdfSummary(
                    strategy=name,
                    component=component,
                    sorted_errors=errs,
                    q68=q68,
                    q95=q95,
                    availability=availability,
                )
            )
    return summaries


def run_benchmark(
    dataset,
    strategies: tuple[str, ...] | None = None,
    model: LstmModel | None = None,
    config: EvalConfig | None = None,
    workers: int = 1,
) -> BenchmarkReport:
    """Evaluate the requested strategies over a dataset split.

    Per-epoch failures are recorded as unavailable rather than aborting the
    run. The report metadata carries everything needed to regroup results by
    the dataset's biased fraction for sensitivity sweeps.
    """
    config = config or EvalConfig()
    if strategies is None:
        strategies = config.strategies
    else:
        strategies = tuple(strategies)
        config = EvalConfig(
            strategies=strategies,
            split=config.split,
            solver=config.solver,
            fde=config.fde,
            sigma_coeffs=config.sigma_coeffs,
        )
    if "predicted" in strategies and model is None:
        raise ValueError("the 'predicted' strategy needs a trained model")
    records_in = dataset.split(config.split)
    if not records_in:
        raise ValueError(f"dataset has no '{config.split}' epochs")

    jobs = [(rec.epoch_id, rec.labeled.epoch) for rec in records_in]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            nested = list(
                pool.map(
                    _evaluate_one,
                    [(eid, ep, strategies, model, config) for eid, ep in jobs],
                    chunksize=32,
                )
            )
    else:
        nested = [_evaluate_one((eid, ep, strategies, model, config)) for eid, ep in jobs]
    records = [r for group in nested for r in group]

    summaries = summarize(records, strategies)
    meta = {
        "strategies": list(strategies),
        "split": config.split,
        "epochs": len(records_in),
        "biased_fraction": dataset.config.biased_fraction,
        "quantile_method": "nearest-rank",
        "seed": dataset.config.seed,
    }
    return BenchmarkReport(records=records, summaries=summaries, meta=meta)


def _evaluate_one(args):
    epoch_id, epoch, strategies, model, config = args
    return evaluate_epoch(epoch_id, epoch, strategies, model, config)


# --- report files ---


def write_error_records(records: list[ErrorRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch_id", "strategy", "horizontal_error_m", "vertical_error_m", "solvable"])
        for r in records:
            writer.writerow(
                [
                    r.epoch_id,
                    r.strategy,
                    repr(float(r.horizontal_error)),
                    repr(float(r.vertical_error)),
                    int(r.solvable),
                ]
            )


def write_cdf_files(report: BenchmarkReport, out_dir) -> list[str]:
    """One plottable CDF file per strategy; returns the written paths."""
    import os

    paths = []
    for name in report.meta["strategies"]:
        hor = report.summary(name, "horizontal").sorted_errors
        ver = report.summary(name, "vertical").sorted_errors
        path = os.path.join(out_dir, f"cdf_{name}.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["cumulative_probability", "horizontal_error_m", "vertical_error_m"])
            n = len(hor)
            for k in range(n):
                writer.writerow([repr((k + 1) / n), repr(float(hor[k])), repr(float(ver[k]))])
        paths.append(path)
    return paths


def summary_json(report: BenchmarkReport) -> dict:
    out = {"meta": report.meta, "strategies": {}}
    for name in report.meta["strategies"]:
        hor = report.summary(name, "horizontal")
        ver = report.summary(name, "vertical")
        out["strategies"][name] = {
            "availability": hor.availability,
            "horizontal_q68": hor.q68,
            "horizontal_q95": hor.q95,
            "vertical_q68": ver.q68,
            "vertical_q95": ver.q95,
        }
    return out


def write_summary(report: BenchmarkReport, path, extra_meta: dict | None = None) -> None:
    payload = summary_json(report)
    if extra_meta:
        payload["meta"] = {**payload["meta"], **extra_meta}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
