"""Synthetic epoch generation with Gaussian-exponential mixture noise.

Each epoch places a receiver on the WGS-84 surface, draws satellites on a
nominal orbit shell at random azimuth/elevation, and perturbs the
pseudo-ranges with errors from a two-branch noise model: a Gaussian branch
for nominal channels and a positive exponential branch for strongly biased
ones. Labels are the inverse squared true residuals, floored so they stay
finite. Epochs carry their leave-one-out residual matrix so training data
is self-contained.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .constants import DEFAULT_ORBIT_RADIUS, WGS84_A
from .geodesy import (
    EcefPosition,
    Epoch,
    NavState,
    SatelliteChannel,
    enu_rotation,
    geodetic_to_ecef,
    observation_function,
)
from .residual_matrix import (
    DEFAULT_CLIP,
    DEFAULT_GAMMA,
    EpochRejectedError,
    ResidualMatrix,
    build_residual_matrix,
    normalize_matrix,
)
from .wls import SolverConfig, WeightVector

DATASET_FORMAT = "satweight-dataset"
DATASET_VERSION = 1

# Residuals below this magnitude [m] are floored before inversion, capping
# labels at 1e4.
LABEL_RESIDUAL_FLOOR = 0.01

# Truth receiver clock bias is drawn uniformly from this range [s].
CLOCK_BIAS_RANGE = 1e-3


@dataclass(frozen=True)
class MixtureParams:
    """Gaussian-exponential error mixture.

    ``alpha`` is the probability of the Gaussian branch N(mu, sigma^2);
    with probability 1 - alpha the error is a positive Exp(lam) outlier.
    """

    alpha: float = 0.91
    mu: float = 0.0
    sigma: float = 3.0
    lam: float = 0.02

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")
        if not self.lam > 0:
            raise ValueError("lam must be > 0")


def mixture_cdf(params: MixtureParams, x) -> np.ndarray:
    """Analytic CDF of the mixture density at x."""
    x = np.asarray(x, dtype=float)
    gauss = stats.norm.cdf(x, loc=params.mu, scale=params.sigma)
    expo = np.where(x >= 0, 1.0 - np.exp(-params.lam * np.clip(x, 0.0, None)), 0.0)
    return params.alpha * gauss + (1.0 - params.alpha) * expo


def sample_mixture(params: MixtureParams, is_biased: bool, rng: np.random.Generator) -> float:
    """One error draw: Gaussian branch when unbiased, exponential when biased."""
    if is_biased:
        return float(rng.exponential(1.0 / params.lam))
    return float(rng.normal(params.mu, params.sigma))


@dataclass(frozen=True)
class GenConfig:
    epochs: int = 1000
    n_satellites: int | tuple[int, int] = 12
    biased_fraction: float = 0.09
    mixture: MixtureParams = field(default_factory=MixtureParams)
    seed: int = 0
    orbit_radius: float = DEFAULT_ORBIT_RADIUS
    min_elevation: float = math.radians(10.0)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        lo, hi = self.satellite_range()
        if lo < 5:
            raise ValueError("n_satellites must be >= 5")
        if hi < lo:
            raise ValueError("n_satellites range must be non-decreasing")
        if not 0.0 <= self.biased_fraction <= 1.0:
            raise ValueError("biased_fraction must be in [0, 1]")
        if self.orbit_radius <= WGS84_A:
            raise ValueError("orbit_radius must exceed the Earth radius")
        if not 0.0 <= self.min_elevation < math.pi / 2:
            raise ValueError("min_elevation must be in [0, pi/2)")

    def satellite_range(self) -> tuple[int, int]:
        if isinstance(self.n_satellites, int):
            return self.n_satellites, self.n_satellites
        lo, hi = self.n_satellites
        return int(lo), int(hi)


@dataclass(frozen=True)
class LabeledEpoch:
    epoch: Epoch
    residual_matrix: ResidualMatrix
    labels: WeightVector


def weight_label(residual: float) -> float:
    """Inverse squared residual with the singularity floor."""
    return 1.0 / max(abs(residual), LABEL_RESIDUAL_FLOOR) ** 2


def generate_epoch(
    config: GenConfig,
    rng: np.random.Generator,
    solver_config: SolverConfig | None = None,
    gamma: float = DEFAULT_GAMMA,
) -> LabeledEpoch:
    """Draw one labeled epoch: geometry, mixture errors, matrix, labels."""
    lat = math.asin(rng.uniform(-1.0, 1.0))
    lon = rng.uniform(-math.pi, math.pi)
    clock_bias = rng.uniform(-CLOCK_BIAS_RANGE, CLOCK_BIAS_RANGE)
    recv = geodetic_to_ecef(lat, lon, 0.0)
    truth = NavState(EcefPosition.from_array(recv), clock_bias)

    lo, hi = config.satellite_range()
    n = int(rng.integers(lo, hi + 1)) if hi > lo else lo

    enu_to_ecef = enu_rotation(lat, lon).T
    r_norm2 = float(recv @ recv)

    channels = []
    for i in range(n):
        az = rng.uniform(0.0, 2.0 * math.pi)
        el = rng.uniform(config.min_elevation, math.pi / 2)
        u_enu = np.array(
            [math.cos(el) * math.sin(az), math.cos(el) * math.cos(az), math.sin(el)]
        )
        u = enu_to_ecef @ u_enu
        ru = float(recv @ u)
        dist = -ru + math.sqrt(ru * ru + config.orbit_radius**2 - r_norm2)
        sat = EcefPosition.from_array(recv + dist * u)

        cn0 = rng.uniform(35.0, 50.0)
        accel = rng.uniform(0.0, 2.0)
        is_biased = bool(rng.random() < config.biased_fraction)
        err = sample_mixture(config.mixture, is_biased, rng)

        base = observation_function(truth, sat)
        pseudo_range = base + err
        channels.append(
            SatelliteChannel(
                sat_id=f"S{i:02d}",
                position=sat,
                pseudo_range=pseudo_range,
                elevation=el,
                cn0=cn0,
                acceleration=accel,
                truth_bias=pseudo_range - base,
                truth_is_biased=is_biased,
            )
        )

    epoch = Epoch(tuple(channels), truth_state=truth)
    matrix = build_residual_matrix(epoch, solver_config, gamma=gamma)
    labels = WeightVector(np.array([weight_label(ch.truth_bias) for ch in channels]))
    return LabeledEpoch(epoch=epoch, residual_matrix=matrix, labels=labels)


def epoch_rng(seed: int, index: int, attempt: int = 0) -> np.random.Generator:
    """Independent per-epoch RNG substream; stable under parallel scheduling."""
    return np.random.default_rng([seed, index, attempt])


def split_sizes(n: int, fractions: tuple[float, float, float]) -> tuple[int, int, int]:
    """Largest-remainder apportionment of n items to the three fractions."""
    raw = [f * n for f in fractions]
    counts = [int(math.floor(r)) for r in raw]
    short = n - sum(counts)
    order = sorted(range(3), key=lambda i: raw[i] - counts[i], reverse=True)
    for i in range(short):
        counts[order[i]] += 1
    return counts[0], counts[1], counts[2]


def split_dataset(
    data: list, fractions: tuple[float, float, float], seed: int
) -> tuple[list, list, list]:
    """Shuffle and partition into disjoint train/validation/test lists."""
    if len(data) == 0:
        raise ValueError("cannot split an empty dataset")
    if any(f <= 0 for f in fractions):
        raise ValueError("split fractions must be positive")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(data))
    n_train, n_val, _ = split_sizes(len(data), fractions)
    train = [data[i] for i in order[:n_train]]
    val = [data[i] for i in order[n_train : n_train + n_val]]
    test = [data[i] for i in order[n_train + n_val :]]
    return train, val, test


@dataclass(frozen=True)
class DatasetRecord:
    epoch_id: int
    labeled: LabeledEpoch
    split: str  # "train" | "val" | "test"


@dataclass
class Dataset:
    config: GenConfig
    gamma: float
    clip: float
    records: list[DatasetRecord]

    def split(self, tag: str) -> list[DatasetRecord]:
        return [r for r in self.records if r.split == tag]

    def max_satellites(self) -> int:
        return max(r.labeled.epoch.n for r in self.records)


def build_dataset(
    config: GenConfig,
    splits: tuple[float, float, float] | None = (0.6, 0.2, 0.2),
    gamma: float = DEFAULT_GAMMA,
    clip: float = DEFAULT_CLIP,
    solver_config: SolverConfig | None = None,
    workers: int = 1,
) -> Dataset:
    """Generate, label, and split a full dataset.

    ``splits=None`` tags every epoch as test (evaluation-only datasets).
    Epochs whose leave-one-out solves hit degenerate geometry (vanishingly
    rare for random constellations) are redrawn from a fresh substream so
    the epoch count stays exact and deterministic.
    """
    indices = list(range(config.epochs))
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            labeled = list(
                pool.map(
                    _generate_one,
                    [(config, i, gamma, solver_config) for i in indices],
                    chunksize=64,
                )
            )
    else:
        labeled = [_generate_one((config, i, gamma, solver_config)) for i in indices]

    if splits is None:
        tag = {i: "test" for i in indices}
    else:
        train_idx, val_idx, test_idx = split_dataset(indices, splits, seed=config.seed)
        tag = {}
        for part, name in ((train_idx, "train"), (val_idx, "val"), (test_idx, "test")):
            for i in part:
                tag[i] = name
    records = [
        DatasetRecord(epoch_id=i, labeled=le, split=tag[i]) for i, le in enumerate(labeled)
    ]
    return Dataset(config=config, gamma=gamma, clip=clip, records=records)


def _generate_one(args) -> LabeledEpoch:
    config, index, gamma, solver_config = args
    for attempt in range(8):
        rng = epoch_rng(config.seed, index, attempt)
        try:
            return generate_epoch(config, rng, solver_config, gamma=gamma)
        except EpochRejectedError:
            continue
    raise EpochRejectedError(f"epoch {index}: repeated degenerate geometry draws")


def prepare_training_arrays(
    records: list[DatasetRecord],
    pad_to: int,
    clip: float,
    mask_code: float = 0.0,
    log_labels: bool = False,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pad and normalize dataset records into (inputs, masks, labels) arrays.

    Inputs are (B, pad_to, pad_to) normalized matrices with padding filled by
    ``mask_code``, masks mark the leading N valid slots per epoch, and labels
    are optionally log1p-compressed for training.
    """
    if not records:
        raise ValueError("no records to prepare")
    b = len(records)
    x = np.full((b, pad_to, pad_to), float(mask_code))
    m = np.zeros((b, pad_to), dtype=bool)
    y = np.zeros((b, pad_to))
    for k, rec in enumerate(records):
        n = rec.labeled.epoch.n
        if n > pad_to:
            raise ValueError(f"epoch {rec.epoch_id} has {n} satellites > pad_to {pad_to}")
        rm = normalize_matrix(rec.labeled.residual_matrix, clip)
        x[k, :n, :n] = rm.values
        m[k, :n] = True
        labels = rec.labeled.labels.values
        y[k, :n] = np.log1p(labels) if log_labels else labels
    return x, m, y


# --- dataset file format (one JSON object per line) ---


def _config_to_json(config: GenConfig) -> dict:
    n = config.n_satellites
    return {
        "epochs": config.epochs,
        "n_satellites": list(n) if isinstance(n, tuple) else n,
        "biased_fraction": config.biased_fraction,
        "mixture": {
            "alpha": config.mixture.alpha,
            "mu": config.mixture.mu,
            "sigma": config.mixture.sigma,
            "lam": config.mixture.lam,
        },
        "seed": config.seed,
        "orbit_radius": config.orbit_radius,
        "min_elevation": config.min_elevation,
    }


def _config_from_json(d: dict) -> GenConfig:
    n = d["n_satellites"]
    return GenConfig(
        epochs=d["epochs"],
        n_satellites=tuple(n) if isinstance(n, list) else n,
        biased_fraction=d["biased_fraction"],
        mixture=MixtureParams(**d["mixture"]),
        seed=d["seed"],
        orbit_radius=d["orbit_radius"],
        min_elevation=d["min_elevation"],
    )


def _record_to_json(rec: DatasetRecord) -> dict:
    le = rec.labeled
    epoch = le.epoch
    return {
        "epoch_id": rec.epoch_id,
        "split_tag": rec.split,
        "truth_state": None if epoch.truth_state is None else epoch.truth_state.as_array().tolist(),
        "channels": [
            {
                "sat_id": ch.sat_id,
                "position": [ch.position.x, ch.position.y, ch.position.z],
                "pseudo_range": ch.pseudo_range,
                "elevation": ch.elevation,
                "cn0": ch.cn0,
                "acceleration": ch.acceleration,
                "truth_bias": ch.truth_bias,
                "truth_is_biased": ch.truth_is_biased,
            }
            for ch in epoch.channels
        ],
        "residual_matrix": {
            "n": le.residual_matrix.n,
            "gamma": le.residual_matrix.gamma,
            "clip": le.residual_matrix.clip,
            "values": le.residual_matrix.values.ravel().tolist(),
        },
        "labels": le.labels.values.tolist(),
    }


def _record_from_json(d: dict) -> DatasetRecord:
    channels = tuple(
        SatelliteChannel(
            sat_id=ch["sat_id"],
            position=EcefPosition(*ch["position"]),
            pseudo_range=ch["pseudo_range"],
            elevation=ch["elevation"],
            cn0=ch["cn0"],
            acceleration=ch["acceleration"],
            truth_bias=ch["truth_bias"],
            truth_is_biased=ch["truth_is_biased"],
        )
        for ch in d["channels"]
    )
    truth = None if d["truth_state"] is None else NavState.from_array(d["truth_state"])
    m = d["residual_matrix"]
    matrix = ResidualMatrix(
        values=np.array(m["values"], dtype=float).reshape(m["n"], m["n"]),
        n=m["n"],
        gamma=m["gamma"],
        clip=m["clip"],
    )
    labeled = LabeledEpoch(
        epoch=Epoch(channels, truth_state=truth),
        residual_matrix=matrix,
        labels=WeightVector(np.array(d["labels"], dtype=float)),
    )
    return DatasetRecord(epoch_id=d["epoch_id"], labeled=labeled, split=d["split_tag"])


def save_dataset(dataset: Dataset, path) -> None:
    """Write the dataset as line-delimited JSON; floats round-trip exactly."""
    header = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "gamma": dataset.gamma,
        "clip": dataset.clip,
        "gen_config": _config_to_json(dataset.config),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for rec in dataset.records:
            fh.write(json.dumps(_record_to_json(rec)) + "\n")


def load_dataset(path) -> Dataset:
    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != DATASET_FORMAT:
            raise ValueError(f"not a {DATASET_FORMAT} file")
        if header.get("version") != DATASET_VERSION:
            raise ValueError(f"unsupported dataset version {header.get('version')}")
        records = [_record_from_json(json.loads(line)) for line in fh if line.strip()]
    return Dataset(
        config=_config_from_json(header["gen_config"]),
        gamma=header["gamma"],
        clip=header["clip"],
        records=records,
    )
