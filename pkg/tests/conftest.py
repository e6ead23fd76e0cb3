"""Shared fixtures and independent reference implementations (test oracles).

The helpers here deliberately re-derive results with straightforward,
loop-heavy code so the package's vectorized implementations are checked
against something that cannot share their bugs.
"""

import math

import numpy as np
import pytest

from satweight.geodesy import EcefPosition, Epoch, NavState, SatelliteChannel

C_LIGHT = 299_792_458.0


def local_enu_to_ecef_rotation(lat, lon):
    """ENU axis vectors expressed in ECEF (columns), derived from scratch."""
    east = np.array([-math.sin(lon), math.cos(lon), 0.0])
    north = np.array(
        [-math.sin(lat) * math.cos(lon), -math.sin(lat) * math.sin(lon), math.cos(lat)]
    )
    up = np.array(
        [math.cos(lat) * math.cos(lon), math.cos(lat) * math.sin(lon), math.sin(lat)]
    )
    return np.column_stack([east, north, up])


def make_epoch(
    seed=0,
    n=8,
    noise=0.0,
    biases=None,
    clock_bias=None,
    min_elevation_deg=10.0,
    cn0=45.0,
    accel=0.0,
    flag_biases=False,
    radius=6_371_000.0,
    shell=26_560_000.0,
):
    """Self-contained random epoch: spherical-Earth receiver, shell satellites.

    ``biases`` maps satellite index to an additive pseudo-range error [m];
    with ``flag_biases`` those channels also get truth_is_biased=True.
    ``radius``/``shell`` shrink the geometry for tests that need agreement
    below the float64 noise floor of full ECEF magnitudes (~3e-9 m).
    Returns (epoch, truth_state).
    """
    rng = np.random.default_rng(seed)
    biases = biases or {}
    lat = math.asin(rng.uniform(-1.0, 1.0))
    lon = rng.uniform(-math.pi, math.pi)
    recv = radius * np.array(
        [math.cos(lat) * math.cos(lon), math.cos(lat) * math.sin(lon), math.sin(lat)]
    )
    delta = rng.uniform(-1e-3, 1e-3) if clock_bias is None else clock_bias
    truth = NavState(EcefPosition.from_array(recv), delta)

    rot = local_enu_to_ecef_rotation(lat, lon)
    channels = []
    for i in range(n):
        az = rng.uniform(0.0, 2.0 * math.pi)
        el = rng.uniform(math.radians(min_elevation_deg), math.pi / 2)
        u = rot @ np.array(
            [math.cos(el) * math.sin(az), math.cos(el) * math.cos(az), math.sin(el)]
        )
        ru = recv @ u
        dist = -ru + math.sqrt(ru * ru + shell**2 - recv @ recv)
        sat = recv + dist * u
        geom = math.dist(tuple(recv), tuple(sat))
        err = float(noise * rng.standard_normal() + biases.get(i, 0.0))
        rho = geom + C_LIGHT * delta + err
        channels.append(
            SatelliteChannel(
                sat_id=f"T{i:02d}",
                position=EcefPosition.from_array(sat),
                pseudo_range=rho,
                elevation=el,
                cn0=cn0,
                acceleration=accel,
                truth_bias=err,
                truth_is_biased=(i in biases) if flag_biases else False,
            )
        )
    return Epoch(tuple(channels), truth_state=truth), truth


def gn_solve_arrays(sat_positions, pseudo_ranges, weights=None, iterations=60):
    """Plain Gauss-Newton reference solver on raw arrays.

    Independent of the package solver: no damping, no row dropping (zero
    weights simply contribute nothing). Returns [x, y, z, clock_bias_s].
    """
    sats = np.asarray(sat_positions, dtype=float)
    rho = np.asarray(pseudo_ranges, dtype=float)
    w = np.ones(len(rho)) if weights is None else np.asarray(weights, dtype=float)
    q = np.zeros(4)  # [x, y, z, c*delta]
    for _ in range(iterations):
        d = q[:3] - sats
        rng = np.sqrt((d * d).sum(axis=1))
        res = rho - (rng + q[3])
        jac = np.column_stack([d / rng[:, None], np.ones(len(rho))])
        a = jac.T @ (w[:, None] * jac)
        dq = np.linalg.solve(a, jac.T @ (w * res))
        q = q + dq
        if np.linalg.norm(dq) < 1e-10:
            break
    return np.array([q[0], q[1], q[2], q[3] / C_LIGHT])


def naive_lstm_forward(model, matrix, mask):
    """Loop-naive reference forward pass for a single residual matrix."""
    t = matrix.shape[0]
    x = np.zeros((t, model.input_size))
    for r in range(t):
        for cidx in range(t):
            if mask[cidx]:
                x[r, cidx] = matrix[r, cidx]

    def sigmoid(v):
        return 1.0 / (1.0 + math.exp(-v))

    seq = x
    for layer in model.layers:
        hsz = layer.hidden_size
        h = np.zeros(hsz)
        c = np.zeros(hsz)
        outputs = np.zeros((t, hsz))
        for step in range(t):
            if mask[step]:
                z = layer.wx @ seq[step] + layer.wh @ h + layer.b
                gi = np.array([sigmoid(v) for v in z[:hsz]])
                gf = np.array([sigmoid(v) for v in z[hsz : 2 * hsz]])
                gg = np.tanh(z[2 * hsz : 3 * hsz])
                go = np.array([sigmoid(v) for v in z[3 * hsz :]])
                c = gf * c + gi * gg
                h = go * np.tanh(c)
            outputs[step] = h
        seq = outputs
    pre = model.dense_w @ seq[-1] + model.dense_b
    return np.maximum(pre, 0.0)


@pytest.fixture(scope="session")
def small_trained_model():
    """A genuinely trained (small) model plus its dataset, shared by tests.

    Kept small so the whole fixture builds in tens of seconds; behavioral
    tests only need the model to have learned the bias-column pattern.
    """
    from satweight.lstm import TrainConfig, init_model, train
    from satweight.synth import GenConfig, build_dataset, prepare_training_arrays

    config = GenConfig(epochs=1600, n_satellites=8, biased_fraction=0.12, seed=424)
    dataset = build_dataset(config, splits=(0.75, 0.1, 0.15))
    tc = TrainConfig(batch_size=64, max_epochs=25, patience=4, seed=5, pad_to=8)
    x_tr = prepare_training_arrays(dataset.split("train"), 8, dataset.clip, 0.0, True)
    x_va = prepare_training_arrays(dataset.split("val"), 8, dataset.clip, 0.0, True)
    model = init_model(8, [32], 8, seed=5, clip=dataset.clip, log_labels=True)
    model, _ = train(model, x_tr, x_va, tc)
    return model, dataset
