"""From-scratch LSTM regressor mapping residual matrices to satellite weights.

The network consumes the rows of a (padded) residual matrix as a sequence of
pseudo time steps, runs them through one or more gated LSTM layers, and maps
the final hidden state through a dense layer with ReLU to per-satellite
weight predictions. Masked steps leave the hidden and cell state untouched
and padded feature columns are zeroed, so predictions on valid slots do not
depend on pad length or pad content.

Everything is plain float64 numpy: forward, backpropagation through time,
Adam, and the training loop, so runs are bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass

import numpy as np

MODEL_FORMAT = "satweight-lstm"
MODEL_VERSION = 1


class ModelFormatError(ValueError):
    """Model file is corrupt, truncated, or has an unsupported version."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class LstmLayer:
    """Parameters of one LSTM layer; gate order is input, forget, cell, output."""

    wx: np.ndarray  # (4H, D) input weights
    wh: np.ndarray  # (4H, H) recurrent weights
    b: np.ndarray   # (4H,)

    @property
    def hidden_size(self) -> int:
        return self.wh.shape[1]


@dataclass
class LstmModel:
    layers: list[LstmLayer]
    dense_w: np.ndarray  # (O, H_last)
    dense_b: np.ndarray  # (O,)
    input_size: int
    output_size: int
    # Input conditioning carried with the parameters so inference matches
    # whatever the model was trained on.
    clip: float = 100.0
    gamma_code: float = 2.0
    mask_code: float = 0.0
    log_labels: bool = False

    @property
    def hidden_sizes(self) -> list[int]:
        return [layer.hidden_size for layer in self.layers]

    def parameters(self) -> list[np.ndarray]:
        """Flat list of parameter arrays (live references, fixed order)."""
        out: list[np.ndarray] = []
        for layer in self.layers:
            out.extend([layer.wx, layer.wh, layer.b])
        out.extend([self.dense_w, self.dense_b])
        return out

    def set_parameters(self, params: list[np.ndarray]) -> None:
        own = self.parameters()
        if len(params) != len(own):
            raise ValueError("parameter list length mismatch")
        for dst, src in zip(own, params):
            if dst.shape != src.shape:
                raise ValueError("parameter shape mismatch")
            dst[...] = src


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0
    pad_to: int = 60
    mask_code: float = 0.0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("adam betas must be in [0, 1)")
        if self.adam_epsilon <= 0:
            raise ValueError("adam_epsilon must be > 0")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs, patience must be >= 1")
        if self.pad_to < 1:
            raise ValueError("pad_to must be >= 1")


def init_model(
    input_size: int,
    hidden_sizes: list[int],
    output_size: int,
    seed: int = 0,
    clip: float = 100.0,
    gamma_code: float = 2.0,
    mask_code: float = 0.0,
    log_labels: bool = False,
) -> LstmModel:
    """Seeded uniform init in +/- 1/sqrt(fan_in); forget-gate biases start at 1."""
    rng = np.random.default_rng(seed)
    layers = []
    d = input_size
    for h in hidden_sizes:
        wx = rng.uniform(-1.0, 1.0, size=(4 * h, d)) / np.sqrt(d)
        wh = rng.uniform(-1.0, 1.0, size=(4 * h, h)) / np.sqrt(h)
        b = np.zeros(4 * h)
        b[h : 2 * h] = 1.0
        layers.append(LstmLayer(wx=wx, wh=wh, b=b))
        d = h
    dense_w = rng.uniform(-1.0, 1.0, size=(output_size, d)) / np.sqrt(d)
    dense_b = np.zeros(output_size)
    return LstmModel(
        layers=layers,
        dense_w=dense_w,
        dense_b=dense_b,
        input_size=input_size,
        output_size=output_size,
        clip=clip,
        gamma_code=gamma_code,
        mask_code=mask_code,
        log_labels=log_labels,
    )


def prediction_mask(n_valid: int, length: int) -> np.ndarray:
    """Boolean mask with the first ``n_valid`` of ``length`` slots valid."""
    if not 1 <= n_valid <= length:
        raise ValueError(f"need 1 <= n_valid <= length, got {n_valid}/{length}")
    mask = np.zeros(length, dtype=bool)
    mask[:n_valid] = True
    return mask


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def _check_batch(model: LstmModel, x: np.ndarray, mask: np.ndarray) -> None:
    if x.ndim != 3 or x.shape[1] != x.shape[2]:
        raise ValueError(f"inputs must be (batch, T, T) residual matrices, got {x.shape}")
    t = x.shape[1]
    if t > model.input_size or t > model.output_size:
        raise ValueError(
            f"matrix size {t} exceeds model capacity "
            f"(input {model.input_size}, output {model.output_size})"
        )
    if mask.shape != x.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match inputs {x.shape[:2]}")


def _forward_cached(model: LstmModel, x: np.ndarray, mask: np.ndarray):
    """Batched forward pass keeping per-step caches for BPTT.

    x: (B, T, T) matrices, mask: (B, T) bool. Feature columns at masked slots
    are zeroed and the feature axis is zero-padded to the model input size,
    which makes valid-slot outputs independent of padding content.
    """
    _check_batch(model, x, mask)
    b, t, _ = x.shape
    maskf = mask.astype(float)

    xs = np.zeros((b, t, model.input_size))
    xs[:, :, :t] = x * maskf[:, None, :]

    seq = xs
    layer_caches = []
    for layer in model.layers:
        h_size = layer.hidden_size
        h = np.zeros((b, h_size))
        c = np.zeros((b, h_size))
        steps = []
        hs = np.empty((b, t, h_size))
        for ti in range(t):
            xt = seq[:, ti, :]
            z = xt @ layer.wx.T + h @ layer.wh.T + layer.b
            gi = _sigmoid(z[:, :h_size])
            gf = _sigmoid(z[:, h_size : 2 * h_size])
            gg = np.tanh(z[:, 2 * h_size : 3 * h_size])
            go = _sigmoid(z[:, 3 * h_size :])
            c_new = gf * c + gi * gg
            tc = np.tanh(c_new)
            h_new = go * tc
            m = maskf[:, ti : ti + 1]
            steps.append((xt, h, c, gi, gf, gg, go, tc, m))
            c = m * c_new + (1.0 - m) * c
            h = m * h_new + (1.0 - m) * h
            hs[:, ti, :] = h
        layer_caches.append((steps, h))
        seq = hs

    h_final = layer_caches[-1][1]
    y_pre = h_final @ model.dense_w.T + model.dense_b
    y = np.maximum(y_pre, 0.0)
    return y, (xs, maskf, layer_caches, h_final, y_pre)


def forward_batch(model: LstmModel, x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Predictions (B, output_size) for a batch of padded residual matrices."""
    y, _ = _forward_cached(model, x, mask)
    return y


def lstm_forward(model: LstmModel, matrix: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Predictions for a single (T, T) matrix; returns all output slots.

    The caller reads the slots marked valid by ``mask``; everything else is
    padding output and carries no meaning.
    """
    matrix = np.asarray(matrix, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if matrix.ndim != 2:
        raise ValueError("matrix must be 2-D")
    y = forward_batch(model, matrix[None, :, :], mask[None, :])
    return y[0]


def mse_loss(pred: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    """Mean squared error over valid slots only."""
    pred = np.atleast_2d(pred)
    labels = np.atleast_2d(labels)
    mask = np.atleast_2d(mask).astype(bool)
    if pred.shape != labels.shape or mask.shape != pred.shape:
        raise ValueError("pred, labels and mask shapes must match")
    n = int(mask.sum())
    if n == 0:
        raise ValueError("mask selects no valid slots")
    diff = (pred - labels)[mask]
    return float(np.sum(diff * diff) / n)


def _zero_grads(model: LstmModel) -> list[np.ndarray]:
    return [np.zeros_like(p) for p in model.parameters()]


def backward(
    model: LstmModel, x: np.ndarray, mask: np.ndarray, labels: np.ndarray
) -> tuple[float, list[np.ndarray]]:
    """Loss and exact gradients of the masked MSE via BPTT.

    Gradient order matches ``model.parameters()``. Masked steps contribute
    nothing: state passes through and the corresponding gate activations get
    zero gradient.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        x = x[None]
    mask = np.atleast_2d(np.asarray(mask, dtype=bool))
    labels = np.atleast_2d(np.asarray(labels, dtype=float))

    y, cache = _forward_cached(model, x, mask)
    xs, maskf, layer_caches, h_final, y_pre = cache
    b, t, _ = x.shape
    if labels.shape != (b, t):
        raise ValueError(f"labels shape {labels.shape} does not match inputs ({b}, {t})")

    out_mask = np.zeros_like(y, dtype=bool)
    out_mask[:, :t] = mask
    n_valid = int(out_mask.sum())
    if n_valid == 0:
        raise ValueError("mask selects no valid slots")
    lab_full = np.zeros_like(y)
    lab_full[:, :t] = labels
    diff = np.where(out_mask, y - lab_full, 0.0)
    loss = float(np.sum(diff * diff) / n_valid)

    grads = _zero_grads(model)
    if not np.isfinite(loss):
        # gradients of a non-finite loss are meaningless; callers abort
        return loss, grads
    dy = 2.0 * diff / n_valid
    dy_pre = np.where(y_pre > 0, dy, 0.0)
    grads[-2][...] = dy_pre.T @ h_final
    grads[-1][...] = dy_pre.sum(axis=0)

    # Gradient w.r.t. each layer's output sequence; only the final step of the
    # top layer receives a contribution from the dense head.
    dhs_ext = np.zeros((b, t, model.layers[-1].hidden_size))
    dhs_ext[:, -1, :] = dy_pre @ model.dense_w

    for li in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[li]
        steps, _ = layer_caches[li]
        h_size = layer.hidden_size
        gwx = grads[3 * li]
        gwh = grads[3 * li + 1]
        gb = grads[3 * li + 2]
        dxs = np.zeros((b, t, layer.wx.shape[1]))
        dh_carry = np.zeros((b, h_size))
        dc_carry = np.zeros((b, h_size))
        for ti in range(t - 1, -1, -1):
            xt, h_prev, c_prev, gi, gf, gg, go, tc, m = steps[ti]
            dh_total = dhs_ext[:, ti, :] + dh_carry
            dh_upd = m * dh_total
            dc_upd = m * dc_carry
            do = dh_upd * tc
            dc_new = dc_upd + dh_upd * go * (1.0 - tc * tc)
            df = dc_new * c_prev
            di = dc_new * gg
            dg = dc_new * gi
            dz = np.concatenate(
                [
                    di * gi * (1.0 - gi),
                    df * gf * (1.0 - gf),
                    dg * (1.0 - gg * gg),
                    do * go * (1.0 - go),
                ],
                axis=1,
            )
            gwx += dz.T @ xt
            gwh += dz.T @ h_prev
            gb += dz.sum(axis=0)
            dxs[:, ti, :] = dz @ layer.wx
            dh_carry = (1.0 - m) * dh_total + dz @ layer.wh
            dc_carry = (1.0 - m) * dc_carry + dc_new * gf
        dhs_ext = dxs

    return loss, grads


def adam_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    moments: tuple[list[np.ndarray], list[np.ndarray]],
    t: int,
    config: TrainConfig,
) -> tuple[list[np.ndarray], tuple[list[np.ndarray], list[np.ndarray]]]:
    """One Adam update (bias-corrected); returns new params and moments."""
    if t < 1:
        raise ValueError("Adam step index t starts at 1")
    m_list, v_list = moments
    b1, b2 = config.adam_beta1, config.adam_beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, m_list, v_list):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        new_params.append(p - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_epsilon))
        new_m.append(m)
        new_v.append(v)
    return new_params, (new_m, new_v)


def _eval_loss(model: LstmModel, x: np.ndarray, mask: np.ndarray, y: np.ndarray, chunk: int = 512) -> float:
    sse = 0.0
    count = 0
    for lo in range(0, len(x), chunk):
        pred = forward_batch(model, x[lo : lo + chunk], mask[lo : lo + chunk])
        mk = mask[lo : lo + chunk]
        diff = (pred[:, : x.shape[1]] - y[lo : lo + chunk])[mk]
        sse += float(np.sum(diff * diff))
        count += int(mk.sum())
    return sse / count


def train(
    model: LstmModel,
    train_set: tuple[np.ndarray, np.ndarray, np.ndarray],
    val_set: tuple[np.ndarray, np.ndarray, np.ndarray],
    config: TrainConfig,
) -> tuple[LstmModel, list[dict]]:
    """Minibatch Adam on masked MSE with early stopping on validation loss.

    Both sets are (inputs, masks, labels) with inputs (B, P, P), masks (B, P)
    boolean and labels (B, P). Stops once validation loss has not improved
    for ``patience`` consecutive epochs and restores the parameters of the
    best validation epoch. Returns the model and a per-epoch log.
    """
    x_tr, m_tr, y_tr = train_set
    x_va, m_va, y_va = val_set
    if len(x_tr) == 0 or len(x_va) == 0:
        raise ValueError("training and validation sets must be non-empty")

    rng = np.random.default_rng(config.seed)
    params = [p.copy() for p in model.parameters()]
    moments = ([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])
    model.set_parameters(params)

    best_val = np.inf
    best_params = [p.copy() for p in params]
    stall = 0
    step = 0
    log: list[dict] = []

    for epoch_idx in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(x_tr))
        sse = 0.0
        count = 0
        for lo in range(0, len(order), config.batch_size):
            idx = order[lo : lo + config.batch_size]
            loss, grads = backward(model, x_tr[idx], m_tr[idx], y_tr[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite training loss at epoch {epoch_idx}")
            step += 1
            params, moments = adam_step(model.parameters(), grads, moments, step, config)
            model.set_parameters(params)
            nv = int(m_tr[idx].sum())
            sse += loss * nv
            count += nv
        train_loss = sse / count
        val_loss = _eval_loss(model, x_va, m_va, y_va)
        if not np.isfinite(val_loss):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch_idx}")
        log.append(
            {
                "epoch": epoch_idx,
                "train_loss": train_loss,
                "val_loss": val_loss,
                "seconds": time.perf_counter() - t0,
            }
        )
        if val_loss < best_val:
            best_val = val_loss
            best_params = [p.copy() for p in model.parameters()]
            stall = 0
        else:
            stall += 1
            if stall >= config.patience:
                break

    model.set_parameters(best_params)
    return model, log


def save_model(model: LstmModel, path) -> None:
    """Write the model to a deterministic, versioned binary file."""
    arrays = []
    names = []
    for i, layer in enumerate(model.layers):
        for part in ("wx", "wh", "b"):
            names.append(f"layer{i}.{part}")
            arrays.append(getattr(layer, part))
    names.extend(["dense_w", "dense_b"])
    arrays.extend([model.dense_w, model.dense_b])

    payload = b"".join(np.ascontiguousarray(a, dtype=np.float64).tobytes() for a in arrays)
    header = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "input_size": model.input_size,
        "output_size": model.output_size,
        "hidden_sizes": model.hidden_sizes,
        "clip": model.clip,
        "gamma_code": model.gamma_code,
        "mask_code": model.mask_code,
        "log_labels": model.log_labels,
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in zip(names, arrays)],
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(payload)


def load_model(path) -> LstmModel:
    """Read a model written by save_model; raises ModelFormatError on damage."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(header_line.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"unreadable model header: {exc}") from None
    if header.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"not a {MODEL_FORMAT} file")
    if header.get("version") != MODEL_VERSION:
        raise ModelFormatError(
            f"unsupported model version {header.get('version')} (expected {MODEL_VERSION})"
        )
    if len(payload) != header["payload_bytes"]:
        raise ModelFormatError(
            f"truncated model file: {len(payload)} payload bytes, expected {header['payload_bytes']}"
        )
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise ModelFormatError("model payload checksum mismatch")

    arrays = {}
    offset = 0
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        nbytes = int(np.prod(shape)) * 8
        arrays[spec["name"]] = np.frombuffer(
            payload[offset : offset + nbytes], dtype=np.float64
        ).reshape(shape).copy()
        offset += nbytes

    layers = []
    for i in range(len(header["hidden_sizes"])):
        layers.append(
            LstmLayer(
                wx=arrays[f"layer{i}.wx"],
                wh=arrays[f"layer{i}.wh"],
                b=arrays[f"layer{i}.b"],
            )
        )
    return LstmModel(
        layers=layers,
        dense_w=arrays["dense_w"],
        dense_b=arrays["dense_b"],
        input_size=header["input_size"],
        output_size=header["output_size"],
        clip=header["clip"],
        gamma_code=header["gamma_code"],
        mask_code=header["mask_code"],
        log_labels=header["log_labels"],
    )
