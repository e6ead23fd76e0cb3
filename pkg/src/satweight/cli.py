"""Command-line orchestration: gen, train, eval, sweep, and report.

Every command validates its configuration up front (field-level
diagnostics, nothing computed on bad input), runs with explicit seeds, and
writes a manifest capturing the resolved config, seeds, content hashes of
inputs and outputs, and wall time, so any artifact can be reproduced
bit-exactly in deterministic mode.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time

from . import __version__
from .lstm import (
    TrainConfig,
    TrainingDivergedError,
    init_model,
    load_model,
    save_model,
    train,
)
from .report import (
    ErrorRecord,
    EvalConfig,
    STRATEGY_NAMES,
    run_benchmark,
    summarize,
    write_cdf_files,
    write_error_records,
    write_summary,
)
from .strategies import FdeConfig, SigmaModelCoeffs
from .synth import (
    Dataset,
    GenConfig,
    MixtureParams,
    build_dataset,
    load_dataset,
    prepare_training_arrays,
    save_dataset,
)

EXIT_CODES = {
    "invalid_config": 2,
    "io_error": 3,
    "training_diverged": 4,
    "data_error": 5,
    "internal": 1,
}


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


# --- presets ---

GEN_PRESETS = {
    # Full-scale synthetic protocol: 180k epochs of 60 satellites.
    "paper-synth": {
        "epochs": 180_000,
        "n_satellites": 60,
        "biased_fraction": 0.09,
        "seed": 2024,
        "splits": [0.6, 0.2, 0.2],
    },
    # Commodity-hardware scale: exact 20000/1000/5000 train/val/test split.
    "desk": {
        "epochs": 26_000,
        "n_satellites": 12,
        "biased_fraction": 0.09,
        "seed": 11,
        "splits": [20_000 / 26_000, 1_000 / 26_000, 5_000 / 26_000],
    },
    # Small-N, heavily faulted epochs for availability stress tests; the
    # outlier branch is much harsher than the nominal mixture.
    "desk-stress": {
        "epochs": 2_000,
        "n_satellites": 9,
        "biased_fraction": 0.2,
        "mixture": {"lam": 0.002},
        "seed": 13,
        "splits": "test-only",
    },
}

TRAIN_PRESETS = {
    "synthetic": {"hidden_sizes": [512], "pad_to": 60, "seed": 3},
    "field-net": {"hidden_sizes": [893, 893], "pad_to": 60, "seed": 3},
    "desk": {
        "hidden_sizes": [64],
        "pad_to": 12,
        "batch_size": 64,
        "max_epochs": 60,
        "patience": 5,
        "seed": 3,
        "log_labels": True,
    },
}


# --- config validation ---


def _fail(path: str, msg: str):
    raise CliError("invalid_config", f"config field '{path}': {msg}")


def _get(d: dict, key: str, default, path: str, types, check=None, required=False):
    if key not in d:
        if required:
            _fail(f"{path}{key}", "missing required field")
        return default
    v = d[key]
    type_tuple = types if isinstance(types, tuple) else (types,)
    names = "/".join(t.__name__ for t in type_tuple)
    if isinstance(v, bool) and bool not in type_tuple:
        _fail(f"{path}{key}", f"expected {names}, got bool: {v!r}")
    if not isinstance(v, type_tuple):
        _fail(f"{path}{key}", f"expected {names}, got {type(v).__name__}: {v!r}")
    if check is not None and not check(v):
        _fail(f"{path}{key}", f"invalid value {v!r}")
    return v


def _reject_unknown(d: dict, allowed: set, path: str):
    unknown = set(d) - allowed
    if unknown:
        _fail(f"{path}{sorted(unknown)[0]}", "unknown field")


def load_config_file(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise CliError("io_error", f"cannot read config {path}: {exc}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(
            "invalid_config", f"{path}: JSON parse error at line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from None
    if not isinstance(cfg, dict):
        raise CliError("invalid_config", f"{path}: top level must be an object")
    return cfg


def parse_gen_config(cfg: dict, seed_override: int | None = None):
    """Validated (GenConfig, splits-or-None, gamma, clip) from a config dict."""
    path = ""
    _reject_unknown(
        cfg,
        {
            "epochs",
            "n_satellites",
            "biased_fraction",
            "mixture",
            "seed",
            "orbit_radius",
            "min_elevation_deg",
            "splits",
            "gamma",
            "clip",
        },
        path,
    )
    epochs = _get(cfg, "epochs", None, path, int, lambda v: v >= 1, required=True)
    n_sat = cfg.get("n_satellites", 12)
    if isinstance(n_sat, list):
        if len(n_sat) != 2 or not all(isinstance(v, int) for v in n_sat):
            _fail("n_satellites", "expected an int or a [low, high] pair of ints")
        if n_sat[0] < 5 or n_sat[1] < n_sat[0]:
            _fail("n_satellites", f"need 5 <= low <= high, got {n_sat}")
        n_sat = (n_sat[0], n_sat[1])
    elif isinstance(n_sat, int) and not isinstance(n_sat, bool):
        if n_sat < 5:
            _fail("n_satellites", f"must be >= 5, got {n_sat}")
    else:
        _fail("n_satellites", "expected an int or a [low, high] pair of ints")
    biased = _get(cfg, "biased_fraction", 0.09, path, (int, float), lambda v: 0 <= v <= 1)
    mix_cfg = _get(cfg, "mixture", {}, path, dict)
    _reject_unknown(mix_cfg, {"alpha", "mu", "sigma", "lam"}, "mixture.")
    mixture = MixtureParams(
        alpha=_get(mix_cfg, "alpha", 0.91, "mixture.", (int, float), lambda v: 0 <= v <= 1),
        mu=_get(mix_cfg, "mu", 0.0, "mixture.", (int, float)),
        sigma=_get(mix_cfg, "sigma", 3.0, "mixture.", (int, float), lambda v: v > 0),
        lam=_get(mix_cfg, "lam", 0.02, "mixture.", (int, float), lambda v: v > 0),
    )
    seed = _get(cfg, "seed", 0, path, int)
    if seed_override is not None:
        seed = seed_override
    orbit = _get(cfg, "orbit_radius", 26_560_000.0, path, (int, float), lambda v: v > 6.4e6)
    min_el = _get(cfg, "min_elevation_deg", 10.0, path, (int, float), lambda v: 0 <= v < 90)
    splits = cfg.get("splits", [0.6, 0.2, 0.2])
    if splits == "test-only":
        splits = None
    elif isinstance(splits, list) and len(splits) == 3 and all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in splits
    ):
        if any(v <= 0 for v in splits) or abs(sum(splits) - 1.0) > 1e-9:
            _fail("splits", f"fractions must be positive and sum to 1, got {splits}")
        splits = tuple(splits)
    else:
        _fail("splits", "expected [train, val, test] fractions or \"test-only\"")
    gamma = _get(cfg, "gamma", 1000.0, path, (int, float), lambda v: v > 0)
    clip = _get(cfg, "clip", 100.0, path, (int, float), lambda v: v > 0)
    try:
        gen = GenConfig(
            epochs=epochs,
            n_satellites=n_sat,
            biased_fraction=float(biased),
            mixture=mixture,
            seed=seed,
            orbit_radius=float(orbit),
            min_elevation=math.radians(float(min_el)),
        )
    except ValueError as exc:
        raise CliError("invalid_config", str(exc)) from None
    return gen, splits, float(gamma), float(clip)


def parse_train_config(cfg: dict, seed_override: int | None = None):
    """Validated (TrainConfig, hidden_sizes, log_labels) from a config dict."""
    path = ""
    _reject_unknown(
        cfg,
        {
            "hidden_sizes",
            "pad_to",
            "learning_rate",
            "batch_size",
            "max_epochs",
            "patience",
            "seed",
            "log_labels",
            "mask_code",
            "adam_beta1",
            "adam_beta2",
            "adam_epsilon",
        },
        path,
    )
    hidden = cfg.get("hidden_sizes", [64])
    if (
        not isinstance(hidden, list)
        or not hidden
        or not all(isinstance(v, int) and not isinstance(v, bool) and v >= 1 for v in hidden)
    ):
        _fail("hidden_sizes", f"expected a non-empty list of positive ints, got {hidden!r}")
    seed = _get(cfg, "seed", 0, path, int)
    if seed_override is not None:
        seed = seed_override
    log_labels = _get(cfg, "log_labels", False, path, bool)
    try:
        tc = TrainConfig(
            learning_rate=_get(cfg, "learning_rate", 1e-3, path, (int, float)),
            adam_beta1=_get(cfg, "adam_beta1", 0.9, path, (int, float)),
            adam_beta2=_get(cfg, "adam_beta2", 0.999, path, (int, float)),
            adam_epsilon=_get(cfg, "adam_epsilon", 1e-8, path, (int, float)),
            batch_size=_get(cfg, "batch_size", 32, path, int),
            max_epochs=_get(cfg, "max_epochs", 100, path, int),
            patience=_get(cfg, "patience", 5, path, int),
            seed=seed,
            pad_to=_get(cfg, "pad_to", 60, path, int),
            mask_code=_get(cfg, "mask_code", 0.0, path, (int, float)),
        )
    except ValueError as exc:
        raise CliError("invalid_config", str(exc)) from None
    return tc, list(hidden), bool(log_labels)


def parse_eval_config(cfg: dict):
    path = ""
    _reject_unknown(cfg, {"strategies", "split", "fde", "sigma_coeffs"}, path)
    strategies = cfg.get("strategies", ["equal", "ground_truth", "genie", "predicted"])
    if not isinstance(strategies, list) or not strategies:
        _fail("strategies", "expected a non-empty list of strategy names")
    for s in strategies:
        if s not in STRATEGY_NAMES:
            _fail("strategies", f"unknown strategy {s!r} (known: {sorted(STRATEGY_NAMES)})")
    split = _get(cfg, "split", "test", path, str, lambda v: v in ("train", "val", "test"))
    fde_cfg = _get(cfg, "fde", {}, path, dict)
    _reject_unknown(fde_cfg, {"global_test_alpha", "max_exclusions", "min_satellites", "sigma"}, "fde.")
    sig_cfg = _get(cfg, "sigma_coeffs", {}, path, dict)
    _reject_unknown(sig_cfg, {"sigma2_z", "sigma2_cn0", "sigma2_accel"}, "sigma_coeffs.")
    try:
        fde = FdeConfig(
            global_test_alpha=_get(fde_cfg, "global_test_alpha", 0.01, "fde.", (int, float)),
            max_exclusions=_get(fde_cfg, "max_exclusions", None, "fde.", int),
            min_satellites=_get(fde_cfg, "min_satellites", 4, "fde.", int),
            sigma=_get(fde_cfg, "sigma", 3.0, "fde.", (int, float)),
        )
        coeffs = SigmaModelCoeffs(
            sigma2_z=_get(sig_cfg, "sigma2_z", 4.0, "sigma_coeffs.", (int, float)),
            sigma2_cn0=_get(sig_cfg, "sigma2_cn0", 2.5e3, "sigma_coeffs.", (int, float)),
            sigma2_accel=_get(sig_cfg, "sigma2_accel", 0.01, "sigma_coeffs.", (int, float)),
        )
        return EvalConfig(strategies=tuple(strategies), split=split, fde=fde, sigma_coeffs=coeffs)
    except ValueError as exc:
        raise CliError("invalid_config", str(exc)) from None


# --- manifests ---


def file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(
    path: str,
    command: str,
    config: dict,
    seeds: dict,
    inputs: list[str],
    outputs: list[str],
    wall_time: float,
    extra: dict | None = None,
) -> None:
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "tool_version": __version__,
        "config": config,
        "seeds": seeds,
        "inputs": {p: file_sha256(p) for p in inputs},
        "outputs": {p: file_sha256(p) for p in outputs},
        "wall_time_s": wall_time,
    }
    if extra:
        manifest.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _resolve_config(args, presets: dict, kind: str) -> dict:
    if args.config and args.preset:
        raise CliError("invalid_config", "pass either --config or --preset, not both")
    if args.config:
        return load_config_file(args.config)
    if args.preset:
        if args.preset not in presets:
            raise CliError(
                "invalid_config",
                f"unknown {kind} preset {args.preset!r} (known: {sorted(presets)})",
            )
        return dict(presets[args.preset])
    raise CliError("invalid_config", f"{kind} needs --config or --preset")


def _workers(args) -> int:
    if getattr(args, "deterministic", False):
        return 1
    return max(1, args.threads)


# --- commands ---


def cmd_gen(args) -> int:
    t0 = time.perf_counter()
    cfg = _resolve_config(args, GEN_PRESETS, "gen")
    gen, splits, gamma, clip = parse_gen_config(cfg, args.seed)
    dataset = build_dataset(gen, splits=splits, gamma=gamma, clip=clip, workers=_workers(args))
    try:
        save_dataset(dataset, args.out)
    except OSError as exc:
        raise CliError("io_error", f"cannot write dataset: {exc}") from None
    write_manifest(
        args.out + ".manifest.json",
        "gen",
        {**cfg, "seed": gen.seed},
        {"gen_seed": gen.seed},
        [],
        [args.out],
        time.perf_counter() - t0,
        extra={"deterministic": bool(args.deterministic), "workers": _workers(args)},
    )
    print(f"wrote {len(dataset.records)} epochs to {args.out}")
    return 0


def _load_dataset_checked(path: str) -> Dataset:
    try:
        return load_dataset(path)
    except OSError as exc:
        raise CliError("io_error", f"cannot read dataset {path}: {exc}") from None
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise CliError("data_error", f"bad dataset {path}: {exc}") from None


def _train_on_dataset(dataset: Dataset, cfg: dict, seed_override: int | None):
    """Shared gen-config-to-trained-model path for train and sweep --retrain."""
    tc, hidden_sizes, log_labels = parse_train_config(cfg, seed_override)
    train_recs = dataset.split("train")
    val_recs = dataset.split("val")
    if not train_recs or not val_recs:
        raise CliError("data_error", "dataset needs non-empty train and val splits")
    max_n = dataset.max_satellites()
    if tc.pad_to < max_n:
        raise CliError("invalid_config", f"pad_to {tc.pad_to} < dataset max satellites {max_n}")

    train_arrays = prepare_training_arrays(train_recs, tc.pad_to, dataset.clip, tc.mask_code, log_labels)
    val_arrays = prepare_training_arrays(val_recs, tc.pad_to, dataset.clip, tc.mask_code, log_labels)

    model = init_model(
        input_size=tc.pad_to,
        hidden_sizes=hidden_sizes,
        output_size=tc.pad_to,
        seed=tc.seed,
        clip=dataset.clip,
        mask_code=tc.mask_code,
        log_labels=log_labels,
    )
    try:
        model, log = train(model, train_arrays, val_arrays, tc)
    except TrainingDivergedError as exc:
        raise CliError("training_diverged", str(exc)) from None
    return model, log, tc


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    cfg = _resolve_config(args, TRAIN_PRESETS, "train")
    dataset = _load_dataset_checked(args.dataset)
    model, log, tc = _train_on_dataset(dataset, cfg, args.seed)

    try:
        save_model(model, args.out)
    except OSError as exc:
        raise CliError("io_error", f"cannot write model: {exc}") from None
    log_path = args.out + ".log.jsonl"
    with open(log_path, "w", encoding="utf-8") as fh:
        for entry in log:
            fh.write(json.dumps(entry) + "\n")
    write_manifest(
        args.out + ".manifest.json",
        "train",
        {**cfg, "seed": tc.seed},
        {"train_seed": tc.seed, "dataset_seed": dataset.config.seed},
        [args.dataset],
        [args.out],
        time.perf_counter() - t0,
        extra={
            "deterministic": bool(args.deterministic),
            "epochs_trained": len(log),
            "best_val_loss": min(e["val_loss"] for e in log),
            "log_file": log_path,
        },
    )
    print(f"trained {len(log)} epochs, best val loss {min(e['val_loss'] for e in log):.6g}")
    return 0


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    cfg = load_config_file(args.config) if args.config else {}
    if args.strategies:
        cfg["strategies"] = args.strategies.split(",")
    eval_cfg = parse_eval_config(cfg)
    dataset = _load_dataset_checked(args.dataset)
    model = None
    if "predicted" in eval_cfg.strategies:
        if not args.model:
            raise CliError("invalid_config", "strategy 'predicted' requires --model")
        try:
            model = load_model(args.model)
        except OSError as exc:
            raise CliError("io_error", f"cannot read model {args.model}: {exc}") from None

    os.makedirs(args.out, exist_ok=True)
    report = run_benchmark(dataset, model=model, config=eval_cfg, workers=_workers(args))

    errors_path = os.path.join(args.out, "errors.csv")
    write_error_records(report.records, errors_path)
    cdf_paths = write_cdf_files(report, args.out)
    summary_path = os.path.join(args.out, "summary.json")
    dataset_hash = file_sha256(args.dataset)
    write_summary(report, summary_path, extra_meta={"dataset_sha256": dataset_hash})
    write_manifest(
        os.path.join(args.out, "manifest.json"),
        "eval",
        {**cfg, "strategies": list(eval_cfg.strategies)},
        {"dataset_seed": dataset.config.seed},
        [args.dataset] + ([args.model] if args.model else []),
        [errors_path, summary_path] + cdf_paths,
        time.perf_counter() - t0,
        extra={"deterministic": bool(args.deterministic)},
    )
    for name in eval_cfg.strategies:
        s = report.summary(name, "horizontal")
        print(
            f"{name}: horizontal q95 {s.q95:.3f} m, availability {s.availability:.3f}"
        )
    return 0


def cmd_sweep(args) -> int:
    t0 = time.perf_counter()
    cfg = load_config_file(args.config) if args.config else {}
    _reject_unknown(cfg, {"gen", "fractions", "eval", "train", "epochs_per_fraction"}, "")
    fractions = cfg.get("fractions")
    if args.fractions:
        fractions = [float(v) for v in args.fractions.split(",")]
    if (
        not isinstance(fractions, list)
        or not fractions
        or not all(isinstance(v, (int, float)) and 0 <= v <= 1 for v in fractions)
    ):
        raise CliError("invalid_config", "sweep needs a list of biased fractions in [0, 1]")

    gen_cfg_dict = dict(cfg.get("gen", {}))
    gen_cfg_dict.setdefault("epochs", int(cfg.get("epochs_per_fraction", 2000)))
    eval_cfg = parse_eval_config(cfg.get("eval", {"strategies": ["equal", "predicted"]}))

    model = None
    if args.retrain:
        if args.model:
            raise CliError("invalid_config", "--retrain and --model are mutually exclusive")
        train_cfg_dict = cfg.get("train")
        if not isinstance(train_cfg_dict, dict):
            raise CliError("invalid_config", "--retrain needs a 'train' section in the sweep config")
        # per-fraction training needs train/val splits in the generated data
        gen_cfg_dict.setdefault("splits", [0.6, 0.2, 0.2])
    else:
        gen_cfg_dict["splits"] = "test-only"
        if args.model:
            try:
                model = load_model(args.model)
            except OSError as exc:
                raise CliError("io_error", f"cannot read model {args.model}: {exc}") from None
        elif "predicted" in eval_cfg.strategies:
            raise CliError(
                "invalid_config",
                "sweep with 'predicted' needs --model (one model reused across fractions) or --retrain",
            )

    os.makedirs(args.out, exist_ok=True)
    rows = []
    outputs = []
    for i, fraction in enumerate(fractions):
        frac_cfg = dict(gen_cfg_dict)
        frac_cfg["biased_fraction"] = float(fraction)
        frac_cfg["seed"] = int(frac_cfg.get("seed", 0)) + 7919 * i
        gen, splits, gamma, clip = parse_gen_config(frac_cfg, None)
        dataset = build_dataset(gen, splits=splits, gamma=gamma, clip=clip, workers=_workers(args))
        if args.retrain:
            model, _, _ = _train_on_dataset(dataset, dict(train_cfg_dict), args.seed)
        report = run_benchmark(dataset, model=model, config=eval_cfg, workers=_workers(args))
        for name in eval_cfg.strategies:
            hor = report.summary(name, "horizontal")
            ver = report.summary(name, "vertical")
            rows.append(
                {
                    "biased_fraction": fraction,
                    "strategy": name,
                    "horizontal_q95_m": hor.q95,
                    "vertical_q95_m": ver.q95,
                    "availability": hor.availability,
                }
            )

    sweep_path = os.path.join(args.out, "sweep.csv")
    with open(sweep_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(
            fh,
            fieldnames=["biased_fraction", "strategy", "horizontal_q95_m", "vertical_q95_m", "availability"],
        )
        writer.writeheader()
        for row in rows:
            writer.writerow(
                {k: repr(float(v)) if isinstance(v, float) else v for k, v in row.items()}
            )
    outputs.append(sweep_path)
    write_manifest(
        os.path.join(args.out, "manifest.json"),
        "sweep",
        {**cfg, "fractions": fractions},
        {"base_seed": int(gen_cfg_dict.get("seed", 0))},
        [args.model] if args.model else [],
        outputs,
        time.perf_counter() - t0,
        extra={"deterministic": bool(args.deterministic)},
    )
    print(f"wrote {len(rows)} sweep rows to {sweep_path}")
    return 0


def cmd_report(args) -> int:
    """Rebuild CDF files and the summary from a per-epoch error CSV."""
    t0 = time.perf_counter()
    try:
        with open(args.errors, "r", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            records = [
                ErrorRecord(
                    epoch_id=int(row["epoch_id"]),
                    strategy=row["strategy"],
                    horizontal_error=float(row["horizontal_error_m"]),
                    vertical_error=float(row["vertical_error_m"]),
                    solvable=bool(int(row["solvable"])),
                )
                for row in reader
            ]
    except OSError as exc:
        raise CliError("io_error", f"cannot read {args.errors}: {exc}") from None
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError("data_error", f"bad error records in {args.errors}: {exc}") from None
    if not records:
        raise CliError("data_error", f"{args.errors} holds no records")

    strategies = tuple(dict.fromkeys(r.strategy for r in records))
    summaries = summarize(records, strategies)
    from .report import BenchmarkReport

    report = BenchmarkReport(
        records=records,
        summaries=summaries,
        meta={"strategies": list(strategies), "source": args.errors, "quantile_method": "nearest-rank"},
    )
    os.makedirs(args.out, exist_ok=True)
    cdf_paths = write_cdf_files(report, args.out)
    summary_path = os.path.join(args.out, "summary.json")
    write_summary(report, summary_path)
    write_manifest(
        os.path.join(args.out, "manifest.json"),
        "report",
        {},
        {},
        [args.errors],
        [summary_path] + cdf_paths,
        time.perf_counter() - t0,
    )
    print(f"summarized {len(records)} records into {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="satweight",
        description="Single-epoch GNSS positioning benchmark: dataset generation, "
        "LSTM weight training, and strategy evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"satweight {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, preset_choices=None):
        p.add_argument("--config", help="JSON config file")
        if preset_choices is not None:
            p.add_argument("--preset", help=f"built-in config ({', '.join(sorted(preset_choices))})")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=1, help="worker processes")
        p.add_argument(
            "--deterministic",
            action="store_true",
            help="single-threaded bit-reproducible mode",
        )

    p = sub.add_parser("gen", help="generate a synthetic labeled dataset")
    common(p, GEN_PRESETS)
    p.add_argument("--out", required=True, help="output dataset file (.jsonl)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train the weight predictor on a dataset")
    common(p, TRAIN_PRESETS)
    p.add_argument("dataset", help="dataset file from 'gen'")
    p.add_argument("--out", required=True, help="output model file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="benchmark weighting strategies on a dataset")
    common(p)
    p.add_argument("dataset", help="dataset file from 'gen'")
    p.add_argument("--model", help="trained model file (needed for 'predicted')")
    p.add_argument("--strategies", help="comma-separated strategy names")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="evaluate across biased-satellite fractions")
    common(p)
    p.add_argument("--model", help="trained model reused across fractions")
    p.add_argument(
        "--retrain",
        action="store_true",
        help="train a fresh model per fraction (needs a 'train' config section)",
    )
    p.add_argument("--fractions", help="comma-separated biased fractions")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="recompute CDFs and summary from an errors.csv")
    common(p)
    p.add_argument("errors", help="errors.csv from 'eval'")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "preset"):
        args.preset = None
    try:
        return args.func(args)
    except CliError as exc:
        print(
            json.dumps({"error": {"category": exc.category, "message": str(exc)}}),
            file=sys.stderr,
        )
        return EXIT_CODES.get(exc.category, 1)
    except Exception as exc:  # pragma: no cover - defensive
        print(
            json.dumps({"error": {"category": "internal", "message": f"{type(exc).__name__}: {exc}"}}),
            file=sys.stderr,
        )
        return EXIT_CODES["internal"]


if __name__ == "__main__":
    sys.exit(main())
