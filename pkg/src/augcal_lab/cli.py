"""Command-line surface: dataset generation, training, standalone evaluation,
MMD eligibility checks, bound verification, and the calibration-weight sweep.

Configs are strict JSON (unknown fields are rejected and named); every output
artifact embeds {schema_version, config_hash, seed, tool_version} and contains
no timestamps, so a rerun with the same config is byte-identical. Exit codes:
0 success, 2 usage/config error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .numerics import Rng
from .data import (SpectralShiftConfig, GaussianShiftConfig,
                   generate_spectral_shift, generate_gaussian_shift,
                   save_dataset, load_dataset, DatasetFormatError)
from .augment import PastaConfig, RandAugConfig, augment_batch
from .losses import ObjectiveConfig
from .model import (TrainConfig, train, predict, save_checkpoint,
                    TrainingDiverged)
from .analysis import (records_from_probs, report, load_predictions,
                       save_predictions, PredictionsFormatError, mmd2_rbf,
                       median_bandwidth, renyi_d2, verify_bound,
                       BoundDivergenceError, DEFAULT_BINS)

SCHEMA_VERSION = 1
EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# strict config parsing
# ---------------------------------------------------------------------------

def _reject_unknown(obj: dict, allowed, where: str) -> None:
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown field {where}{unknown[0]!r}")


def _load_json(path: Path) -> dict:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from None
    if not isinstance(obj, dict):
        raise ConfigError("config root must be a JSON object")
    return obj


def _parse_objective(obj: dict) -> ObjectiveConfig:
    allowed = {"lambda_uda", "lambda_cal", "cal_choice", "uda_choice",
               "mbls_margin", "selftrain_threshold", "ema_alpha",
               "selftrain_warmup"}
    _reject_unknown(obj, allowed, "objective.")
    try:
        return ObjectiveConfig(
            lambda_uda=float(obj.get("lambda_uda", 0.01)),
            lambda_cal=(None if obj.get("lambda_cal") is None
                        else float(obj["lambda_cal"])),
            cal_choice=str(obj.get("cal_choice", "dca")),
            uda_choice=str(obj.get("uda_choice", "entmin")),
            mbls_margin=float(obj.get("mbls_margin", 10.0)),
            selftrain_threshold=float(obj.get("selftrain_threshold", 0.9)),
            ema_alpha=float(obj.get("ema_alpha", 0.999)),
            selftrain_warmup=int(obj.get("selftrain_warmup", 100)),
        )
    except ValueError as exc:
        raise ConfigError(f"objective: {exc}") from None


def _parse_augment(obj: dict):
    _reject_unknown(obj, {"choice", "pasta", "randaugment"}, "augment.")
    choice = str(obj.get("choice", "none"))
    p = obj.get("pasta", {})
    _reject_unknown(p, {"alpha", "beta", "k"}, "augment.pasta.")
    r = obj.get("randaugment", {})
    _reject_unknown(r, {"magnitude", "num_ops"}, "augment.randaugment.")
    pasta_cfg = PastaConfig(alpha=float(p.get("alpha", 3.0)),
                            beta=float(p.get("beta", 0.25)),
                            k=float(p.get("k", 2.0)))
    ra_cfg = RandAugConfig(magnitude=int(r.get("magnitude", 30)),
                           num_ops=int(r.get("num_ops", 8)))
    return choice, pasta_cfg, ra_cfg


def _parse_train_section(obj: dict, seed: int, objective: ObjectiveConfig,
                         aug) -> TrainConfig:
    allowed = {"hidden_sizes", "steps", "batch_size", "learning_rate",
               "momentum", "eval_every", "eval_subset"}
    _reject_unknown(obj, allowed, "train.")
    choice, pasta_cfg, ra_cfg = aug
    try:
        return TrainConfig(
            hidden_sizes=tuple(int(h) for h in obj.get("hidden_sizes", [64])),
            steps=int(obj.get("steps", 2000)),
            batch_size=int(obj.get("batch_size", 64)),
            learning_rate=float(obj.get("learning_rate", 0.05)),
            momentum=float(obj.get("momentum", 0.9)),
            seed=seed,
            objective=objective,
            aug_choice=choice,
            pasta=pasta_cfg,
            randaugment=ra_cfg,
            eval_every=int(obj.get("eval_every", 200)),
            eval_subset=int(obj.get("eval_subset", 512)),
        )
    except ValueError as exc:
        raise ConfigError(f"train: {exc}") from None


def parse_run_config(raw: dict) -> dict:
    """Validate a training run config and return its normalized form (used
    verbatim for echoing and hashing)."""
    allowed = {"schema_version", "seed", "source", "target", "train",
               "objective", "augment", "bins"}
    _reject_unknown(raw, allowed, "")
    if int(raw.get("schema_version", SCHEMA_VERSION)) != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {raw['schema_version']}")
    for key in ("source", "target"):
        if key not in raw or not isinstance(raw[key], str):
            raise ConfigError(f"missing dataset path field {key!r}")
    seed = int(raw.get("seed", 0))
    objective = _parse_objective(raw.get("objective", {}))
    aug = _parse_augment(raw.get("augment", {}))
    tc = _parse_train_section(raw.get("train", {}), seed, objective, aug)
    bins = int(raw.get("bins", DEFAULT_BINS))
    if bins < 1:
        raise ConfigError("bins must be >= 1")
    choice, pasta_cfg, ra_cfg = aug
    normalized = {
        "schema_version": SCHEMA_VERSION,
        "seed": seed,
        "source": raw["source"],
        "target": raw["target"],
        "train": {
            "hidden_sizes": list(tc.hidden_sizes),
            "steps": tc.steps, "batch_size": tc.batch_size,
            "learning_rate": tc.learning_rate, "momentum": tc.momentum,
            "eval_every": tc.eval_every, "eval_subset": tc.eval_subset,
        },
        "objective": {
            "lambda_uda": objective.lambda_uda,
            "lambda_cal": objective.lambda_cal,
            "cal_choice": objective.cal_choice,
            "uda_choice": objective.uda_choice,
            "mbls_margin": objective.mbls_margin,
            "selftrain_threshold": objective.selftrain_threshold,
            "ema_alpha": objective.ema_alpha,
            "selftrain_warmup": objective.selftrain_warmup,
        },
        "augment": {
            "choice": choice,
            "pasta": {"alpha": pasta_cfg.alpha, "beta": pasta_cfg.beta,
                      "k": pasta_cfg.k},
            "randaugment": {"magnitude": ra_cfg.magnitude,
                            "num_ops": ra_cfg.num_ops},
        },
        "bins": bins,
    }
    return normalized


def config_hash(normalized: dict) -> str:
    canonical = json.dumps(normalized, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _meta(cfg_hash: str, seed) -> dict:
    return {"schema_version": SCHEMA_VERSION, "config_hash": cfg_hash,
            "seed": seed, "tool_version": __version__}


def _write_json(path: Path, obj: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def _meta_comment(meta: dict) -> str:
    fields = " ".join(f"{k}={meta[k]}" for k in
                      ("schema_version", "config_hash", "seed", "tool_version"))
    return f"# {fields}\n"


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)   # shortest exact round-trip form
    return str(value)


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    out = Path(args.out)
    try:
        if args.kind == "spectral-shift":
            lo, hi = (float(tok) for tok in args.amplitude_range.split(","))
            cfg = SpectralShiftConfig(
                n_per_domain=args.n_per_domain, image_size=args.image_size,
                num_classes=args.num_classes, seed=args.seed,
                amplitude_range=(lo, hi), base_frequency=args.base_frequency,
                noise_sigma=args.noise_sigma, highfreq_scale=args.highfreq_scale,
                brightness=args.brightness, contrast=args.contrast)
            source, target = generate_spectral_shift(cfg)
        else:
            cfg = GaussianShiftConfig(
                n_per_domain=args.n_per_domain, dim=args.dim,
                mean_shift=args.mean_shift, seed=args.seed)
            source, target, _ = generate_gaussian_shift(cfg)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    save_dataset(source, out / "source")
    save_dataset(target, out / "target")
    print(json.dumps({"source": str(out / "source"),
                      "target": str(out / "target")}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# train (also the sweep's per-lambda unit)
# ---------------------------------------------------------------------------

def run_training(normalized: dict, config_dir: Path, out_dir: Path,
                 render_figures: bool = True) -> dict:
    """Execute one training run from a normalized config; returns the report
    dict that was written to report.json. Raises TrainingDiverged on NaNs."""
    source = load_dataset(_resolve(config_dir, normalized["source"]))
    target = load_dataset(_resolve(config_dir, normalized["target"]))
    objective = ObjectiveConfig(**normalized["objective"])
    aug = normalized["augment"]
    cfg = TrainConfig(
        hidden_sizes=tuple(normalized["train"]["hidden_sizes"]),
        steps=normalized["train"]["steps"],
        batch_size=normalized["train"]["batch_size"],
        learning_rate=normalized["train"]["learning_rate"],
        momentum=normalized["train"]["momentum"],
        seed=normalized["seed"],
        objective=objective,
        aug_choice=aug["choice"],
        pasta=PastaConfig(**aug["pasta"]),
        randaugment=RandAugConfig(**aug["randaugment"]),
        eval_every=normalized["train"]["eval_every"],
        eval_subset=normalized["train"]["eval_subset"],
    )

    warnings = []
    if objective.lambda_cal == 0 and objective.cal_choice != "none":
        warnings.append(
            f"cal term is inert: lambda_cal=0 with cal_choice="
            f"{objective.cal_choice!r}")
    if objective.lambda_uda == 0 and objective.uda_choice != "none":
        warnings.append(
            f"uda term is inert: lambda_uda=0 with uda_choice="
            f"{objective.uda_choice!r}")
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)

    result = train(source, target.features_only(), cfg)

    out_dir.mkdir(parents=True, exist_ok=True)
    cfg_hash = config_hash(normalized)
    meta = _meta(cfg_hash, normalized["seed"])
    save_checkpoint(result.params, out_dir / "checkpoint",
                    extra={"seed": normalized["seed"],
                           "step": result.final_step,
                           "config_hash": cfg_hash,
                           "schema_version": SCHEMA_VERSION,
                           "tool_version": __version__})

    history_path = out_dir / "history.csv"
    cols = ["step", "total", "ce", "uda", "cal",
            "source_eval_accuracy", "source_eval_nll"]
    with history_path.open("w", encoding="utf-8") as fh:
        fh.write(_meta_comment(meta))
        fh.write(",".join(cols) + "\n")
        for row in result.history:
            fh.write(",".join(_fmt(row[c]) for c in cols) + "\n")

    _, probs, _, _ = predict(result.params, target.features_flat())
    records = records_from_probs(probs, target.labels)
    save_predictions(records, out_dir / "preds.csv")
    rep = report(records, num_bins=normalized["bins"])

    payload = {"meta": meta, "config": normalized, "warnings": warnings}
    payload.update(rep.to_dict())
    _write_json(out_dir / "report.json", payload)

    if render_figures:
        from . import figures
        figures.reliability_diagram(rep.bins, out_dir / "reliability.png",
                                    title="Target reliability")
        figures.rejection_plot(records, out_dir / "rejection.png",
                               title="Target error vs. rejection")
        figures.history_plot(result.history, out_dir / "history.png")
    return payload


def _resolve(config_dir: Path, path_str: str) -> Path:
    p = Path(path_str)
    return p if p.is_absolute() else config_dir / p


def cmd_train(args) -> int:
    try:
        normalized = parse_run_config(_load_json(Path(args.config)))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        run_training(normalized, Path(args.config).parent, Path(args.out),
                     render_figures=not args.no_figures)
    except (DatasetFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def cmd_eval(args) -> int:
    try:
        records = load_predictions(Path(args.preds))
    except (PredictionsFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.bins < 1:
        print("error: bins must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    rep = report(records, num_bins=args.bins)
    normalized = {"command": "eval", "bins": args.bins}
    payload = {"meta": _meta(config_hash(normalized), None),
               "config": normalized, "warnings": []}
    payload.update(rep.to_dict())
    out = Path(args.out)
    _write_json(out, payload)
    if not args.no_figures:
        from . import figures
        figures.reliability_diagram(rep.bins, out.parent / "reliability.png")
        figures.rejection_plot(records, out.parent / "rejection.png")
    return EXIT_OK


# ---------------------------------------------------------------------------
# mmd
# ---------------------------------------------------------------------------

def cmd_mmd(args) -> int:
    try:
        ds_a = load_dataset(Path(args.a))
        ds_b = load_dataset(Path(args.b))
    except (DatasetFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if ds_a.feature_dim != ds_b.feature_dim:
        print(f"error: feature dims differ: {ds_a.feature_dim} vs "
              f"{ds_b.feature_dim}", file=sys.stderr)
        return EXIT_USAGE

    feats_a = ds_a.features
    if args.aug is not None:
        if ds_a.kind != "image":
            print("error: augmentation requires image datasets", file=sys.stderr)
            return EXIT_USAGE
        cfg = PastaConfig() if args.aug == "pasta" else RandAugConfig()
        feats_a = augment_batch(feats_a, args.aug, cfg, Rng(args.seed, "mmd-aug"))

    a = feats_a.reshape(ds_a.n, -1)
    b = ds_b.features_flat()
    if args.checkpoint is not None:
        # trained-representation parity: compare hidden activations instead
        # of raw features
        from .model import load_checkpoint, hidden_features
        try:
            params, _ = load_checkpoint(Path(args.checkpoint))
        except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
            print(f"error: cannot load checkpoint: {exc}", file=sys.stderr)
            return EXIT_USAGE
        if params.layer_sizes[0] != a.shape[1]:
            print(f"error: checkpoint input dim {params.layer_sizes[0]} does "
                  f"not match feature dim {a.shape[1]}", file=sys.stderr)
            return EXIT_USAGE
        a = hidden_features(params, a)
        b = hidden_features(params, b)
    bandwidth = median_bandwidth(a, b, seed=args.seed)
    value = mmd2_rbf(a, b, bandwidth=bandwidth) if bandwidth > 0 else 0.0
    normalized = {"command": "mmd", "a": args.a, "b": args.b,
                  "aug": args.aug, "seed": args.seed,
                  "checkpoint": args.checkpoint}
    print(json.dumps({"mmd2": value, "bandwidth": bandwidth,
                      "n": ds_a.n, "m": ds_b.n,
                      "meta": _meta(config_hash(normalized), args.seed)}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# bound
# ---------------------------------------------------------------------------

def parse_bound_config(raw: dict) -> dict:
    allowed = {"schema_version", "seed", "generator", "train", "objective",
               "bound"}
    _reject_unknown(raw, allowed, "")
    gen = raw.get("generator", {})
    _reject_unknown(gen, {"kind", "n_per_domain", "dim", "mean_shift"},
                    "generator.")
    kind = gen.get("kind", "gauss-shift")
    if kind != "gauss-shift":
        raise ConfigError(
            f"bound verification needs analytic densities; generator kind "
            f"{kind!r} has none (use kind 'gauss-shift')")
    seed = int(raw.get("seed", 0))
    objective = _parse_objective(raw.get("objective", {"uda_choice": "none",
                                                       "cal_choice": "none"}))
    aug = ("none", PastaConfig(), RandAugConfig())
    tc = _parse_train_section(raw.get("train", {}), seed, objective, aug)
    bound = raw.get("bound", {})
    _reject_unknown(bound, {"aug_choice"}, "bound.")
    aug_choice = str(bound.get("aug_choice", "mean-shift"))
    if aug_choice not in ("none", "mean-shift"):
        raise ConfigError(f"bound.aug_choice must be none or mean-shift")
    normalized = {
        "schema_version": SCHEMA_VERSION,
        "seed": seed,
        "generator": {"kind": "gauss-shift",
                      "n_per_domain": int(gen.get("n_per_domain", 2000)),
                      "dim": int(gen.get("dim", 2)),
                      "mean_shift": float(gen.get("mean_shift", 1.0))},
        "train": {"hidden_sizes": list(tc.hidden_sizes), "steps": tc.steps,
                  "batch_size": tc.batch_size,
                  "learning_rate": tc.learning_rate, "momentum": tc.momentum,
                  "eval_every": tc.eval_every, "eval_subset": tc.eval_subset},
        "objective": {
            "lambda_uda": objective.lambda_uda,
            "lambda_cal": objective.lambda_cal,
            "cal_choice": objective.cal_choice,
            "uda_choice": objective.uda_choice,
            "mbls_margin": objective.mbls_margin,
            "selftrain_threshold": objective.selftrain_threshold,
            "ema_alpha": objective.ema_alpha,
            "selftrain_warmup": objective.selftrain_warmup,
        },
        "bound": {"aug_choice": aug_choice},
    }
    return normalized


def cmd_bound(args) -> int:
    try:
        normalized = parse_bound_config(_load_json(Path(args.config)))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.n_mc < 2:
        print("error: n-mc must be >= 2", file=sys.stderr)
        return EXIT_USAGE

    gen = normalized["generator"]
    gcfg = GaussianShiftConfig(n_per_domain=gen["n_per_domain"],
                               dim=gen["dim"], mean_shift=gen["mean_shift"],
                               seed=normalized["seed"])
    source, target, densities = generate_gaussian_shift(gcfg)

    objective = ObjectiveConfig(**normalized["objective"])
    tcfg = TrainConfig(
        hidden_sizes=tuple(normalized["train"]["hidden_sizes"]),
        steps=normalized["train"]["steps"],
        batch_size=normalized["train"]["batch_size"],
        learning_rate=normalized["train"]["learning_rate"],
        momentum=normalized["train"]["momentum"],
        seed=normalized["seed"], objective=objective, aug_choice="none",
        eval_every=normalized["train"]["eval_every"],
        eval_subset=normalized["train"]["eval_subset"])
    try:
        result = train(source, target.features_only(), tcfg)
    except TrainingDiverged as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    def predict_fn(x):
        _, _, pred, conf = predict(result.params, x)
        return pred, conf

    try:
        bound = verify_bound(predict_fn, densities, source, target,
                             aug_choice=normalized["bound"]["aug_choice"],
                             n_mc=args.n_mc, seed=normalized["seed"])
    except BoundDivergenceError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    payload = {"meta": _meta(config_hash(normalized), normalized["seed"]),
               "config": normalized,
               "divergence_d2_quadrature": renyi_d2(densities)}
    payload.update(bound.to_dict())
    out = Path(args.out)
    _write_json(out, payload)
    if not args.no_figures:
        from . import figures
        figures.bound_plot(bound, out.parent / "bound_terms.png")
    print(json.dumps({"bound_flag": bound.bound_flag,
                      "aug_flag": bound.aug_flag}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def _with_lambda(normalized: dict, lam: float) -> dict:
    out = json.loads(json.dumps(normalized))
    out["objective"]["lambda_cal"] = float(lam)
    return out


def _sweep_worker(task):
    normalized, config_dir, out_dir, render = task
    try:
        payload = run_training(normalized, Path(config_dir), Path(out_dir),
                               render_figures=render)
        return {"ok": True, "payload": payload}
    except Exception as exc:  # recorded, sweep continues
        return {"ok": False, "error": f"{type(exc).__name__}: {exc}"}


def cmd_sweep(args) -> int:
    try:
        normalized = parse_run_config(_load_json(Path(args.config)))
        lambdas = [float(tok) for tok in args.lambda_cal.split(",") if tok]
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if not lambdas:
        print("error: --lambda-cal needs at least one value", file=sys.stderr)
        return EXIT_USAGE

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config_dir = Path(args.config).parent
    render = not args.no_figures

    tasks = []
    for lam in lambdas:
        sub = out_dir / f"lambda_{lam:g}"
        tasks.append((_with_lambda(normalized, lam), str(config_dir),
                      str(sub), render))

    threads = max(1, int(os.environ.get("AUGCAL_LAB_THREADS", "1")))
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_sweep_worker, tasks))
    else:
        results = [_sweep_worker(t) for t in tasks]

    rows, failures = [], {}
    for lam, res in zip(lambdas, results):
        if res["ok"]:
            p = res["payload"]
            rows.append({"lambda_cal": lam, "accuracy": p["accuracy"],
                         "ece": p["ece"], "ic_ece": p["ic_ece"],
                         "oc": p["oc"], "prr": p["prr"]})
        else:
            failures[f"{lam:g}"] = res["error"]
            print(f"warning: lambda_cal={lam:g} failed: {res['error']}",
                  file=sys.stderr)

    meta = _meta(config_hash(normalized), normalized["seed"])
    cols = ["lambda_cal", "accuracy", "ece", "ic_ece", "oc", "prr"]
    with (out_dir / "summary.csv").open("w", encoding="utf-8") as fh:
        fh.write(_meta_comment(meta))
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[c]) for c in cols) + "\n")
    if failures:
        _write_json(out_dir / "failures.json", {"meta": meta,
                                                "failures": failures})
    if render and rows:
        from . import figures
        figures.sweep_plot(rows, out_dir / "sweep.png")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="augcal-lab",
        description="Calibration-aware source/target adaptation lab")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic shift benchmark")
    p.add_argument("--kind", required=True,
                   choices=["spectral-shift", "gauss-shift"])
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-per-domain", type=int, default=500)
    p.add_argument("--image-size", type=int, default=32)
    p.add_argument("--num-classes", type=int, default=4)
    p.add_argument("--amplitude-range", default="0.1,0.5",
                   help="per-sample grating amplitude bounds: lo,hi")
    p.add_argument("--base-frequency", type=float, default=9.0)
    p.add_argument("--noise-sigma", type=float, default=0.05)
    p.add_argument("--highfreq-scale", type=float, default=0.5)
    p.add_argument("--brightness", type=float, default=0.1)
    p.add_argument("--contrast", type=float, default=0.9)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--mean-shift", type=float, default=1.0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model and report target metrics")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a predictions CSV")
    p.add_argument("--preds", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bins", type=int, default=DEFAULT_BINS)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("mmd", help="RBF-MMD^2 between two datasets")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--aug", choices=["pasta", "randaugment"], default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint", default=None,
                   help="compare hidden activations of this trained model "
                        "instead of raw features")
    p.set_defaults(func=cmd_mmd)

    p = sub.add_parser("bound", help="Monte-Carlo check of the calibration bound")
    p.add_argument("--config", required=True)
    p.add_argument("--n-mc", type=int, default=100_000)
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("sweep", help="train once per calibration weight")
    p.add_argument("--config", required=True)
    p.add_argument("--lambda-cal", required=True,
                   help="comma-separated weights, e.g. 0.1,0.5,1,5,10,20,100")
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
