"""Command-line surface for reproducible experiments.

Every command takes a strict JSON config plus file paths, writes its
outputs under --out together with a manifest (config hash, seed,
versions), exits 0 on success and nonzero with a machine-readable error
record on stderr otherwise. All randomness flows from the config's root
seed through named substreams.

The SIPB_THREADS environment variable caps worker parallelism; 0 selects
single-threaded deterministic mode. The current implementation runs
every command single-threaded regardless, which satisfies the cap.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__, distances, kflow, metrics, training
from .errors import ConfigError, RolloutDivergedError, SipbenchError
from .rng import substream_seed
from .samplers import FRAMEWORKS, SamplerSpec

_SCHEMA = {
    "seed": int,
    "dataset": {
        "n_traj": int,
        "n_frames": int,
        "grid_n": int,
        "domain_l": float,
        "nu": float,
        "b_conv": float,
        "lambda_drag": float,
        "k_force": int,
        "dt_solver": float,
        "save_every": int,
    },
    "train": {
        "framework": str,
        "epochs": int,
        "batch_size": int,
        "lr": float,
        "lr_decay": float,
        "weight_decay": float,
        "sigma": float,
        "antithetic": bool,
        "t_epsilon": float,
        "source_noise": float,
        "T": int,
        "beta_start": float,
        "beta_end": float,
        "edm_sigma_min": float,
        "edm_sigma_max": float,
        "edm_rho": float,
        "edm_logsigma_mean": float,
        "edm_logsigma_std": float,
        "width": int,
        "depth": int,
        "time_embed_dim": int,
        "val_fraction": float,
    },
    "sampler": {
        "framework": str,
        "steps": int,
        "eta": float,
        "sigma": float,
        "em_noise_scale": float,
        "tsm_trunc_step": int,
    },
    "metrics": list,
    "distances": {
        "heuristic": str,
        "epsilon": float,
        "folds": int,
        "n_proj": int,
    },
    "sweep": {
        "seeds": list,
        "metric": str,
    },
}


def _check_section(doc: dict, name: str, schema: dict, violations: list):
    for key, value in doc.items():
        if key not in schema:
            violations.append(f"{name}.{key}: unknown key")
            continue
        expected = schema[key]
        if expected is float:
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                violations.append(f"{name}.{key}: expected number, got {type(value).__name__}")
        elif expected is int:
            if not isinstance(value, int) or isinstance(value, bool):
                violations.append(f"{name}.{key}: expected integer, got {type(value).__name__}")
        elif expected is bool:
            if not isinstance(value, bool):
                violations.append(f"{name}.{key}: expected boolean, got {type(value).__name__}")
        elif expected is str:
            if not isinstance(value, str):
                violations.append(f"{name}.{key}: expected string, got {type(value).__name__}")
        elif expected is list:
            if not isinstance(value, list):
                violations.append(f"{name}.{key}: expected list, got {type(value).__name__}")


def validate_config(doc: dict) -> list:
    """Full validation pass; returns every violation found."""
    violations = []
    if not isinstance(doc, dict):
        return ["config root must be a JSON object"]
    if "seed" not in doc:
        violations.append("seed: required key missing")
    for key, value in doc.items():
        if key not in _SCHEMA:
            violations.append(f"{key}: unknown section")
            continue
        expected = _SCHEMA[key]
        if isinstance(expected, dict):
            if not isinstance(value, dict):
                violations.append(f"{key}: expected object, got {type(value).__name__}")
            else:
                _check_section(value, key, expected, violations)
        elif expected is int:
            if not isinstance(value, int) or isinstance(value, bool):
                violations.append(f"{key}: expected integer, got {type(value).__name__}")
        elif expected is list:
            if not isinstance(value, list):
                violations.append(f"{key}: expected list, got {type(value).__name__}")
    return violations


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    doc = json.loads(path.read_text())
    violations = validate_config(doc)
    if violations:
        raise ConfigError(violations)
    return doc


def _require_section(doc: dict, name: str) -> dict:
    if name not in doc:
        raise ConfigError([f"{name}: required section missing"])
    return doc[name]


def config_hash(doc: dict) -> str:
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _threads() -> int:
    raw = os.environ.get("SIPB_THREADS", "0")
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError([f"SIPB_THREADS: expected integer, got {raw!r}"])
    if value < 0:
        raise ConfigError([f"SIPB_THREADS: must be >= 0, got {value}"])
    return value


def write_manifest(out_dir: Path, command: str, doc: dict, inputs: dict) -> None:
    manifest = {
        "command": command,
        "config_sha256": config_hash(doc),
        "seed": doc.get("seed"),
        "threads": _threads(),
        "inputs": {k: str(v) for k, v in inputs.items()},
        "versions": {
            "python": ".".join(str(v) for v in sys.version_info[:3]),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "sipbench": __version__,
        },
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _dataset_objects(doc: dict):
    section = _require_section(doc, "dataset")
    grid = kflow.GridSpec(n=section.get("grid_n", 32), L=section.get("domain_l", 20.0))
    cfg = kflow.SolverConfig(
        nu=section.get("nu", 1e-2),
        b_conv=section.get("b_conv", 0.2),
        lambda_drag=section.get("lambda_drag", -0.2),
        k_force=section.get("k_force", 4),
        dt_solver=section.get("dt_solver", 0.02),
        save_every=section.get("save_every", 10),
        n_frames=section.get("n_frames", 100),
    )
    return section.get("n_traj", 10), grid, cfg


def _train_config(doc: dict, seed=None, sigma=None) -> training.TrainConfig:
    section = _require_section(doc, "train")
    kwargs = dict(section)
    kwargs["seed"] = doc["seed"] if seed is None else seed
    if sigma is not None:
        kwargs["sigma"] = sigma
    return training.TrainConfig(**kwargs)


def _sampler_spec(doc: dict, seed=None, steps=None) -> SamplerSpec:
    section = _require_section(doc, "sampler")
    framework = section.get("framework", "SI-E")
    if framework not in FRAMEWORKS:
        raise ConfigError([f"sampler.framework: unknown framework {framework!r}"])
    return SamplerSpec(
        framework=framework,
        steps=steps if steps is not None else section.get("steps", 1),
        eta=section.get("eta", 0.0),
        sigma=section.get("sigma", 1.0),
        seed=doc["seed"] if seed is None else seed,
        em_noise_scale=section.get("em_noise_scale", 1.0),
        tsm_trunc_step=section.get("tsm_trunc_step"),
    )


def _require_file(path, flag: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{flag}: file not found: {path}")
    return path


def cmd_gen_data(doc: dict, out_dir: Path) -> None:
    n_traj, grid, cfg = _dataset_objects(doc)
    ds = kflow.generate_dataset(n_traj, grid, cfg, base_seed=doc["seed"])
    kflow.save_dataset(ds, out_dir / "dataset.sipb")
    summary = {"n_traj": ds.n_traj, "n_frames": ds.n_frames, "failed": list(ds.failed)}
    with open(out_dir / "generation.json", "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")


def cmd_train(doc: dict, data: Path, out_dir: Path) -> None:
    ds = kflow.load_dataset(_require_file(data, "--data"))
    cfg = _train_config(doc)
    model = training.train(ds, cfg)
    training.save_model(out_dir / "checkpoint.sipb", model)
    with open(out_dir / "history.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "loss"])
        for epoch, loss in enumerate(model.loss_history):
            writer.writerow([epoch, repr(loss)])


def cmd_rollout(doc: dict, ckpt: Path, data: Path, out_dir: Path) -> None:
    model = training.load_model(_require_file(ckpt, "--ckpt"))
    ds = kflow.load_dataset(_require_file(data, "--data"))
    spec = _sampler_spec(doc)
    horizon = ds.n_frames - 1
    preds = np.zeros_like(ds.frames)
    chunk = 20  # bound the float64 working set on large datasets
    for start in range(0, ds.n_traj, chunk):
        block = np.asarray(ds.frames[start : start + chunk, 0], dtype=float)
        rolled = training.rollout_model(model, spec, block, horizon)
        preds[start : start + chunk] = np.moveaxis(rolled, 0, 1).astype(np.float32)
    out = kflow.Dataset(
        frames=preds,
        grid=ds.grid,
        config=ds.config,
        base_seed=ds.base_seed,
        failed=ds.failed,
    )
    kflow.save_dataset(out, out_dir / "predictions.sipb")


def cmd_evaluate(doc: dict, pred: Path, truth: Path, out_dir: Path) -> None:
    pred_ds = kflow.load_dataset(_require_file(pred, "--pred"))
    truth_ds = kflow.load_dataset(_require_file(truth, "--truth"))
    if pred_ds.frames.shape != truth_ds.frames.shape:
        raise SipbenchError(
            f"prediction shape {pred_ds.frames.shape} does not match truth shape {truth_ds.frames.shape}"
        )
    names = doc.get("metrics", ["vrmse", "nrmse", "srmse_low", "srmse_mid", "srmse_high"])
    unknown = [m for m in names if m not in training.METRIC_NAMES]
    if not names or unknown:
        raise ConfigError([f"metrics: empty or unknown entries {unknown}"])
    p = np.asarray(pred_ds.frames, dtype=float)[:, 1:]
    o = np.asarray(truth_ds.frames, dtype=float)[:, 1:]
    series_acc = {name: [] for name in names}
    per_traj = {name: [] for name in names}
    for i in range(p.shape[0]):
        band = None
        if any(name.startswith("srmse") for name in names):
            band = metrics.srmse_band_series(p[i], o[i])
        for name in names:
            if name == "vrmse":
                series = metrics.vrmse_series(p[i], o[i])
            elif name == "nrmse":
                series = metrics.nrmse_series(p[i], o[i])
            else:
                series = band[training.BAND_INDEX[name]]
            series_acc[name].append(series)
            per_traj[name].append(float(series.mean()))
    series = {name: np.mean(series_acc[name], axis=0) for name in names}
    summary = {
        name: {"mean": float(np.mean(per_traj[name])), "std": float(np.std(per_traj[name]))}
        for name in names
    }
    metrics.write_metric_csv(series, out_dir / "metrics.csv")
    metrics.write_metric_summary(summary, out_dir / "metrics.json")


def cmd_distances(doc: dict, data: Path, out_dir: Path) -> None:
    ds = kflow.load_dataset(_require_file(data, "--data"))
    section = _require_section(doc, "distances")
    heuristic = section.get("heuristic", "sw")
    if heuristic not in distances.HEURISTICS:
        raise ConfigError([f"distances.heuristic: unknown heuristic {heuristic!r}"])
    curves = distances.distance_curves(
        np.asarray(ds.frames, dtype=float),
        heuristic,
        epsilon=section.get("epsilon", 0.2),
        seed=doc["seed"],
        folds=section.get("folds", 5),
        n_proj=section.get("n_proj", 128),
    )
    distances.write_distance_csv(curves, out_dir / "distance_curves.csv")


def cmd_sweep(doc: dict, data: Path, out_dir: Path, axis: str, values: list) -> None:
    """Sweep sampler steps or process noise scale; one CSV row per value,
    sorted ascending, with mean/std of the chosen metric across seeds."""
    ds = kflow.load_dataset(_require_file(data, "--data"))
    sweep = doc.get("sweep", {})
    seeds = sweep.get("seeds", [0, 1, 2])
    metric = sweep.get("metric", "nrmse")
    if metric not in training.METRIC_NAMES:
        raise ConfigError([f"sweep.metric: unknown metric {metric!r}"])
    values = sorted(values)
    results = {v: [] for v in values}

    def score(model, spec):
        # diverged rollouts are a reportable outcome, not a crash
        try:
            report = training.evaluate(model, ds, spec, [metric])
            return report["summary"][metric]["mean"]
        except RolloutDivergedError:
            return float("inf")

    if axis == "steps":
        for seed in seeds:
            model = training.train(ds, _train_config(doc, seed=substream_seed(doc["seed"], "train", seed)))
            for v in values:
                spec = _sampler_spec(doc, seed=substream_seed(doc["seed"], "sample", seed), steps=int(v))
                results[v].append(score(model, spec))
    elif axis == "sigma":
        for v in values:
            for seed in seeds:
                cfg = _train_config(doc, seed=substream_seed(doc["seed"], "train", seed, str(v)), sigma=float(v))
                model = training.train(ds, cfg)
                spec = _sampler_spec(doc, seed=substream_seed(doc["seed"], "sample", seed, str(v)))
                results[v].append(score(model, spec))
    else:
        raise ConfigError([f"--axis: expected 'steps' or 'sigma', got {axis!r}"])
    with open(out_dir / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["axis", "value", "n_seeds", f"{metric}_mean", f"{metric}_std"])
        for v in values:
            vals = np.asarray(results[v])
            writer.writerow([axis, v, len(seeds), repr(float(vals.mean())), repr(float(vals.std()))])
    with open(out_dir / "sweep.json", "w") as fh:
        serialisable = {
            str(v): [x if np.isfinite(x) else "diverged" for x in results[v]] for v in values
        }
        json.dump(
            {"axis": axis, "metric": metric, "seeds": seeds, "results": serialisable},
            fh,
            sort_keys=True,
            indent=2,
        )
        fh.write("\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sipbench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, **flags):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", required=True)
        for flag, required in flags.items():
            p.add_argument(flag, required=required)
        return p

    add("gen-data")
    add("train", **{"--data": True})
    add("rollout", **{"--ckpt": True, "--data": True})
    add("evaluate", **{"--pred": True, "--truth": True})
    add("distances", **{"--data": True})
    sweep = add("sweep", **{"--data": True})
    sweep.add_argument("--axis", required=True, choices=["steps", "sigma"])
    sweep.add_argument("--values", required=True, nargs="+", type=float)
    return parser


def _error_record(exc: Exception) -> dict:
    record = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigError):
        record["violations"] = exc.violations
    return record


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        doc = load_config(args.config)
        _threads()
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        inputs = {"config": args.config}
        if args.command == "gen-data":
            cmd_gen_data(doc, out_dir)
        elif args.command == "train":
            inputs["data"] = args.data
            cmd_train(doc, args.data, out_dir)
        elif args.command == "rollout":
            inputs.update({"ckpt": args.ckpt, "data": args.data})
            cmd_rollout(doc, args.ckpt, args.data, out_dir)
        elif args.command == "evaluate":
            inputs.update({"pred": args.pred, "truth": args.truth})
            cmd_evaluate(doc, args.pred, args.truth, out_dir)
        elif args.command == "distances":
            inputs["data"] = args.data
            cmd_distances(doc, args.data, out_dir)
        elif args.command == "sweep":
            inputs["data"] = args.data
            cmd_sweep(doc, args.data, out_dir, args.axis, list(args.values))
        write_manifest(out_dir, args.command, doc, inputs)
    except ConfigError as exc:
        print(json.dumps(_error_record(exc), sort_keys=True), file=sys.stderr)
        return 2
    except (SipbenchError, FileNotFoundError, OSError, ValueError) as exc:
        print(json.dumps(_error_record(exc), sort_keys=True), file=sys.stderr)
        return 1
    return 0


def main_entry() -> None:
    raise SystemExit(main())
