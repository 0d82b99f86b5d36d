"""Orchestration for the service and CLI: training runs, evaluation,
multi-seed experiments, grid search, forecasting and benchmarks.

Every job takes plain config data and an output directory and returns a
JSON-serializable summary naming the files it wrote.
"""

from __future__ import annotations

import csv
import itertools
import json
import os
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from . import metrics as metrics_mod
from .config import (ConfigError, dataset_from_config, load_model,
                     model_from_config, save_model, train_config_from_config)
from .data import TIME_FEATURE_NAMES
from .engine import (predict_split, smart_persistence_split, timing_probe,
                     train)
from .heads import EVAL_TAUS


def _outpath(out_dir, name):
    os.makedirs(out_dir, exist_ok=True)
    return os.path.join(out_dir, name)


def run_train(cfg: dict, out_dir, seed: Optional[int] = None,
              head_kind: Optional[str] = None, epochs: Optional[int] = None,
              tag: str = "") -> dict:
    ds = dataset_from_config(cfg)
    kind = head_kind or cfg["model"]["head"]
    use_seed = int(seed if seed is not None else cfg["train"]["seed"])
    model = model_from_config(cfg, ds.features.shape[1], use_seed,
                              head_kind=kind)
    log_path = _outpath(out_dir, f"train_log{tag}.jsonl")
    tcfg = train_config_from_config(cfg, seed=use_seed, head_kind=kind,
                                    log_path=log_path, epochs=epochs)
    model, history = train(model, ds, tcfg)
    ckpt = _outpath(out_dir, f"checkpoint{tag}.mfck")
    save_model(ckpt, model, cfg, use_seed, head_kind=kind)
    best = min((h["val_crps"] for h in history), default=None)
    return {"checkpoint": ckpt, "log": log_path,
            "epochs_run": len(history), "best_val_crps": best,
            "history": history}


def _evaluate(model, ds, split: str):
    y_s, preds_s = predict_split(model, ds, split, EVAL_TAUS)
    y = ds.inverse_scale(y_s)
    preds = ds.inverse_scale(preds_s)
    persistence = None
    warnings = []
    if ds.clear_sky_column is not None:
        persistence = smart_persistence_split(ds, split)
    else:
        warnings.append("no clear-sky column; skill score omitted")
    report = metrics_mod.evaluate_forecasts(
        y, preds, EVAL_TAUS, persistence=persistence,
        point_only=(model.head.kind == "point"))
    return report, warnings


def run_eval(checkpoint, split: str, out_dir,
             dataset_cfg: Optional[dict] = None) -> dict:
    model, meta = load_model(checkpoint)
    cfg = {"model": meta["model"],
           "dataset": dataset_cfg or meta["dataset"]}
    from .config import normalize_config
    cfg = normalize_config({k: cfg[k] for k in ("model", "dataset")})
    ds = dataset_from_config(cfg)
    if ds.features.shape[1] != model.lstm.cfg.input_features:
        raise ConfigError(
            f"dataset has {ds.features.shape[1]} features but checkpoint "
            f"expects {model.lstm.cfg.input_features}")
    report, warnings = _evaluate(model, ds, split)
    report_path = _outpath(out_dir, f"report_{split}.json")
    with open(report_path, "w") as f:
        f.write(report.to_json())
    picp_path = _outpath(out_dir, f"picp_{split}.csv")
    rel_path = _outpath(out_dir, f"reliability_{split}.csv")
    report.write_curves(picp_path, rel_path)
    out = json.loads(report.to_json())
    return {"report": out, "report_path": report_path,
            "picp_csv": picp_path, "reliability_csv": rel_path,
            "warnings": warnings}


EXPERIMENT_COLUMNS = ("crps", "mae", "rmse", "ace", "ss")


def run_experiment(cfg: dict, out_dir,
                   seeds: Optional[Sequence[int]] = None) -> dict:
    heads = cfg["experiment"]["heads"] or [cfg["model"]["head"]]
    seeds = list(seeds if seeds is not None else cfg["experiment"]["seeds"])
    if not seeds:
        raise ConfigError("experiment needs at least one seed")
    rows = []
    failures = []
    per_run = []
    for kind in heads:
        vals = {c: [] for c in EXPERIMENT_COLUMNS}
        for seed in seeds:
            tag = f"_{kind}_seed{seed}"
            try:
                res = run_train(cfg, out_dir, seed=seed, head_kind=kind,
                                tag=tag)
                model, meta = load_model(res["checkpoint"])
                ds = dataset_from_config(cfg)
                report, _ = _evaluate(model, ds, "test")
                rec = {"head": kind, "seed": seed,
                       "crps": report.crps, "mae": report.mae,
                       "rmse": report.rmse, "ace": report.ace,
                       "ss": report.ss,
                       "crossover_rate": report.crossover_rate}
                per_run.append(rec)
                for c in EXPERIMENT_COLUMNS:
                    if rec[c] is not None:
                        vals[c].append(rec[c])
            except Exception as exc:  # partial results on any seed failing
                failures.append({"head": kind, "seed": seed,
                                 "error": str(exc)})
        row = {"head": kind}
        for c in EXPERIMENT_COLUMNS:
            if vals[c]:
                row[c] = float(np.mean(vals[c]))
                row[f"{c}_std"] = float(np.std(vals[c]))
            else:
                row[c] = row[f"{c}_std"] = None
        rows.append(row)
    table_path = _outpath(out_dir, "experiment.csv")
    fields = ["head"]
    for c in EXPERIMENT_COLUMNS:
        fields += [c, f"{c}_std"]
    with open(table_path, "w", newline="") as f:
        wr = csv.DictWriter(f, fieldnames=fields)
        wr.writeheader()
        wr.writerows(rows)
    return {"table": rows, "table_path": table_path, "runs": per_run,
            "failures": failures}


# grid keys -> config locations
_GRID_KEYS = {
    "learning_rate": ("train", "learning_rate"),
    "batch_size": ("train", "batch_size"),
    "hidden_size": ("model", "hidden_size"),
    "num_layers": ("model", "num_layers"),
    "mlp_width": ("model", "mlp_width"),
    "feature_calib_keypoints": ("model", "dln", "feature_calib_keypoints"),
    "quantile_calib_keypoints": ("model", "dln", "quantile_calib_keypoints"),
    "lattice_keypoints": ("model", "dln", "lattice_keypoints"),
    "output_calib_keypoints": ("model", "dln", "output_calib_keypoints"),
    "lattice_input_size": ("model", "dln", "lattice_input_size"),
}


def _apply_point(cfg: dict, point: dict) -> dict:
    import copy
    out = copy.deepcopy(cfg)
    for key, val in point.items():
        node = out
        path = _GRID_KEYS[key]
        for p in path[:-1]:
            node = node[p]
        node[path[-1]] = val
    return out


def estimate_lattice_params(num_features: int, keypoints: int,
                            input_size: int) -> int:
    """Trainable lattice-ensemble entries for a feature partition into
    groups of `input_size` (each lattice gains one quantile dimension)."""
    full, rest = divmod(num_features, input_size)
    n = full * keypoints ** (input_size + 1)
    if rest:
        n += keypoints ** (rest + 1)
    return n


def estimate_param_count(cfg: dict, num_input_features: int,
                         head_kind: str) -> int:
    mc = cfg["model"]
    H = mc["hidden_size"]
    h = cfg["dataset"]["horizon"]
    n = 0
    fin = num_input_features
    for layer in range(mc["num_layers"]):
        n += 4 * H * (fin + H + 1)
        fin = H
    if head_kind == "dln":
        d = mc["dln"]
        L = -(-H // d["lattice_input_size"])
        n += H * d["feature_calib_keypoints"]
        n += d["quantile_calib_keypoints"]
        n += estimate_lattice_params(H, d["lattice_keypoints"],
                                     d["lattice_input_size"])
        n += h * L + h
        n += d["output_calib_keypoints"]
    elif head_kind == "mlp":
        width = mc["mlp_width"] or H
        n += width * (H + 1) + width + h * width + h
    elif head_kind in ("linear", "constrained-linear"):
        n += h * (H + 1) + h
    elif head_kind == "fixed-quantile-qr":
        n += h * 11 * H + h * 11
    elif head_kind == "point":
        n += h * H + h
    return n


def run_tune(cfg: dict, out_dir, max_params: Optional[int] = None) -> dict:
    tune = cfg["tune"]
    grid = tune["grid"]
    if not grid:
        raise ConfigError("tune.grid is empty")
    for key in grid:
        if key not in _GRID_KEYS:
            raise ConfigError(f"unknown tune grid key {key!r}")
    cap = int(max_params if max_params is not None else tune["max_params"])
    kind = cfg["model"]["head"]
    ds = dataset_from_config(cfg)
    F = ds.features.shape[1]
    keys = sorted(grid)
    trials = []
    seen = set()

    def run_point(point):
        marker = tuple(point[k] for k in keys)
        if marker in seen:
            return
        seen.add(marker)
        trial_cfg = _apply_point(cfg, point)
        est = estimate_param_count(trial_cfg, F, kind)
        rec = dict(point)
        rec["param_estimate"] = est
        if est > cap:
            rec.update(status="skipped",
                       reason=f"estimated {est} parameters exceeds cap {cap}",
                       val_crps=None, val_ace=None)
            trials.append(rec)
            return
        tag = "_" + "_".join(f"{k}{point[k]}" for k in keys)
        res = run_train(trial_cfg, out_dir, epochs=tune["epochs"], tag=tag)
        model, _ = load_model(res["checkpoint"])
        y_s, preds_s = predict_split(model, ds, "validation", EVAL_TAUS)
        crps = metrics_mod.crps_approx(y_s, preds_s, EVAL_TAUS)
        ace = metrics_mod.ace(metrics_mod.picp(y_s, preds_s, EVAL_TAUS))
        rec.update(status="ok", reason="", val_crps=crps, val_ace=ace)
        trials.append(rec)

    for combo in itertools.product(*(grid[k] for k in keys)):
        run_point(dict(zip(keys, combo)))

    def ranked():
        ok = [t for t in trials if t["status"] == "ok"]
        return sorted(ok, key=lambda t: (t["val_crps"], t["val_ace"]))

    if tune["refine"] and ranked():
        best = ranked()[0]
        refine_axes = []
        for k in keys:
            vals = sorted(set(grid[k]))
            if len(vals) < 2 or not isinstance(best[k], (int, float)):
                refine_axes.append([best[k]])
                continue
            i = vals.index(best[k])
            cand = {best[k]}
            for j in (i - 1, i + 1):
                if 0 <= j < len(vals):
                    mid = 0.5 * (vals[i] + vals[j])
                    if isinstance(best[k], int):
                        mid = int(round(mid))
                    cand.add(mid)
            refine_axes.append(sorted(cand))
        for combo in itertools.product(*refine_axes):
            run_point(dict(zip(keys, combo)))

    order = ranked()
    csv_path = _outpath(out_dir, "tune_trials.csv")
    fields = keys + ["param_estimate", "status", "reason",
                     "val_crps", "val_ace"]
    with open(csv_path, "w", newline="") as f:
        wr = csv.DictWriter(f, fieldnames=fields)
        wr.writeheader()
        wr.writerows(trials)
    return {"trials": trials, "ranking": order, "trials_path": csv_path,
            "best": order[0] if order else None}


def run_forecast(checkpoint, window_csv, out_csv,
                 taus: Optional[Sequence[float]] = None) -> dict:
    model, meta = load_model(checkpoint)
    taus = np.asarray(EVAL_TAUS if taus is None else taus, dtype=np.float64)
    if taus.size == 0 or np.any(np.diff(taus) <= 0):
        raise ConfigError("taus must be nonempty and strictly increasing")
    from .config import normalize_config
    cfg = normalize_config({"model": meta["model"],
                            "dataset": meta["dataset"]})
    ds = dataset_from_config(cfg)
    df = pd.read_csv(window_csv)
    ts_col = df.columns[0]
    raw_names = [n for n in ds.feature_names if n not in TIME_FEATURE_NAMES]
    missing = [n for n in raw_names if n not in df.columns]
    if missing:
        raise ConfigError(f"{window_csv}: missing columns {missing}")
    w = ds.window
    if len(df) < w:
        raise ConfigError(
            f"{window_csv}: {len(df)} rows < window length {w}")
    df = df.tail(w)
    raw = df[raw_names].to_numpy(dtype=np.float64)
    if cfg["dataset"]["time_features"]:
        from .data import time_feature_matrix
        ts = pd.to_datetime(df[ts_col]).to_numpy()
        raw = np.concatenate([raw, time_feature_matrix(ts)], axis=1)
    mn = ds.scale_params[:, 0]
    span = ds.scale_params[:, 1] - mn
    span[span == 0] = 1.0
    window = (raw - mn) / span
    fb = model.exploit(window, taus)
    values = ds.inverse_scale(fb.values)
    with open(out_csv, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["step"] + [f"tau_{t:g}" for t in taus])
        for step in range(values.shape[1]):
            wr.writerow([step + 1] + [f"{v:.10g}" for v in values[:, step]])
    return {"forecast_csv": out_csv, "taus": taus.tolist(),
            "horizon": int(values.shape[1]),
            "values": values.tolist()}


def run_bench(checkpoint, repeats: int = 10) -> dict:
    model, meta = load_model(checkpoint)
    from .config import normalize_config
    cfg = normalize_config({"model": meta["model"],
                            "dataset": meta["dataset"]})
    ds = dataset_from_config(cfg)
    window, _ = ds.sample(ds.window_starts("test")[:1])
    return timing_probe(model, window[0], repeats=repeats)
