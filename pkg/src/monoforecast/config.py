"""Experiment configuration: a flat YAML document with per-head training
defaults, validated strictly (unknown keys are rejected).
"""

from __future__ import annotations

import copy
from typing import Optional

import yaml

from .data import SYNTH_KINDS, SeriesDataset, load_csv, synth_generate
from .heads import HEAD_KINDS, DlnHeadConfig, make_head
from .lstm import Lstm, LstmConfig
from .engine import SqrModel, TrainConfig
from .numerics import StepAtEpochs, StepOnIncrease, make_rng


class ConfigError(ValueError):
    """Invalid configuration; maps to CLI exit code 2."""


# per-head training defaults: (epochs, learning rate, schedulers)
HEAD_TRAIN_DEFAULTS = {
    "mlp": (30, 1e-3, [{"kind": "step-on-increase", "patience": 1,
                        "factor": 0.1}]),
    "point": (10, 1e-3, [{"kind": "step-at-epochs", "epochs": [1, 2, 3],
                          "factor": 0.1},
                         {"kind": "step-on-increase", "patience": 1,
                          "factor": 0.1}]),
    "linear": (20, 1e-3, [{"kind": "step-on-increase", "patience": 2,
                           "factor": 0.1}]),
    "constrained-linear": (300, 0.1,
                           [{"kind": "step-at-epochs", "epochs": [1, 2],
                             "factor": 0.01},
                            {"kind": "step-on-increase", "patience": 1,
                             "factor": 0.1}]),
    "fixed-quantile-qr": (250, 1e-3,
                          [{"kind": "step-at-epochs", "epochs": [1, 2, 3],
                            "factor": 0.1},
                           {"kind": "step-on-increase", "patience": 1,
                            "factor": 0.1}]),
    "dln": (10, 1e-3, [{"kind": "step-at-epochs", "epochs": [1, 2, 3, 4],
                        "factor": 0.5}]),
}

_DEFAULTS = {
    "dataset": {
        "path": None,
        "synthetic": None,       # {kind, length, seed}
        "target_column": "target",
        "clear_sky_column": None,
        "window": 96,
        "horizon": 36,
        "fractions": [0.6, 0.2, 0.2],
        "time_features": True,
    },
    "model": {
        "head": "dln",
        "hidden_size": 128,
        "num_layers": 2,
        "mlp_width": None,
        "dln": {
            "feature_calib_keypoints": 61,
            "quantile_calib_keypoints": 11,
            "lattice_keypoints": 21,
            "output_calib_keypoints": 61,
            "lattice_input_size": 2,
            "output_domain": [-0.25, 1.25],
        },
    },
    "train": {
        "epochs": None,          # None -> per-head default
        "learning_rate": None,   # None -> per-head default
        "batch_size": 64,
        "seed": 0,
        "tau_sampling": "per-batch",
        "early_stop_patience": 5,
        "schedulers": None,      # None -> per-head default
    },
    "experiment": {
        "heads": None,           # None -> just model.head
        "seeds": [1, 2, 3, 4, 5],
    },
    "tune": {
        "grid": {},
        "epochs": 3,
        "max_params": 5_000_000,
        "refine": False,
    },
}


def _merge(defaults, user, path=""):
    if not isinstance(user, dict):
        raise ConfigError(f"section {path or 'root'} must be a mapping")
    out = copy.deepcopy(defaults)
    for key, val in user.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {path}{key!r}")
        if isinstance(defaults[key], dict) and isinstance(val, dict) \
                and defaults[key]:  # empty-dict defaults are open mappings
            out[key] = _merge(defaults[key], val, f"{path}{key}.")
        else:
            out[key] = val
    return out


def load_config(path) -> dict:
    with open(path) as f:
        user = yaml.safe_load(f) or {}
    return normalize_config(user)


def normalize_config(user: dict) -> dict:
    cfg = _merge(_DEFAULTS, user)
    if cfg["model"]["head"] not in HEAD_KINDS:
        raise ConfigError(f"unknown head kind {cfg['model']['head']!r}")
    dsc = cfg["dataset"]
    if (dsc["path"] is None) == (dsc["synthetic"] is None):
        raise ConfigError("dataset needs exactly one of path or synthetic")
    if dsc["synthetic"] is not None:
        syn = dsc["synthetic"]
        if not isinstance(syn, dict) or syn.get("kind") not in SYNTH_KINDS:
            raise ConfigError(
                f"dataset.synthetic.kind must be one of {SYNTH_KINDS}")
    return cfg


def parse_schedulers(specs):
    scheds = []
    for s in specs or []:
        kind = s.get("kind")
        if kind == "step-at-epochs":
            scheds.append(StepAtEpochs(tuple(s["epochs"]), float(s["factor"])))
        elif kind == "step-on-increase":
            scheds.append(StepOnIncrease(int(s["patience"]),
                                         float(s["factor"])))
        else:
            raise ConfigError(f"unknown scheduler kind {kind!r}")
    return tuple(scheds)


def dataset_from_config(cfg: dict) -> SeriesDataset:
    dsc = cfg["dataset"]
    if dsc["synthetic"] is not None:
        syn = dsc["synthetic"]
        return synth_generate(
            syn["kind"], int(syn.get("length", 5000)),
            int(syn.get("seed", 0)), window=dsc["window"],
            horizon=dsc["horizon"], fractions=tuple(dsc["fractions"]),
            time_features=dsc["time_features"])
    try:
        return load_csv(dsc["path"], dsc["target_column"],
                        clear_sky_column=dsc["clear_sky_column"],
                        window=dsc["window"], horizon=dsc["horizon"],
                        fractions=tuple(dsc["fractions"]),
                        time_features=dsc["time_features"])
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def model_from_config(cfg: dict, num_input_features: int, seed: int,
                      head_kind: Optional[str] = None) -> SqrModel:
    mc = cfg["model"]
    kind = head_kind or mc["head"]
    horizon = cfg["dataset"]["horizon"]
    rng = make_rng(seed)
    lstm = Lstm(LstmConfig(num_input_features, mc["hidden_size"],
                           mc["num_layers"], cfg["dataset"]["window"]), rng)
    dln_cfg = None
    if kind == "dln":
        d = dict(mc["dln"])
        d["output_domain"] = tuple(d["output_domain"])
        dln_cfg = DlnHeadConfig(horizon=horizon, **d)
    head = make_head(kind, mc["hidden_size"], horizon, rng,
                     dln_cfg=dln_cfg,
                     mlp_width=mc["mlp_width"] or mc["hidden_size"])
    return SqrModel(lstm, head)


def train_config_from_config(cfg: dict, seed: Optional[int] = None,
                             head_kind: Optional[str] = None,
                             log_path=None,
                             epochs: Optional[int] = None) -> TrainConfig:
    tc = cfg["train"]
    kind = head_kind or cfg["model"]["head"]
    def_epochs, def_lr, def_sched = HEAD_TRAIN_DEFAULTS[kind]
    scheds = tc["schedulers"] if tc["schedulers"] is not None else def_sched
    try:
        return TrainConfig(
            epochs=int(epochs if epochs is not None
                       else (tc["epochs"] if tc["epochs"] is not None
                             else def_epochs)),
            base_lr=float(tc["learning_rate"]
                          if tc["learning_rate"] is not None else def_lr),
            batch_size=int(tc["batch_size"]),
            schedulers=parse_schedulers(scheds),
            seed=int(seed if seed is not None else tc["seed"]),
            tau_sampling=tc["tau_sampling"],
            early_stop_patience=int(tc["early_stop_patience"]),
            log_path=log_path)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def save_model(path, model: SqrModel, cfg: dict, seed: int,
               head_kind: Optional[str] = None):
    """Checkpoint = parameter blocks + enough metadata to rebuild the
    architecture (config sections, seed, feature count)."""
    from .numerics import save_checkpoint
    meta = {
        "head_kind": head_kind or cfg["model"]["head"],
        "seed": int(seed),
        "num_input_features": int(model.lstm.cfg.input_features),
        "model": cfg["model"],
        "dataset": cfg["dataset"],
    }
    save_checkpoint(path, model.params, meta=meta)


def load_model(path):
    """Rebuild a model from a checkpoint; returns (model, meta)."""
    from .numerics import load_checkpoint
    blocks, meta = load_checkpoint(path)
    cfg = {"model": meta["model"], "dataset": meta["dataset"]}
    cfg = _merge(_DEFAULTS, {k: cfg[k] for k in ("model", "dataset")})
    model = model_from_config(cfg, meta["num_input_features"], meta["seed"],
                              head_kind=meta["head_kind"])
    by_name = {b.name: b for b in blocks}
    for p in model.params:
        if p.name not in by_name:
            raise ValueError(f"checkpoint missing block {p.name!r}")
        src = by_name[p.name]
        if src.values.shape != p.values.shape:
            raise ValueError(f"checkpoint block {p.name!r} has shape "
                             f"{src.values.shape}, expected {p.values.shape}")
        p.values[...] = src.values
    return model, meta
