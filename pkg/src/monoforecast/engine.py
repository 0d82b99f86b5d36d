"""Losses, the training and exploitation loops, the smart persistence
baseline, crossover counting and timing probes.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import metrics as metrics_mod
from .heads import EVAL_TAUS
from .layers import apply_constraints
from .lstm import Lstm
from .numerics import Adam, ParameterBlock, make_rng, schedule_lr


class NumericalDivergence(RuntimeError):
    """Raised when training produces a non-finite loss."""


def pinball_loss(y: np.ndarray, y_hat: np.ndarray, tau) -> float:
    """Mean pinball loss at quantile level tau."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch {y.shape} vs {y_hat.shape}")
    err = y - y_hat
    tau = np.asarray(tau, dtype=np.float64)
    if tau.ndim == 1:
        tau = tau.reshape(-1, *([1] * (y.ndim - 1)))
    return float(np.mean(np.where(err >= 0, tau * err, (tau - 1.0) * err)))


def pinball_grad(y, y_hat, tau):
    """d(mean pinball)/d(y_hat); subgradient 1-tau at exact ties."""
    err = y - y_hat
    tau = np.asarray(tau, dtype=np.float64)
    if tau.ndim == 1:
        tau = tau.reshape(-1, *([1] * (y.ndim - 1)))
    return np.where(err > 0, -tau, 1.0 - tau) / y.size


@dataclass
class ForecastBatch:
    """Quantile forecasts for one forecast origin: values[q, step] is the
    tau=taus[q] forecast."""

    taus: np.ndarray
    values: np.ndarray
    origin_index: int = 0

    def __post_init__(self):
        self.taus = np.asarray(self.taus, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.taus.ndim != 1 or np.any(np.diff(self.taus) <= 0):
            raise ValueError("taus must be strictly increasing")
        if np.any(self.taus < 0) or np.any(self.taus > 1):
            raise ValueError("taus must lie in [0, 1]")
        if self.values.shape[0] != self.taus.size:
            raise ValueError("one forecast row per tau required")


def crossover_rate(values: np.ndarray, tol: float = 1e-12) -> float:
    """Fraction of adjacent-quantile pairs x horizon cells where the
    higher quantile's forecast falls below the lower one's.

    Accepts (Q, h) or (N, Q, h); the quantile axis is the second-to-last.
    """
    if isinstance(values, ForecastBatch):
        values = values.values
    v = np.asarray(values, dtype=np.float64)
    if v.ndim == 2:
        v = v[None]
    if v.shape[1] < 2:
        raise ValueError("need at least 2 quantile rows")
    diffs = v[:, 1:, :] - v[:, :-1, :]
    return float(np.mean(diffs < -tol))


@dataclass
class TrainConfig:
    epochs: int
    base_lr: float = 1e-3
    batch_size: int = 64
    schedulers: tuple = ()
    seed: int = 0
    tau_sampling: str = "per-batch"
    early_stop_patience: int = 5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    log_path: Optional[str] = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.tau_sampling not in ("per-batch", "per-sample"):
            raise ValueError("tau_sampling must be per-batch or per-sample")


class SqrModel:
    """LSTM embedding f1 plus an output head f2."""

    def __init__(self, lstm: Lstm, head):
        self.lstm = lstm
        self.head = head
        self.f1_call_count = 0

    @property
    def params(self) -> List[ParameterBlock]:
        return self.lstm.params + self.head.params

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def embed(self, windows, cache=False):
        self.f1_call_count += 1
        emb, c = self.lstm.forward(np.atleast_3d(windows))
        return (emb, c) if cache else emb

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params)

    def exploit(self, window: np.ndarray, taus: Sequence[float],
                origin_index: int = 0) -> ForecastBatch:
        """One f1 evaluation, one f2 evaluation per tau."""
        taus = np.asarray(taus, dtype=np.float64)
        if taus.size == 0:
            raise ValueError("empty quantile set")
        window = np.asarray(window, dtype=np.float64)
        if window.ndim == 2:
            window = window[None]
        emb = self.embed(window)
        rows = []
        if self.head.takes_tau:
            for tau in taus:
                rows.append(self.head(emb, tau)[0])
        elif self.head.kind == "fixed-quantile-qr":
            grid, _ = self.head.forward_grid(emb)
            for tau in taus:
                j = int(np.argmin(np.abs(self.head.taus - tau)))
                rows.append(grid[0, :, j])
        else:  # point head: same forecast at every tau
            y = self.head(emb)[0]
            rows = [y for _ in taus]
        return ForecastBatch(taus=taus, values=np.stack(rows),
                             origin_index=origin_index)

    def predict_quantiles(self, windows: np.ndarray,
                          taus: Sequence[float]) -> np.ndarray:
        """Batched exploitation: (N, w, F) -> (N, Q, h)."""
        taus = np.asarray(taus, dtype=np.float64)
        emb = self.embed(windows)
        N = emb.shape[0]
        if self.head.takes_tau:
            out = np.stack([self.head(emb, tau) for tau in taus], axis=1)
        elif self.head.kind == "fixed-quantile-qr":
            grid, _ = self.head.forward_grid(emb)
            cols = [int(np.argmin(np.abs(self.head.taus - t))) for t in taus]
            out = np.transpose(grid[:, :, cols], (0, 2, 1))
        else:
            y = self.head(emb)
            out = np.repeat(y[:, None, :], taus.size, axis=1)
        return out


def _validation_crps(model: SqrModel, dataset, split: str,
                     batch_size: int = 256) -> float:
    ys, preds = predict_split(model, dataset, split, EVAL_TAUS,
                              batch_size=batch_size)
    if model.head.kind == "point":
        return float(np.mean(np.abs(ys - preds[:, preds.shape[1] // 2, :])))
    return metrics_mod.crps_approx(ys, preds, EVAL_TAUS)


def predict_split(model: SqrModel, dataset, split: str, taus,
                  batch_size: int = 256):
    """Forecast every sample of a split; returns (y (N,h), preds (N,Q,h))."""
    ys = []
    preds = []
    for xb, yb in dataset.iter_windows(split, batch_size, shuffle=False):
        ys.append(yb)
        preds.append(model.predict_quantiles(xb, taus))
    return np.concatenate(ys), np.concatenate(preds)


def _snapshot(params):
    return [p.values.copy() for p in params]


def _restore(params, snap):
    for p, v in zip(params, snap):
        p.values[...] = v


def train(model: SqrModel, dataset, cfg: TrainConfig,
          validation_scorer: Optional[Callable] = None):
    """Minibatch SQR training with per-epoch validation scoring,
    LR scheduling, constraint projection and best-epoch early stopping.

    validation_scorer(model, epoch) may replace the default validation
    CRPS (used by tests to script scheduler behavior). Returns
    (model, history) where history is one dict per epoch.
    """
    rng = make_rng(cfg.seed)
    opt = Adam(cfg.base_lr, cfg.beta1, cfg.beta2, cfg.epsilon)
    head = model.head
    params = model.params
    apply_constraints(params)
    history = []
    crps_hist: List[float] = []
    best = (np.inf, 0, _snapshot(params))
    log_f = open(cfg.log_path, "w") if cfg.log_path else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            lr = schedule_lr(cfg.schedulers, cfg.base_lr, epoch - 1,
                             crps_hist)
            opt.learning_rate = lr
            losses = []
            for xb, yb in dataset.iter_windows("train", cfg.batch_size,
                                               shuffle=True, rng=rng):
                model.zero_grad()
                emb, lstm_cache = model.embed(xb, cache=True)
                if head.kind == "point":
                    y_hat, hc = head.forward(emb, None)
                    err = yb - y_hat
                    loss = float(np.mean(np.abs(err)))
                    gy = -np.sign(err) / err.size
                elif head.kind == "fixed-quantile-qr":
                    y_hat, hc = head.forward_grid(emb)
                    taus = head.taus[None, None, :]
                    err = yb[:, :, None] - y_hat
                    # sum over the quantile grid, mean over samples/steps
                    loss = float(np.sum(np.mean(
                        np.where(err >= 0, taus * err, (taus - 1) * err),
                        axis=(0, 1))))
                    gy = np.where(err > 0, -taus, 1.0 - taus) / (
                        err.shape[0] * err.shape[1])
                else:
                    if cfg.tau_sampling == "per-sample":
                        tau = rng.uniform(0.0, 1.0, size=xb.shape[0])
                    else:
                        tau = float(rng.uniform(0.0, 1.0))
                    y_hat, hc = head.forward(emb, tau)
                    loss = pinball_loss(yb, y_hat, tau)
                    gy = pinball_grad(yb, y_hat, tau)
                if not np.isfinite(loss):
                    raise NumericalDivergence(
                        f"non-finite loss at epoch {epoch}")
                losses.append(loss)
                g_emb = (head.backward_grid(hc, gy)
                         if head.kind == "fixed-quantile-qr"
                         else head.backward(hc, gy))
                model.lstm.backward(lstm_cache, g_emb)
                opt.step(params)
                apply_constraints(params)
            if validation_scorer is not None:
                val = float(validation_scorer(model, epoch))
            else:
                val = _validation_crps(model, dataset, "validation")
            crps_hist.append(val)
            rec = {"epoch": epoch, "train_loss": float(np.mean(losses)),
                   "val_crps": val, "lr": lr}
            history.append(rec)
            if log_f:
                log_f.write(json.dumps(rec) + "\n")
            if val < best[0]:
                best = (val, epoch, _snapshot(params))
            elif epoch - best[1] >= cfg.early_stop_patience:
                break
    finally:
        if log_f:
            log_f.close()
    if cfg.epochs > 0 and history:
        _restore(params, best[2])
    return model, history


def smart_persistence(observed: np.ndarray, clear_sky: np.ndarray,
                      horizon: int = 36) -> np.ndarray:
    """Persistence of the observed/clear-sky ratio at the same time of
    day on the previous day: f(t+s) = (x(r)/o(r)) * o(t+s) with r the
    step 24h before t+s (48h before for steps past one day).

    `observed` must cover at least the last 24 hours; `clear_sky` holds
    those same 24 past hours followed by `horizon` future hours. A zero
    clear-sky value yields a zero ratio (night convention).
    """
    observed = np.asarray(observed, dtype=np.float64)
    clear_sky = np.asarray(clear_sky, dtype=np.float64)
    if observed.size < 24:
        raise ValueError("need at least 24 hours of observations")
    if clear_sky.size < 24 + horizon:
        raise ValueError("clear_sky must cover 24 past plus "
                         f"{horizon} future hours")
    past_obs = observed[-24:]
    past_clear = clear_sky[:24]
    future_clear = clear_sky[24:24 + horizon]
    out = np.empty(horizon)
    for step in range(1, horizon + 1):
        src = (step - 1) % 24
        ratio = past_obs[src] / past_clear[src] if past_clear[src] != 0 else 0.0
        out[step - 1] = ratio * future_clear[step - 1]
    return out


def smart_persistence_split(dataset, split: str,
                            horizon: Optional[int] = None) -> np.ndarray:
    """Smart persistence forecast for every sample of a split, in the
    dataset's physical target units; shape (N, h)."""
    if dataset.clear_sky_column is None:
        raise ValueError("dataset has no clear-sky column")
    h = horizon or dataset.horizon
    lo, hi = dataset.split_bounds(split)
    w = dataset.window
    clear = dataset.raw_column(dataset.clear_sky_column)
    target = dataset.raw_column(dataset.target_column)
    out = []
    for start in range(lo, hi - w - h + 1):
        t = start + w  # first forecast step index
        obs = target[t - 24:t]
        cs = clear[t - 24:t + h]
        out.append(smart_persistence(obs, cs, horizon=h))
    return np.asarray(out)


def timing_probe(model: SqrModel, window: np.ndarray,
                 taus=None, repeats: int = 10):
    """Wall-clock stats of one exploitation pass plus the parameter count."""
    taus = EVAL_TAUS if taus is None else np.asarray(taus, dtype=np.float64)
    model.exploit(window, taus)  # warm-up
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        model.exploit(window, taus)
        times.append(time.perf_counter() - t0)
    times = np.asarray(times)
    return {
        "mean_seconds": float(times.mean()),
        "variance": float(times.var()),
        "repeats": int(repeats),
        "parameter_count": model.parameter_count(),
    }
