"""Probabilistic forecast evaluation: MAE/RMSE, skill score, approximated
CRPS, PICP, ACE, reliability curves, and report assembly.

All metrics are averaged across the forecast horizon: per-step values are
computed over samples first, then averaged over steps.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict
from typing import List, Optional, Tuple

import numpy as np


def _check_pair(y, y_hat):
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch {y.shape} vs {y_hat.shape}")
    return y, y_hat


def point_metrics(y: np.ndarray, y_hat: np.ndarray) -> Tuple[float, float]:
    """(MAE, RMSE) on (N, h) arrays; RMSE takes the root per horizon step
    before averaging over steps."""
    y, y_hat = _check_pair(y, y_hat)
    err = y - y_hat
    mae = float(np.mean(np.mean(np.abs(err), axis=0)))
    rmse = float(np.mean(np.sqrt(np.mean(err ** 2, axis=0))))
    return mae, rmse


def skill_score(mse_f: float, mse_p: float) -> float:
    """1 - MSE_forecast / MSE_persistence."""
    if mse_p == 0:
        raise ValueError("persistence MSE is zero; skill undefined")
    return 1.0 - mse_f / mse_p


def crps_approx(y: np.ndarray, forecasts: np.ndarray,
                taus: np.ndarray) -> float:
    """Pinball loss summed over the quantile grid, averaged over samples
    and horizon steps. y: (N, h); forecasts: (N, Q, h)."""
    y = np.asarray(y, dtype=np.float64)
    forecasts = np.asarray(forecasts, dtype=np.float64)
    taus = np.asarray(taus, dtype=np.float64)
    if forecasts.shape != (y.shape[0], taus.size, y.shape[1]):
        raise ValueError("forecasts must be (N, Q, h) matching y and taus")
    err = y[:, None, :] - forecasts
    t = taus[None, :, None]
    pb = np.where(err >= 0, t * err, (t - 1.0) * err)
    return float(np.mean(np.sum(pb, axis=1)))


def _interval_pairs(taus: np.ndarray):
    taus = np.asarray(taus, dtype=np.float64)
    Q = taus.size
    if Q < 2 or not np.allclose(taus + taus[::-1], 1.0, atol=1e-9):
        raise ValueError("quantile grid must be symmetric about 0.5")
    pairs = []
    for i in range(Q // 2):
        lo, hi = i, Q - 1 - i
        pairs.append((taus[hi] - taus[lo], lo, hi))
    return sorted(pairs)  # ascending nominal coverage


def picp(y: np.ndarray, forecasts: np.ndarray,
         taus: np.ndarray) -> List[Tuple[float, float]]:
    """Empirical coverage of each nested central interval of the grid.

    Returns (nominal coverage, empirical coverage) ordered by nominal
    level; intervals are closed, so boundary hits count as covered.
    """
    y = np.asarray(y, dtype=np.float64)
    forecasts = np.asarray(forecasts, dtype=np.float64)
    curve = []
    for nominal, lo, hi in _interval_pairs(taus):
        inside = (y >= forecasts[:, lo, :]) & (y <= forecasts[:, hi, :])
        curve.append((float(nominal), float(np.mean(inside))))
    return curve


def ace(picp_curve) -> float:
    """Mean absolute gap between nominal and empirical coverage."""
    if not len(picp_curve):
        raise ValueError("empty PICP curve")
    return float(np.mean([abs(n - e) for n, e in picp_curve]))


def reliability(y: np.ndarray, forecasts: np.ndarray,
                taus: np.ndarray) -> List[Tuple[float, float]]:
    """Per quantile level: empirical fraction of cells with y at or below
    the forecast at that level."""
    y = np.asarray(y, dtype=np.float64)
    forecasts = np.asarray(forecasts, dtype=np.float64)
    taus = np.asarray(taus, dtype=np.float64)
    return [(float(t), float(np.mean(y <= forecasts[:, q, :])))
            for q, t in enumerate(taus)]


@dataclass
class MetricReport:
    mae: float
    rmse: float
    crps: Optional[float]
    ace: Optional[float]
    ss: Optional[float]
    crossover_rate: float
    picp_curve: List[Tuple[float, float]] = field(default_factory=list)
    reliability_curve: List[Tuple[float, float]] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    def write_curves(self, picp_path, reliability_path):
        for path, curve, head in (
                (picp_path, self.picp_curve, ("nominal", "empirical")),
                (reliability_path, self.reliability_curve,
                 ("quantile", "empirical"))):
            with open(path, "w", newline="") as f:
                wr = csv.writer(f)
                wr.writerow(head)
                wr.writerows(curve)


REPORT_SCHEMA = {
    "type": "object",
    "required": ["mae", "rmse", "crps", "ace", "ss", "crossover_rate",
                 "picp_curve", "reliability_curve"],
    "additionalProperties": False,
    "properties": {
        "mae": {"type": "number"},
        "rmse": {"type": "number"},
        "crps": {"type": ["number", "null"]},
        "ace": {"type": ["number", "null"]},
        "ss": {"type": ["number", "null"]},
        "crossover_rate": {"type": "number"},
        "picp_curve": {"type": "array", "items": {
            "type": "array", "minItems": 2, "maxItems": 2,
            "items": {"type": "number"}}},
        "reliability_curve": {"type": "array", "items": {
            "type": "array", "minItems": 2, "maxItems": 2,
            "items": {"type": "number"}}},
    },
}


def evaluate_forecasts(y: np.ndarray, forecasts: np.ndarray,
                       taus: np.ndarray,
                       persistence: Optional[np.ndarray] = None,
                       point_only: bool = False) -> MetricReport:
    """Full evaluation of (N, Q, h) quantile forecasts against (N, h)
    observations. Point metrics use the median quantile. Skill score is
    included when a persistence forecast is supplied."""
    from .engine import crossover_rate as xrate  # cycle-free at call time
    taus = np.asarray(taus, dtype=np.float64)
    med = int(np.argmin(np.abs(taus - 0.5)))
    y_med = forecasts[:, med, :]
    mae, rmse = point_metrics(y, y_med)
    ss = None
    if persistence is not None:
        mse_f = float(np.mean(np.mean((y - y_med) ** 2, axis=0)))
        mse_p = float(np.mean(np.mean((y - persistence) ** 2, axis=0)))
        ss = skill_score(mse_f, mse_p)
    if point_only:
        return MetricReport(mae=mae, rmse=rmse, crps=None, ace=None, ss=ss,
                            crossover_rate=0.0)
    pc = picp(y, forecasts, taus)
    return MetricReport(
        mae=mae, rmse=rmse,
        crps=crps_approx(y, forecasts, taus),
        ace=ace(pc), ss=ss,
        crossover_rate=xrate(forecasts),
        picp_curve=pc,
        reliability_curve=reliability(y, forecasts, taus))
