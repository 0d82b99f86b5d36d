"""Pydantic request/response models for the forecasting service."""

from __future__ import annotations

from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field


class TrainRequest(BaseModel):
    config: Dict[str, Any] = Field(description="experiment config document")
    out_dir: str
    seed: Optional[int] = None


class TrainResponse(BaseModel):
    checkpoint: str
    log: str
    epochs_run: int
    best_val_crps: Optional[float]
    history: List[Dict[str, Any]]


class EvalRequest(BaseModel):
    checkpoint: str
    split: str = "test"
    out_dir: str
    dataset: Optional[Dict[str, Any]] = None


class EvalResponse(BaseModel):
    report: Dict[str, Any]
    report_path: str
    picp_csv: str
    reliability_csv: str
    warnings: List[str]


class ExperimentRequest(BaseModel):
    config: Dict[str, Any]
    out_dir: str
    seeds: Optional[List[int]] = None


class ExperimentResponse(BaseModel):
    table: List[Dict[str, Any]]
    table_path: str
    runs: List[Dict[str, Any]]
    failures: List[Dict[str, Any]]


class TuneRequest(BaseModel):
    config: Dict[str, Any]
    out_dir: str
    max_params: Optional[int] = None


class TuneResponse(BaseModel):
    trials: List[Dict[str, Any]]
    ranking: List[Dict[str, Any]]
    trials_path: str
    best: Optional[Dict[str, Any]]


class ForecastRequest(BaseModel):
    checkpoint: str
    window_csv: str
    out_csv: str
    taus: Optional[List[float]] = None


class ForecastResponse(BaseModel):
    forecast_csv: str
    taus: List[float]
    horizon: int
    values: List[List[float]]


class BenchRequest(BaseModel):
    checkpoint: str
    repeats: int = 10


class BenchResponse(BaseModel):
    mean_seconds: float
    variance: float
    repeats: int
    parameter_count: int
