"""FastAPI service wrapping the forecasting jobs.

Errors map to a stable contract: configuration/usage problems return 400
with detail.code 2; numeric failures (diverging training) return 500 with
detail.code 3. The CLI reuses these codes as exit codes.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from ..config import ConfigError, normalize_config
from ..engine import NumericalDivergence
from .. import jobs
from . import schemas

app = FastAPI(title="monoforecast",
              description="Monotone simultaneous quantile regression "
                          "forecasting service")


def _run(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ConfigError as exc:
        raise HTTPException(status_code=400,
                            detail={"code": 2, "message": str(exc)})
    except (FileNotFoundError, ValueError, KeyError) as exc:
        raise HTTPException(status_code=400,
                            detail={"code": 2, "message": str(exc)})
    except NumericalDivergence as exc:
        raise HTTPException(status_code=500,
                            detail={"code": 3, "message": str(exc)})


@app.get("/health")
def health():
    return {"status": "ok"}


@app.post("/train", response_model=schemas.TrainResponse)
def train(req: schemas.TrainRequest):
    cfg = _run(normalize_config, req.config)
    return _run(jobs.run_train, cfg, req.out_dir, seed=req.seed)


@app.post("/eval", response_model=schemas.EvalResponse)
def evaluate(req: schemas.EvalRequest):
    if req.split not in ("train", "validation", "test"):
        raise HTTPException(status_code=400,
                            detail={"code": 2,
                                    "message": f"unknown split {req.split!r}"})
    return _run(jobs.run_eval, req.checkpoint, req.split, req.out_dir,
                dataset_cfg=req.dataset)


@app.post("/experiment", response_model=schemas.ExperimentResponse)
def experiment(req: schemas.ExperimentRequest):
    cfg = _run(normalize_config, req.config)
    return _run(jobs.run_experiment, cfg, req.out_dir, seeds=req.seeds)


@app.post("/tune", response_model=schemas.TuneResponse)
def tune(req: schemas.TuneRequest):
    cfg = _run(normalize_config, req.config)
    return _run(jobs.run_tune, cfg, req.out_dir, max_params=req.max_params)


@app.post("/forecast", response_model=schemas.ForecastResponse)
def forecast(req: schemas.ForecastRequest):
    return _run(jobs.run_forecast, req.checkpoint, req.window_csv,
                req.out_csv, taus=req.taus)


@app.post("/bench", response_model=schemas.BenchResponse)
def bench(req: schemas.BenchRequest):
    return _run(jobs.run_bench, req.checkpoint, repeats=req.repeats)
