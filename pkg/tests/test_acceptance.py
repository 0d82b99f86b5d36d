"""End-to-end acceptance suite.

Each test prints one [PASS]/[FAIL] line for its criterion. The trained
models are shared module-scoped fixtures so the whole suite stays well
under the runtime budget.
"""

import itertools
import time

import numpy as np
import pytest
from sklearn.isotonic import isotonic_regression

from monoforecast import metrics as M
from monoforecast.data import synth_generate
from monoforecast.engine import (SqrModel, TrainConfig, crossover_rate,
                                 pinball_loss, predict_split,
                                 smart_persistence_split, train)
from monoforecast.heads import (EVAL_TAUS, DlnHead, DlnHeadConfig, MlpHead,
                                make_head)
from monoforecast.layers import (Calibrator, ConstrainedLinear, Lattice,
                                 interpolation_weights, pava,
                                 project_monotone)
from monoforecast.lstm import Lstm, LstmConfig
from monoforecast.numerics import (ParameterBlock, StepOnIncrease,
                                   finite_difference_check, make_rng)

TAUS_101 = np.linspace(0.0, 1.0, 101)


def report(ok: bool, line: str):
    # bypass pytest's capture so one line per criterion always shows
    import sys
    print(f"[{'PASS' if ok else 'FAIL'}] {line}", file=sys.__stdout__)
    assert ok, line


def small_dln_cfg(horizon=12):
    return DlnHeadConfig(feature_calib_keypoints=21,
                         quantile_calib_keypoints=7, lattice_keypoints=5,
                         output_calib_keypoints=21, lattice_input_size=2,
                         horizon=horizon)


def build_model(head_kind, num_input_features, hidden=12, window=48,
                horizon=12, seed=0):
    rng = make_rng(seed)
    lstm = Lstm(LstmConfig(num_input_features, hidden, 1, window), rng)
    head = make_head(head_kind, hidden, horizon, rng,
                     dln_cfg=small_dln_cfg(horizon), mlp_width=2 * hidden)
    return SqrModel(lstm, head)


@pytest.fixture(scope="module")
def sine_dataset():
    return synth_generate("heteroscedastic-sine", 5000, 0, window=48,
                          horizon=12)


@pytest.fixture(scope="module")
def trained_dln(sine_dataset):
    from monoforecast.numerics import StepAtEpochs
    model = build_model("dln", sine_dataset.features.shape[1])
    t0 = time.time()
    cfg = TrainConfig(epochs=30, base_lr=0.01, batch_size=64, seed=0,
                      schedulers=(StepAtEpochs((10, 20), 0.5),),
                      early_stop_patience=10, tau_sampling="per-sample")
    model, history = train(model, sine_dataset, cfg)
    return model, history, time.time() - t0


@pytest.fixture(scope="module")
def trained_mlp(sine_dataset):
    from monoforecast.numerics import StepAtEpochs
    model = build_model("mlp", sine_dataset.features.shape[1])
    cfg = TrainConfig(epochs=30, base_lr=0.01, batch_size=64, seed=0,
                      schedulers=(StepAtEpochs((10, 20), 0.5),),
                      early_stop_patience=10, tau_sampling="per-sample")
    model, _ = train(model, sine_dataset, cfg)
    return model


def test_criterion_1_trained_dln_has_zero_crossovers(sine_dataset,
                                                     trained_dln):
    model, _, seconds = trained_dln
    _, preds = predict_split(model, sine_dataset, "test", TAUS_101)
    rate = crossover_rate(preds, tol=1e-9)
    ok = rate == 0.0 and seconds < 600
    report(ok, "criterion 1: trained lattice head has crossover rate "
               f"{rate} on the 101-quantile test grid "
               f"(training took {seconds:.0f}s)")


def test_criterion_2_unconstrained_mlp_does_cross(sine_dataset, trained_mlp):
    _, preds = predict_split(trained_mlp, sine_dataset, "test", TAUS_101)
    rate = crossover_rate(preds)
    report(rate > 0.0,
           f"criterion 2: identically trained MLP head crossover rate "
           f"{rate:.4f} > 0")


def test_criterion_3_calibration_on_synthetic_data(sine_dataset,
                                                   trained_dln):
    model, _, _ = trained_dln
    y, preds = predict_split(model, sine_dataset, "test", EVAL_TAUS)
    ace = M.ace(M.picp(y, preds, EVAL_TAUS))
    rel = M.reliability(y, preds, EVAL_TAUS)
    worst = max(abs(emp - tau) for tau, emp in rel)
    ok = ace <= 0.10 and worst <= 0.08
    report(ok, f"criterion 3: ACE {ace:.3f} <= 0.10 and worst reliability "
               f"deviation {worst:.3f} <= 0.08")


def test_criterion_4_skill_over_smart_persistence():
    from monoforecast.numerics import StepAtEpochs
    ds = synth_generate("clear-sky-ramp", 5000, 0, window=48, horizon=12)
    model = build_model("dln", ds.features.shape[1], hidden=16)
    cfg = TrainConfig(epochs=45, base_lr=0.01, batch_size=64, seed=0,
                      schedulers=(StepAtEpochs((15, 30), 0.5),),
                      early_stop_patience=15, tau_sampling="per-sample")
    model, _ = train(model, ds, cfg)
    y_s, preds_s = predict_split(model, ds, "test", EVAL_TAUS)
    y = ds.inverse_scale(y_s)
    preds = ds.inverse_scale(preds_s)
    pers = smart_persistence_split(ds, "test")
    rep = M.evaluate_forecasts(y, preds, EVAL_TAUS, persistence=pers)
    report(rep.ss > 0.0,
           f"criterion 4: skill score {rep.ss:.3f} > 0 against smart "
           "persistence on ramp data")


def test_criterion_5_oracle_equivalences():
    rng = make_rng(100)
    # lattice forward vs brute-force corner enumeration
    worst_lat = 0.0
    pts = 0
    for D in (1, 2, 3, 4):
        for k in (2, 3, 5):
            theta = rng.standard_normal((k,) * D)
            lat = Lattice("lat", D, k, theta)
            x = rng.uniform(-0.1, 1.1, (90, D))
            pts += 90
            out, _ = lat.forward(x)
            for n in range(90):
                xc = np.clip(x[n], 0, 1) * (k - 1)
                cell = np.minimum(xc.astype(int), k - 2)
                frac = xc - cell
                ref = 0.0
                for corner in itertools.product((0, 1), repeat=D):
                    w = 1.0
                    for d, bit in enumerate(corner):
                        w *= frac[d] if bit else 1.0 - frac[d]
                    ref += w * theta[tuple(cell + np.array(corner))]
                worst_lat = max(worst_lat, abs(out[n] - ref))
    # monotone projection vs reference isotonic regression
    worst_proj = 0.0
    for _ in range(100):
        y = rng.standard_normal(int(rng.integers(2, 40)))
        b = ParameterBlock("b", y.copy(), constraint="monotone",
                          monotone_dims=(0,))
        project_monotone(b)
        worst_proj = max(worst_proj,
                         np.max(np.abs(b.values - isotonic_regression(y))))
    # metric implementations vs double-loop references
    yv = rng.standard_normal((25, 4))
    fc = np.sort(rng.standard_normal((25, 11, 4)), axis=1)
    crps = M.crps_approx(yv, fc, EVAL_TAUS)
    ref_crps = np.mean([
        sum(max(t * (yv[n, s] - fc[n, q, s]),
                (t - 1) * (yv[n, s] - fc[n, q, s]))
            for q, t in enumerate(EVAL_TAUS))
        for n in range(25) for s in range(4)])
    d_crps = abs(crps - ref_crps)
    pb = pinball_loss(yv, fc[:, 5, :], 0.5)
    ref_pb = np.mean([max(0.5 * (yv[n, s] - fc[n, 5, s]),
                          -0.5 * (yv[n, s] - fc[n, 5, s]))
                      for n in range(25) for s in range(4)])
    d_pb = abs(pb - ref_pb)
    curve = M.picp(yv, fc, EVAL_TAUS)
    d_picp = 0.0
    for (nominal, emp) in curve:
        lo = np.argmin(np.abs(EVAL_TAUS - (1 - nominal) / 2))
        hi = 10 - lo
        ref = np.mean([fc[n, lo, s] <= yv[n, s] <= fc[n, hi, s]
                       for n in range(25) for s in range(4)])
        d_picp = max(d_picp, abs(emp - ref))
    d_ace = abs(M.ace(curve)
                - np.mean([abs(n - e) for n, e in curve]))
    ok = (worst_lat < 1e-12 and pts >= 1000 and worst_proj < 1e-6
          and d_crps < 1e-12 and d_pb < 1e-12 and d_picp < 1e-12
          and d_ace < 1e-12)
    report(ok, "criterion 5: oracle gaps lattice "
               f"{worst_lat:.1e}, projection {worst_proj:.1e}, metrics "
               f"{max(d_crps, d_pb, d_picp, d_ace):.1e}")


def test_criterion_6_gradient_suite():
    rng = make_rng(200)
    worst = {}
    # calibrator
    cal = Calibrator("cal", np.linspace(0, 1, 9), rng.standard_normal(9))
    x = rng.uniform(0.05, 0.95, 30)
    gy = rng.standard_normal(30)
    _, cache = cal.forward(x)
    cal.backward(cache, gy)
    worst["calibrator"] = finite_difference_check(
        lambda: float(np.sum(cal(x) * gy)), cal.params)
    # lattice
    lat = Lattice("lat", 3, 4, rng.standard_normal((4, 4, 4)))
    xl = rng.uniform(0.05, 0.95, (12, 3))
    gyl = rng.standard_normal(12)
    _, cache = lat.forward(xl)
    lat.backward(cache, gyl)
    worst["lattice"] = finite_difference_check(
        lambda: float(np.sum(lat.forward(xl)[0] * gyl)), lat.params)
    # constrained linear
    cl = ConstrainedLinear("cl", rng.standard_normal((3, 2)),
                           rng.standard_normal((3, 4)),
                           rng.standard_normal(3))
    mo = rng.standard_normal((8, 2))
    fr = rng.standard_normal((8, 4))
    gyc = rng.standard_normal((8, 3))
    _, cache = cl.forward(mo, fr)
    cl.backward(cache, gyc)
    worst["constrained-linear"] = finite_difference_check(
        lambda: float(np.sum(cl.forward(mo, fr)[0] * gyc)), cl.params)
    # mlp head
    mlp = MlpHead(4, 3, 6, make_rng(201))
    emb = rng.standard_normal((6, 4))
    gym = rng.standard_normal((6, 3))
    _, cache = mlp.forward(emb, 0.3)
    mlp.backward(cache, gym)
    worst["mlp"] = finite_difference_check(
        lambda: float(np.sum(mlp(emb, 0.3) * gym)), mlp.params)
    # lstm
    lstm = Lstm(LstmConfig(3, 6, 2, 6), make_rng(202))
    xw = rng.standard_normal((4, 6, 3))
    gyw = rng.standard_normal((4, 6))
    _, cache = lstm.forward(xw)
    lstm.backward(cache, gyw)
    worst["lstm"] = finite_difference_check(
        lambda: float(np.sum(lstm.forward(xw)[0] * gyw)), lstm.params)
    # full lattice head
    head = DlnHead(small_dln_cfg(horizon=3), 4, make_rng(203))
    embh = rng.uniform(-0.9, 0.9, (5, 4))
    gyh = rng.standard_normal((5, 3))
    _, cache = head.forward(embh, 0.37)
    head.backward(cache, gyh)
    worst["dln-head"] = finite_difference_check(
        lambda: float(np.sum(head(embh, 0.37) * gyh)), head.params, h=1e-6)
    bad = {k: v for k, v in worst.items() if v >= 1e-4}
    report(not bad, "criterion 6: finite-difference relative errors "
           + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


def test_criterion_7_structural_audit():
    head = DlnHead(DlnHeadConfig(), 128, make_rng(0))
    chain = head.monotone_path_blocks()
    names = [b.name for b in chain]
    tagged = all(b.constraint in ("monotone", "nonnegative") for b in chain)
    complete = (names[0] == "head.quantile_cal"
                and names[-1] == "head.output_cal"
                and "head.out_linear.wq" in names
                and sum(n.startswith("head.lattice.") for n in names) == 64)
    lattice_params = sum(p.size for p in head.ensemble.params)
    ok = tagged and complete and lattice_params == 592_704
    report(ok, "criterion 7: quantile-path constraint chain complete "
               f"({len(names)} blocks) and default lattice parameter count "
               f"{lattice_params} == 592704")


def test_criterion_8_determinism(tmp_path):
    from monoforecast import jobs
    cfg_doc = {
        "dataset": {"synthetic": {"kind": "heteroscedastic-sine",
                                  "length": 400, "seed": 0},
                    "window": 12, "horizon": 4, "time_features": False},
        "model": {"head": "dln", "hidden_size": 6, "num_layers": 1,
                  "dln": {"feature_calib_keypoints": 5,
                          "quantile_calib_keypoints": 5,
                          "lattice_keypoints": 3,
                          "output_calib_keypoints": 5}},
        "train": {"epochs": 2, "batch_size": 64},
    }
    from monoforecast.config import normalize_config
    cfg = normalize_config(cfg_doc)
    a = jobs.run_train(cfg, str(tmp_path / "a"), seed=7)
    b = jobs.run_train(cfg, str(tmp_path / "b"), seed=7)
    same_bytes = (open(a["checkpoint"], "rb").read()
                  == open(b["checkpoint"], "rb").read())
    exp = jobs.run_experiment(cfg, str(tmp_path / "exp"), seeds=[1, 1])
    row = exp["table"][0]
    stds = [row[f"{c}_std"] for c in ("crps", "mae", "rmse", "ace")
            if row[f"{c}_std"] is not None]
    zero_std = len(stds) > 0 and all(s == 0.0 for s in stds)
    ok = same_bytes and not exp["failures"] and zero_std
    report(ok, "criterion 8: same-seed checkpoints byte-identical "
               f"({same_bytes}) and repeated-seed metric stds {stds} all 0")


def test_criterion_9_single_embedding_pass_per_exploit():
    model = build_model("dln", 1, hidden=6, window=12, horizon=4)
    window = np.zeros((12, 1))
    counts = []
    for taus in ([0.5], EVAL_TAUS, TAUS_101):
        before = model.f1_call_count
        model.exploit(window, taus)
        counts.append(model.f1_call_count - before)
    report(counts == [1, 1, 1],
           f"criterion 9: embedding evaluations per exploit call {counts} "
           "regardless of quantile count")


def test_criterion_10_scheduler_and_early_stop():
    ds = synth_generate("heteroscedastic-sine", 400, 0, window=12,
                        horizon=4, time_features=False)
    model = build_model("dln", ds.features.shape[1], hidden=6, window=12,
                        horizon=4)
    scripted = {1: 1.0, 2: 0.4, 3: 0.9, 4: 0.95, 5: 0.99, 6: 1.1}
    snaps = {}

    def scorer(m, epoch):
        snaps[epoch] = [p.values.copy() for p in m.params]
        return scripted[epoch]

    cfg = TrainConfig(epochs=6, base_lr=0.01, batch_size=64, seed=0,
                      schedulers=(StepOnIncrease(1, 0.1),),
                      early_stop_patience=2)
    model, history = train(model, ds, cfg, validation_scorer=scorer)
    lr_dropped = (np.isclose(history[2]["lr"], 0.01)
                  and np.isclose(history[3]["lr"], 0.001))
    stopped = len(history) == 4
    restored = all(np.array_equal(p.values, v)
                   for p, v in zip(model.params, snaps[2]))
    ok = lr_dropped and stopped and restored
    report(ok, "criterion 10: forced CRPS rise at epoch 3 cut the LR "
               f"tenfold at epoch 4 ({lr_dropped}), stopped after epoch 4 "
               f"({stopped}) and restored the epoch-2 parameters "
               f"({restored})")
