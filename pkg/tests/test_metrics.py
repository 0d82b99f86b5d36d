import numpy as np
import pytest

from monoforecast.heads import EVAL_TAUS
from monoforecast.metrics import (REPORT_SCHEMA, ace,
                                  crps_approx, evaluate_forecasts,
                                  picp, point_metrics, reliability,
                                  skill_score)
from monoforecast.numerics import make_rng


def random_case(seed=0, N=30, Q=11, h=5):
    rng = make_rng(seed)
    y = rng.standard_normal((N, h))
    forecasts = np.sort(rng.standard_normal((N, Q, h)), axis=1)
    return y, forecasts


class TestPointMetrics:
    def test_hand_example(self):
        y = np.array([[1.0, 2.0], [3.0, 4.0]])
        y_hat = np.array([[2.0, 2.0], [3.0, 2.0]])
        mae, rmse = point_metrics(y, y_hat)
        # per step: MAE (0.5, 1.0); RMSE (1/sqrt(2), sqrt(2))
        assert np.isclose(mae, 0.75)
        assert np.isclose(rmse, 0.5 * (np.sqrt(0.5) + np.sqrt(2.0)))

    def test_double_loop_oracle(self):
        rng = make_rng(1)
        y = rng.standard_normal((12, 4))
        y_hat = rng.standard_normal((12, 4))
        mae, rmse = point_metrics(y, y_hat)
        maes, rmses = [], []
        for s in range(4):
            errs = [y[n, s] - y_hat[n, s] for n in range(12)]
            maes.append(np.mean(np.abs(errs)))
            rmses.append(np.sqrt(np.mean(np.square(errs))))
        assert np.isclose(mae, np.mean(maes), atol=1e-12)
        assert np.isclose(rmse, np.mean(rmses), atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            point_metrics(np.zeros((2, 3)), np.zeros((3, 2)))


def test_skill_score():
    assert np.isclose(skill_score(1.0, 2.0), 0.5)
    assert skill_score(2.0, 1.0) < 0
    with pytest.raises(ValueError):
        skill_score(1.0, 0.0)


class TestCrps:
    def test_double_loop_oracle(self):
        y, forecasts = random_case(2)
        taus = EVAL_TAUS
        got = crps_approx(y, forecasts, taus)
        total = 0.0
        count = 0
        for n in range(y.shape[0]):
            for s in range(y.shape[1]):
                cell = 0.0
                for q, t in enumerate(taus):
                    e = y[n, s] - forecasts[n, q, s]
                    cell += t * e if e >= 0 else (t - 1.0) * e
                total += cell
                count += 1
        assert np.isclose(got, total / count, atol=1e-12)

    def test_perfect_forecast_is_cheap(self):
        y = make_rng(3).standard_normal((10, 3))
        sharp = np.repeat(y[:, None, :], EVAL_TAUS.size, axis=1)
        wide = sharp + np.linspace(-5, 5, 11)[None, :, None]
        assert crps_approx(y, sharp, EVAL_TAUS) < crps_approx(
            y, np.sort(wide, axis=1), EVAL_TAUS)

    def test_shape_check(self):
        with pytest.raises(ValueError):
            crps_approx(np.zeros((2, 3)), np.zeros((2, 4, 3)), EVAL_TAUS)


class TestPicpAce:
    def test_counting_oracle(self):
        y, forecasts = random_case(4)
        curve = picp(y, forecasts, EVAL_TAUS)
        Q = EVAL_TAUS.size
        pairs = sorted((EVAL_TAUS[Q - 1 - i] - EVAL_TAUS[i], i, Q - 1 - i)
                       for i in range(Q // 2))
        assert len(curve) == Q // 2
        for (nominal, empirical), (ref_nom, lo, hi) in zip(curve, pairs):
            assert np.isclose(nominal, ref_nom)
            hits = 0
            for n in range(y.shape[0]):
                for s in range(y.shape[1]):
                    if forecasts[n, lo, s] <= y[n, s] <= forecasts[n, hi, s]:
                        hits += 1
            assert np.isclose(empirical, hits / y.size, atol=1e-12)

    def test_boundary_counts_as_covered(self):
        y = np.array([[1.0]])
        forecasts = np.full((1, 11, 1), 1.0)
        curve = picp(y, forecasts, EVAL_TAUS)
        assert all(e == 1.0 for _, e in curve)  # y sits on every boundary

    def test_requires_symmetric_grid(self):
        with pytest.raises(ValueError):
            picp(np.zeros((1, 1)), np.zeros((1, 3, 1)),
                 np.array([0.1, 0.2, 0.3]))

    def test_ace_hand_example(self):
        assert np.isclose(ace([(0.5, 0.4), (0.9, 1.0)]), 0.1)
        with pytest.raises(ValueError):
            ace([])

    def test_permutation_invariance(self):
        y, forecasts = random_case(5)
        perm = make_rng(6).permutation(y.shape[0])
        a = picp(y, forecasts, EVAL_TAUS)
        b = picp(y[perm], forecasts[perm], EVAL_TAUS)
        assert np.allclose(np.asarray(a), np.asarray(b), atol=1e-12)


class TestReliability:
    def test_counting_oracle(self):
        y, forecasts = random_case(7)
        curve = reliability(y, forecasts, EVAL_TAUS)
        for (tau, emp), q in zip(curve, range(EVAL_TAUS.size)):
            hits = sum(y[n, s] <= forecasts[n, q, s]
                       for n in range(y.shape[0])
                       for s in range(y.shape[1]))
            assert np.isclose(emp, hits / y.size, atol=1e-12)

    def test_gaussian_monte_carlo(self):
        # true quantiles of a standard normal should be well calibrated
        from scipy.stats import norm
        rng = make_rng(8)
        N = 100_000
        y = rng.standard_normal((N, 1))
        forecasts = np.tile(norm.ppf(EVAL_TAUS).reshape(1, -1, 1), (N, 1, 1))
        for tau, emp in reliability(y, forecasts, EVAL_TAUS):
            assert abs(emp - tau) < 0.01

    def test_picp_matches_reliability_on_tie_free_data(self):
        # closed-interval coverage equals the difference of the one-sided
        # fractions when no observation ties a forecast exactly
        y, forecasts = random_case(9)
        rel = [e for _, e in reliability(y, forecasts, EVAL_TAUS)]
        Q = EVAL_TAUS.size
        pairs = sorted((EVAL_TAUS[Q - 1 - i] - EVAL_TAUS[i], i, Q - 1 - i)
                       for i in range(Q // 2))
        for (nominal, empirical), (_, lo, hi) in zip(
                picp(y, forecasts, EVAL_TAUS), pairs):
            assert np.isclose(empirical, rel[hi] - rel[lo], atol=1e-12)


class TestReportAssembly:
    def test_full_report_schema(self):
        import jsonschema
        y, forecasts = random_case(10)
        rep = evaluate_forecasts(y, forecasts, EVAL_TAUS,
                                 persistence=np.zeros_like(y))
        doc = __import__("json").loads(rep.to_json())
        jsonschema.validate(doc, REPORT_SCHEMA)
        assert doc["ss"] is not None

    def test_point_only_report(self):
        y, forecasts = random_case(11)
        rep = evaluate_forecasts(y, forecasts, EVAL_TAUS, point_only=True)
        assert rep.crps is None and rep.ace is None
        assert rep.crossover_rate == 0.0

    def test_median_column_drives_point_metrics(self):
        y, forecasts = random_case(12)
        rep = evaluate_forecasts(y, forecasts, EVAL_TAUS)
        med = forecasts[:, 5, :]  # tau = 0.5 sits at index 5 of the grid
        mae, rmse = point_metrics(y, med)
        assert np.isclose(rep.mae, mae)
        assert np.isclose(rep.rmse, rmse)

    def test_write_curves(self, tmp_path):
        y, forecasts = random_case(13)
        rep = evaluate_forecasts(y, forecasts, EVAL_TAUS)
        p1 = tmp_path / "picp.csv"
        p2 = tmp_path / "rel.csv"
        rep.write_curves(p1, p2)
        lines = p1.read_text().splitlines()
        assert lines[0] == "nominal,empirical"
        assert len(lines) == 1 + len(rep.picp_curve)
        assert p2.read_text().splitlines()[0] == "quantile,empirical"
