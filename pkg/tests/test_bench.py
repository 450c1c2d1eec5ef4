from itertools import product

import numpy as np
import pytest

from conftest import tiny_arch, tiny_model
from src.fieldamort.bench import (
    NO_CROSSOVER,
    CostFit,
    ScalingPoint,
    ScalingReport,
    SweepConfig,
    crossover,
    fit_amortized,
    fit_exact,
    run_sweep,
)
from src.fieldamort.config import DESK_SCALE
from src.fieldamort.errors import ConfigError, UsageError
from src.fieldamort.models import OracleReplay, build_model
from src.fieldamort.numerics import make_rng
from src.fieldamort.oracle import Box

SMALL = list(product([4, 16], [4, 16]))


def synthetic_points(exact, amortized, sizes):
    return [ScalingPoint(m, n, exact(m, n), amortized(m, n), m * n, m + n) for m, n in sizes]


class TestFits:
    def test_exact_recovers_coefficients(self):
        pts = synthetic_points(lambda m, n: 2e-9 * m * n + 1e-4, lambda m, n: 0.0, product([256, 1024], [256, 2048]))
        fit = fit_exact(pts)
        assert fit.coefficients["mn"] == pytest.approx(2e-9, rel=1e-8)
        assert fit.coefficients["const"] == pytest.approx(1e-4, rel=1e-6)
        assert fit.r2 == pytest.approx(1.0)

    def test_amortized_recovers_coefficients(self):
        pts = synthetic_points(lambda m, n: 0.0, lambda m, n: 3e-7 * m + 5e-6 * n + 2e-5,
                               product([256, 512, 2048], [256, 1024, 2048]))
        fit = fit_amortized(pts)
        assert fit.coefficients["m"] == pytest.approx(3e-7, rel=1e-8)
        assert fit.coefficients["n"] == pytest.approx(5e-6, rel=1e-8)
        assert fit.r2 == pytest.approx(1.0)

    def test_predict(self):
        assert CostFit({"mn": 2.0, "const": 1.0}, 1.0).predict(3, 4) == 25.0
        assert CostFit({"m": 1.0, "n": 2.0, "const": 3.0}, 1.0).predict(3, 4) == 14.0


def report_with(exact, amortized, sizes):
    return ScalingReport(synthetic_points(lambda m, n: 0.0, lambda m, n: 0.0, sizes), exact, amortized)


class TestCrossover:
    def test_exact_cheaper_everywhere(self):
        rep = report_with(CostFit({"mn": 1e-12, "const": 0.0}, 1.0), CostFit({"m": 1.0, "n": 1.0, "const": 1.0}, 1.0),
                          product([256, 2048], [256, 2048]))
        result = crossover(rep)
        assert not result.found
        assert result.message == NO_CROSSOVER
        assert result.contour == []

    def test_contour_mn_equals_m_plus_n(self):
        rep = report_with(CostFit({"mn": 1.0, "const": 0.0}, 1.0), CostFit({"m": 1.0, "n": 1.0, "const": 0.0}, 1.0),
                          product([2, 8], [2, 8]))
        result = crossover(rep)
        assert result.found
        for m, n in result.contour:
            assert m * n == pytest.approx(m + n, rel=1e-12)
        assert result.exact_fit is rep.exact_fit

    def test_amortized_cheaper_everywhere(self):
        rep = report_with(CostFit({"mn": 1.0, "const": 0.0}, 1.0), CostFit({"m": 1e-3, "n": 1e-3, "const": 0.0}, 1.0),
                          product([256, 2048], [256, 2048]))
        assert crossover(rep).message == NO_CROSSOVER


class TestSweep:
    def test_counts_are_exact(self):
        report = run_sweep(tiny_model("fourier"), SMALL, repeats=3)
        for p in report.points:
            assert p.exact_ops == p.m_points * p.n_sources
            assert p.amortized_ops == p.m_points + p.n_sources
            assert p.exact_time > 0 and p.amortized_time > 0

    def test_oracle_replay_counts_pairs(self):
        report = run_sweep(OracleReplay(), SMALL, repeats=3)
        assert all(p.amortized_ops == p.m_points * p.n_sources for p in report.points)

    def test_json(self, tmp_path):
        report = run_sweep(tiny_model("linear"), SMALL, repeats=3)
        path = report.write_json(tmp_path / "scaling.json")
        assert path.exists()
        assert set(report.to_dict()) == {"points", "exact_fit", "amortized_fit"}

    @pytest.mark.parametrize("kwargs,match", [
        ({"threads": 2}, "single-threaded"),
        ({"repeats": 2}, "3 timing repeats"),
        ({"sizes": SMALL[:3]}, "at least 4 sizes"),
        ({"sizes": list(product([4, 8], [4, 16]))}, "4x range"),
    ])
    def test_refuses_bad_sweeps(self, kwargs, match):
        args = {"sizes": SMALL, "repeats": 3, "threads": 1, **kwargs}
        with pytest.raises(UsageError, match=match):
            run_sweep(tiny_model("linear"), args["sizes"], args["repeats"], threads=args["threads"])


class TestSweepConfig:
    def test_defaults(self):
        cfg = SweepConfig.from_dict({})
        assert len(cfg.sizes) == 16
        assert cfg.repeats == 3

    def test_explicit_sizes(self):
        assert SweepConfig.from_dict({"sizes": [[1, 2], [3, 4]]}).sizes == ((1, 2), (3, 4))

    def test_override(self):
        assert SweepConfig.from_dict({"repeats": 5}, repeats=7).repeats == 7

    def test_bad_values(self):
        with pytest.raises(ConfigError, match="bench.m_values"):
            SweepConfig.from_dict({"m_values": [0, 4]})
        with pytest.raises(ConfigError, match="bench.seeds"):
            SweepConfig.from_dict({"seeds": 1})


@pytest.mark.performance
class TestScaling:
    def test_cost_models_fit(self):
        model = build_model(tiny_arch("fourier", n_max=DESK_SCALE["n_max"]), Box.square(), make_rng(0))
        report = run_sweep(model, list(product([256, 512, 1024, 2048], repeat=2)), repeats=5)
        assert report.exact_fit.r2 >= 0.98
        assert report.amortized_fit.r2 >= 0.95
        t = {(p.m_points, p.n_sources): p for p in report.points}
        assert 3.0 <= t[2048, 2048].exact_time / t[1024, 1024].exact_time <= 5.5
        assert 1.5 <= t[2048, 2048].amortized_time / t[1024, 1024].amortized_time <= 2.8
        assert np.isfinite(report.exact_fit.coefficients["mn"])
