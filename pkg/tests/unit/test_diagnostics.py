"""
Unit tests for approximation constants, certification and rate fitting
"""
import math

import numpy as np
import pytest

from ldqn.core.baselines import FixedEstimateWorker
from ldqn.core.diagnostics import (
    ApproxQuality, AssumptionMonitor, SpectrumBounds, build_report, certify, check_rate_condition,
    estimate_quality, estimate_spectrum, fit_epoch_rate, literature_lambda_bounds,
    stepsize_window, theoretical_rate
)
from ldqn.core.error_handler import ConfigError, EventMonitor, InsufficientEpochs, NotPositiveDefinite
from ldqn.core.objectives import SmoothnessConstants
from ldqn.core.simulator import EpochIndex, Trace


def _geometric_trace(steps=10, factor=0.5):
    trace = Trace(np.array([1.0]), f_star=0.0, x_star=np.zeros(1))
    for t in range(steps):
        x = np.array([factor ** t])
        trace.append(t, 1, float(t), 0 if t == 0 else 1, x, abs(x[0]), 0.5 * x[0] ** 2)
    return trace


@pytest.mark.unit
class TestCondition:
    def test_threshold_values(self):
        assert check_rate_condition(1.0, 1.0).threshold == pytest.approx(1 + math.sqrt(2), abs=1e-5)
        assert check_rate_condition(1.0, 2.0).threshold == pytest.approx(1.78078, abs=1e-5)

    def test_threshold_decreases_with_kappa(self):
        kappas = np.linspace(1.0, 100.0, 100)
        thresholds = [check_rate_condition(1.0, k).threshold for k in kappas]
        assert all(b < a for a, b in zip(thresholds, thresholds[1:]))
        assert thresholds[-1] > 1.0

    def test_window_nonempty_exactly_when_condition_holds(self):
        for kappa in (1.0, 2.0, 10.0, 1e3):
            threshold = check_rate_condition(1.0, kappa).threshold
            for eps in (1.0, 0.5 * (1 + threshold), 0.99 * threshold, 1.01 * threshold, 2 * threshold):
                holds = check_rate_condition(eps, kappa).holds
                assert stepsize_window(0.7, 0.7 * eps, kappa).empty == (not holds)

    def test_window_bounds(self):
        window = stepsize_window(1.0, 1.0, 2.0)
        assert (window.lo, window.hi) == pytest.approx((0.5, 1.0))
        assert window.midpoint == pytest.approx(0.75)
        assert window.contains(0.75) and not window.contains(1.0)

    def test_window_empty_for_singular_hessian(self):
        window = stepsize_window(0.0, 2.0, float("inf"))
        assert window.empty
        assert window.hi == pytest.approx(1.0)
        assert stepsize_window(0.0, 0.0, 1.0).empty


@pytest.mark.unit
class TestConstants:
    def test_exact_estimate_has_unit_constants(self):
        H = np.diag([1.0, 2.0, 5.0])
        quality = estimate_quality(H, H)
        assert (quality.eps_d, quality.eps_u, quality.eps) == pytest.approx((1.0, 1.0, 1.0))

    def test_scaled_estimate(self):
        H = np.diag([1.0, 4.0])
        quality = estimate_quality(2.0 * np.eye(2), H)
        assert (quality.eps_d, quality.eps_u) == pytest.approx((0.5, 2.0))
        assert quality.eps == pytest.approx(4.0)

    def test_indefinite_estimate(self):
        with pytest.raises(NotPositiveDefinite):
            estimate_quality(np.diag([1.0, -1.0]), np.eye(2))

    def test_spectrum(self):
        bounds = estimate_spectrum(np.diag([0.5, 3.0]))
        assert (bounds.lambda_d, bounds.lambda_u, bounds.kappa_tilde) == pytest.approx((0.5, 3.0, 6.0))


@pytest.mark.unit
class TestRates:
    def test_theoretical_rate(self):
        rho = theoretical_rate(4, SpectrumBounds(1.0, 2.0), 0.75, 1.0, 2.0)
        assert rho == pytest.approx(0.8 * 0.625)

    def test_lower_variant(self):
        rho = theoretical_rate(4, SpectrumBounds(1.0, 2.0), 0.75, 1.0, 2.0, variant="lower")
        assert rho == pytest.approx(0.8 * 0.5)

    def test_unknown_variant(self):
        with pytest.raises(ConfigError):
            theoretical_rate(4, SpectrumBounds(1.0, 2.0), 0.75, 1.0, 2.0, variant="other")

    def test_literature_bounds_underflow_in_log_space(self):
        bounds = literature_lambda_bounds(20, 1000, 0.01, 1.0)
        assert bounds.lambda_d == 0.0
        assert math.isfinite(bounds.log_lambda_d)
        assert bounds.lambda_u == pytest.approx(1020.0)

    def test_literature_bounds_small_problem(self):
        bounds = literature_lambda_bounds(1, 1, 0.5, 1.0)
        assert bounds.lambda_d == pytest.approx(0.25 / 2.0)

    def test_fit_epoch_rate(self):
        rate = fit_epoch_rate(_geometric_trace(), EpochIndex([0, 3, 6, 9]), np.zeros(1))
        assert rate.epochs_used == 3
        assert rate.per_epoch == pytest.approx([0.5, 0.125 ** 0.5, 0.25])
        assert rate.rho_fitted == pytest.approx(0.5)
        assert not rate.diverged

    def test_fit_epoch_rate_flags_violations(self):
        rate = fit_epoch_rate(_geometric_trace(), EpochIndex([0, 3, 6, 9]), np.zeros(1),
                              rho_theory=0.4, certified=True)
        assert rate.violations == [1]

    def test_fit_epoch_rate_needs_three_epochs(self):
        with pytest.raises(InsufficientEpochs):
            fit_epoch_rate(_geometric_trace(), EpochIndex([0, 3, 6]), np.zeros(1))

    def test_divergence_reported(self):
        rate = fit_epoch_rate(_geometric_trace(factor=1.5), EpochIndex([0, 3, 6, 9]), np.zeros(1))
        assert rate.diverged
        assert rate.to_schema().diverged


@pytest.mark.unit
class TestMonitorAndReport:
    def test_exact_hessian_snapshot(self, quadratic_shards):
        workers = [FixedEstimateWorker(i + 1, s, np.zeros(10)) for i, s in enumerate(quadratic_shards)]
        monitor = AssumptionMonitor(interval=1)
        monitor.snapshot(workers)
        assert monitor.quality().eps == pytest.approx(1.0)
        assert monitor.spectrum().lambda_d == pytest.approx(1.0)
        assert monitor.spectrum().lambda_u == pytest.approx(2.0)
        assert monitor.snapshots == 1

    def test_snapshots_disabled_above_cap(self, quadratic_shards):
        workers = [FixedEstimateWorker(1, quadratic_shards[0], np.zeros(10))]
        monitor = AssumptionMonitor(interval=1, cap=5)
        monitor.snapshot(workers)
        assert monitor.quality() is None

    def test_indefinite_snapshot_counted(self, quadratic_shards):
        worker = FixedEstimateWorker(1, quadratic_shards[0], np.zeros(10), B=-np.eye(10))
        events = EventMonitor()
        AssumptionMonitor(interval=1, monitor=events).snapshot([worker])
        assert events.get_event_stats() == {"INDEFINITE_SNAPSHOT": 1}

    def test_certify_exact_quadratic(self):
        result = certify(ApproxQuality(1.0, 1.0), SmoothnessConstants(1.0, 2.0), 0.75, 4,
                         SpectrumBounds(1.0, 2.0))
        assert result.condition.holds
        assert result.eta_in_window
        assert result.rho_theory == pytest.approx(0.5)
        assert result.certified
        assert result.to_schema().certified

    def test_certify_rejects_eta_outside_window(self):
        result = certify(ApproxQuality(1.0, 1.0), SmoothnessConstants(1.0, 2.0), 1.5, 4,
                         SpectrumBounds(1.0, 2.0))
        assert not result.certified

    def test_build_report(self):
        trace = _geometric_trace()
        report = build_report(solver="ldqn", n_workers=1, d=1, memory=5, eta=0.8, gamma0=1.0,
                              constants=SmoothnessConstants(0.1, 1.0), trace=trace, f_star=0.0,
                              events={"GUARD_PATH": 2})
        assert report.updates == 9
        assert report.final_suboptimality == pytest.approx(0.5 * 0.5 ** 18)
        assert report.literature_bounds is not None
        assert report.events == {"GUARD_PATH": 2}
        assert report.certification is None
