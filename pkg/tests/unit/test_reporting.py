"""
Unit tests for trace files and run comparison
"""
import json

import numpy as np
import pandas as pd
import pytest

from ldqn.core.error_handler import DataError, IncompatibleTraces
from ldqn.core.reporting import (
    REPORT_FILE, RunData, compare_runs, load_run, write_trace_csv
)
from ldqn.core.simulator import Trace


def _trace(rate, steps=8, f_star=1.0):
    trace = Trace(np.zeros(2), f_star=f_star)
    for t in range(steps):
        trace.append(t, t // 2 + 1, 0.5 * t, t % 2, np.zeros(2), 1.0, f_star + rate ** t)
    return trace


@pytest.mark.unit
class TestTraceFiles:
    def test_identical_traces_identical_bytes(self, tmp_path):
        a = write_trace_csv(_trace(0.5), tmp_path / "a" / "trace.csv")
        b = write_trace_csv(_trace(0.5), tmp_path / "b" / "trace.csv")
        assert a.read_bytes() == b.read_bytes()

    def test_full_precision(self, tmp_path):
        trace = Trace(np.zeros(1), f_star=0.0)
        trace.append(0, 1, 0.1, 0, np.zeros(1), 1.0 / 3.0, 0.1)
        frame = pd.read_csv(write_trace_csv(trace, tmp_path / "trace.csv"))
        assert frame["grad_norm"].iloc[0] == 1.0 / 3.0

    def test_load_run(self, tmp_path):
        write_trace_csv(_trace(0.5), tmp_path / "trace.csv")
        (tmp_path / REPORT_FILE).write_text(json.dumps({"solver": "ldqn", "f_star": 1.0, "d": 2}))
        run = load_run(tmp_path, label="x")
        assert run.label == "x"
        assert run.solver == "ldqn"
        assert run.config == {}

    def test_load_missing_run(self, tmp_path):
        with pytest.raises(DataError):
            load_run(tmp_path / "nothing")


@pytest.mark.unit
class TestCompareRuns:
    def test_identical_traces_identical_columns(self):
        tables = compare_runs([RunData.from_trace("a", _trace(0.5)), RunData.from_trace("b", _trace(0.5))])
        by_epoch = tables["by_epoch"]
        pd.testing.assert_series_equal(by_epoch["a"], by_epoch["b"], check_names=False)

    def test_time_to_tolerance(self):
        tables = compare_runs([RunData.from_trace("fast", _trace(0.1)),
                               RunData.from_trace("slow", _trace(0.9))], tol=2e-3)
        summary = tables["time_to_tolerance"]
        assert summary.loc["fast", "updates_to_tol"] == 3
        assert np.isnan(summary.loc["slow", "updates_to_tol"])
        assert summary.loc["fast", "epochs_to_tol"] == 1

    def test_by_time_is_sorted(self):
        tables = compare_runs([RunData.from_trace("a", _trace(0.5)), RunData.from_trace("b", _trace(0.3))])
        assert tables["by_time"]["virtual_time"].is_monotonic_increasing

    def test_missing_f_star(self):
        with pytest.raises(IncompatibleTraces):
            compare_runs([RunData.from_trace("a", _trace(0.5)),
                          RunData.from_trace("b", Trace(np.zeros(2)))])

    def test_different_f_star(self):
        with pytest.raises(IncompatibleTraces):
            compare_runs([RunData.from_trace("a", _trace(0.5, f_star=1.0)),
                           RunData.from_trace("b", _trace(0.5, f_star=2.0))])

    def test_duplicate_labels(self):
        run = RunData.from_trace("a", _trace(0.5))
        with pytest.raises(IncompatibleTraces):
            compare_runs([run, run])

    def test_no_runs(self):
        with pytest.raises(IncompatibleTraces):
            compare_runs([])
