"""
Run Outputs
Trace CSV files, run loading and cross-run comparison tables
"""
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd

from ldqn.core.error_handler import DataError, IncompatibleTraces
from ldqn.core.simulator import Trace

TRACE_FILE = "trace.csv"
REPORT_FILE = "report.json"
CONFIG_FILE = "config.json"


def write_trace_csv(trace: Trace, path) -> Path:
    """Write the trace; identical traces give identical bytes"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    trace.to_frame().to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    return path


@dataclass
class RunData:
    """One run directory: trace, report and config"""
    label: str
    trace: pd.DataFrame
    report: dict
    config: dict

    @classmethod
    def from_trace(cls, label: str, trace: Trace, solver: str = None) -> "RunData":
        report = {"solver": solver or label, "f_star": trace.f_star, "d": int(trace.x0.shape[0])}
        return cls(label=label, trace=trace.to_frame(), report=report, config={})

    @property
    def f_star(self) -> Optional[float]:
        return self.report.get("f_star")

    @property
    def solver(self) -> str:
        return self.report.get("solver", self.label)


def load_run(path, label: str = None) -> RunData:
    path = Path(path)
    try:
        trace = pd.read_csv(path / TRACE_FILE)
        report = json.loads((path / REPORT_FILE).read_text())
        config_path = path / CONFIG_FILE
        config = json.loads(config_path.read_text()) if config_path.exists() else {}
    except (OSError, ValueError) as e:
        raise DataError(f"cannot load run from {path}: {e}", details={"path": str(path)})
    return RunData(label=label or path.name, trace=trace, report=report, config=config)


def _check_compatible(runs: Sequence[RunData]) -> float:
    if not runs:
        raise IncompatibleTraces("no runs to compare")
    f_stars = [run.f_star for run in runs]
    if any(f is None for f in f_stars):
        missing = [run.label for run in runs if run.f_star is None]
        raise IncompatibleTraces(f"runs without a reference optimum: {missing}")
    reference = f_stars[0]
    for run, f in zip(runs, f_stars):
        if not math.isclose(f, reference, rel_tol=1e-9, abs_tol=1e-12):
            raise IncompatibleTraces(f"run {run.label} has f*={f}, expected {reference}",
                                     details={"label": run.label})
        if run.trace["suboptimality"].isna().all():
            raise IncompatibleTraces(f"run {run.label} carries no suboptimality column")
    dims = {run.report.get("d") for run in runs}
    if len(dims) > 1:
        raise IncompatibleTraces(f"runs disagree on dimension: {sorted(dims)}")
    return reference


def compare_runs(runs: Sequence[RunData], tol: float = 1e-4) -> Dict[str, pd.DataFrame]:
    """Suboptimality by completed epoch and by virtual time, plus time-to-tolerance"""
    _check_compatible(runs)
    labels = [run.label for run in runs]
    if len(set(labels)) != len(labels):
        raise IncompatibleTraces(f"run labels must be unique: {labels}")

    by_epoch = {}
    by_time = []
    summary = []
    for run in runs:
        frame = run.trace.copy()
        frame["epochs_completed"] = frame["epoch"] - 1
        by_epoch[run.label] = frame.groupby("epochs_completed")["suboptimality"].last()
        by_time.append(frame[["virtual_time", "suboptimality"]].assign(run=run.label))

        reached = frame[frame["suboptimality"] <= tol]
        first = reached.iloc[0] if len(reached) else None
        summary.append({
            "run": run.label,
            "solver": run.solver,
            "updates": int(frame["t"].iloc[-1]),
            "final_suboptimality": float(frame["suboptimality"].iloc[-1]),
            "epochs_to_tol": int(first["epochs_completed"]) if first is not None else np.nan,
            "updates_to_tol": int(first["t"]) if first is not None else np.nan,
            "time_to_tol": float(first["virtual_time"]) if first is not None else np.nan,
        })

    return {
        "by_epoch": pd.DataFrame(by_epoch).sort_index(),
        "by_time": pd.concat(by_time, ignore_index=True).sort_values(["virtual_time", "run"], kind="stable"),
        "time_to_tolerance": pd.DataFrame(summary).set_index("run"),
    }
