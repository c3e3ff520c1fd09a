"""
Command-line entry point for L-DQN experiments
`python -m ldqn.main run ...` executes one solver; `compare` aligns finished runs
"""
import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from ldqn.config import settings
from ldqn.core.baselines import DenseWorkerState, FixedEstimateWorker, run_sync_gd
from ldqn.core.data import generate_synthetic, load_libsvm, partition
from ldqn.core.diagnostics import AssumptionMonitor, build_report, certify, fit_epoch_rate
from ldqn.core.error_handler import (
    ConfigError, DimensionTooLarge, EventMonitor, InsufficientEpochs, LDQNError, EXIT_OK, error_handler
)
from ldqn.core.logging import cli_logger as logger, log_function_calls, solver_logger
from ldqn.core.memory_manager import StateMemoryMonitor
from ldqn.core.objectives import (
    FiniteSumObjective, global_constants, random_quadratic_shards, reference_solution
)
from ldqn.core.protocol_master import master_init
from ldqn.core.protocol_worker import LimitedMemoryWorker, WorkerNode
from ldqn.core.reporting import CONFIG_FILE, REPORT_FILE, TRACE_FILE, compare_runs, load_run, write_trace_csv
from ldqn.core.simulator import CommHistory, DelayModel, StopRule, Trace, compute_epochs, run as simulate
from ldqn.core.threaded_runtime import run_threaded
from ldqn.schemas.report_schemas import DiagnosticsReport
from ldqn.schemas.run_schemas import (
    RunConfig, merge_config, parse_config_text, parse_delay_spec, parse_inline_spec
)


@dataclass
class RunResult:
    config: RunConfig
    trace: Trace
    report: DiagnosticsReport
    history: Optional[CommHistory] = None
    x_star: Optional[np.ndarray] = None
    output_dir: Optional[Path] = None


# ==================== PROBLEM CONSTRUCTION ====================

def build_shards(cfg: RunConfig):
    spec = cfg.dataset
    if spec.kind == "quadratic":
        return random_quadratic_shards(cfg.workers, spec.d, spec.eig_lo, spec.eig_hi, spec.seed)
    if spec.kind == "synthetic":
        dataset = generate_synthetic(spec)
    else:
        dataset = load_libsvm(spec.path, normalize=spec.normalize, n_features=spec.n_features)
    return partition(dataset, cfg.workers, seed=cfg.seed, lam=spec.lam)


def build_workers(cfg: RunConfig, shards, x0: np.ndarray, gamma0: float) -> List[WorkerNode]:
    if cfg.solver == "daveqn":
        return [DenseWorkerState(i + 1, shard, x0, gamma0) for i, shard in enumerate(shards)]
    if cfg.exact_hessian:
        return [FixedEstimateWorker(i + 1, shard, x0) for i, shard in enumerate(shards)]
    return [LimitedMemoryWorker(i + 1, shard, x0, gamma0, cfg.memory, cfg.fixed_gamma)
            for i, shard in enumerate(shards)]


def _check_dense_cap(cfg: RunConfig, d: int) -> None:
    if cfg.solver == "daveqn" and d > settings.DENSE_CAP:
        raise DimensionTooLarge(
            f"DAve-QN cannot run: each worker would hold a {d}x{d} matrix "
            f"({d * d * 8 / 1024 / 1024:.1f} MB), above the dense cap of {settings.DENSE_CAP}. "
            f"Use --solver ldqn, whose workers need O(md) memory.",
            details={"d": d, "cap": settings.DENSE_CAP})


# ==================== EXECUTION ====================

@log_function_calls("ldqn.cli")
def execute(cfg: RunConfig) -> RunResult:
    """Run one experiment in memory and build its diagnostics report"""
    if cfg.dataset.kind != "quadratic" and cfg.exact_hessian:
        raise ConfigError("exact-Hessian mode is only available for quadratic problems")
    if cfg.dataset.kind == "quadratic":
        _check_dense_cap(cfg, cfg.dataset.d)

    shards = build_shards(cfg)
    objective = FiniteSumObjective(shards)
    d = objective.d
    _check_dense_cap(cfg, d)
    constants = global_constants(shards)
    x_star, f_star, reference_grad = reference_solution(objective)

    eta = cfg.resolved_eta(constants.L)
    gamma0 = cfg.gamma0 if cfg.gamma0 is not None else constants.L
    if not gamma0 > 0:
        raise ConfigError("cannot derive gamma0 from a zero smoothness constant; set gamma0")
    x0 = np.zeros(d)
    stop = StopRule.from_spec(cfg.stop)
    events = EventMonitor()
    memory_monitor = StateMemoryMonitor()

    if cfg.solver == "gd":
        trace = run_sync_gd(objective, x0, eta, stop, f_star=f_star, x_star=x_star)
        report = build_report(solver=cfg.solver, n_workers=cfg.workers, d=d, memory=0, eta=eta,
                              gamma0=gamma0, constants=constants, trace=trace, f_star=f_star,
                              reference_grad_norm=reference_grad,
                              memory_usage=memory_monitor.summary())
        return RunResult(cfg, trace, report, x_star=x_star)

    workers = build_workers(cfg, shards, x0, gamma0)
    master = master_init(x0, eta, workers)
    master.monitor = events
    memory_monitor.observe_all(workers)

    observers = []
    assumption = None
    if cfg.snapshot_interval > 0 and d <= settings.DENSE_CAP:
        assumption = AssumptionMonitor(cfg.snapshot_interval, monitor=events)
        observers.append(assumption)

    def account_memory(master_state, worker_list, record):
        if record.t % cfg.observe_every == 0:
            memory_monitor.observe_all(worker_list)

    observers.append(account_memory)

    if cfg.runtime == "threaded":
        trace, history = run_threaded(workers, master, stop, objective=objective, f_star=f_star,
                                      x_star=x_star, observers=observers)
    else:
        trace, history = simulate(workers, master, DelayModel.from_spec(cfg.delay), stop,
                                  objective=objective, f_star=f_star, x_star=x_star, observers=observers)

    epochs = compute_epochs(history, master.t)
    if epochs.starts != trace.epochs.starts:
        logger.warning("Online epoch detection disagrees with the batch computation; using the batch result")
        trace.epochs = epochs

    quality = assumption.quality() if assumption else None
    spectrum = assumption.spectrum() if assumption else None
    certification = certify(quality, constants, eta, len(workers), spectrum) if quality else None

    rate, rate_note = None, None
    try:
        rate = fit_epoch_rate(trace, epochs, x_star,
                              rho_theory=certification.rho_theory if certification else None,
                              certified=bool(certification and certification.certified),
                              window=certification.window if certification else None)
    except InsufficientEpochs as e:
        rate_note = e.message

    report = build_report(
        solver=cfg.solver, n_workers=len(workers), d=d, memory=cfg.memory, eta=eta, gamma0=gamma0,
        constants=constants, trace=trace, f_star=f_star, reference_grad_norm=reference_grad,
        quality=quality, spectrum=spectrum, snapshots=assumption.snapshots if assumption else 0,
        certification=certification, rate=rate, rate_note=rate_note,
        memory_usage=memory_monitor.summary(), events=events.get_event_stats(),
        master=master.counters(),
    )
    solver_logger.log_event("RUN_SUMMARY", {
        "solver": cfg.solver, "updates": master.t, "epochs": epochs.complete_epochs,
        "final_suboptimality": report.final_suboptimality, "stop": trace.stop_reason,
    }, level=logging.INFO)
    return RunResult(cfg, trace, report, history=history, x_star=x_star)


def resolve_output_dir(cfg: RunConfig) -> Path:
    """Environment override first, then the config value, then a per-solver default"""
    default = os.path.join(settings.OUTPUT_DIR, f"{cfg.solver}-seed{cfg.seed}")
    return Path(settings.output_dir(cfg.output_dir or default))


def write_outputs(result: RunResult, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_trace_csv(result.trace, out_dir / TRACE_FILE)
    (out_dir / REPORT_FILE).write_text(result.report.model_dump_json(indent=2) + "\n")
    resolved = result.config.model_copy(update={"output_dir": str(out_dir)})
    (out_dir / CONFIG_FILE).write_text(resolved.to_json() + "\n")
    result.output_dir = out_dir
    return out_dir


def run_experiment(cfg: RunConfig) -> int:
    """Execute, write trace/report/config, and map failures to exit codes"""
    try:
        out_dir = resolve_output_dir(cfg)
        result = execute(cfg)
        write_outputs(result, out_dir)
    except LDQNError as e:
        report = error_handler.handle(e)
        print(f"❌ [{e.code}] {e.message}", file=sys.stderr)
        return report["error"]["exit_code"]
    except Exception as e:
        logger.exception(f"Unexpected failure: {e}")
        report = error_handler.handle(e)
        print(f"❌ Unexpected error: {e}", file=sys.stderr)
        return report["error"]["exit_code"]

    summary = result.report
    print(f"✅ {cfg.solver}: {summary.updates} updates, {summary.epochs_completed} epochs, "
          f"final suboptimality {summary.final_suboptimality}")
    print(f"   outputs written to {out_dir}")
    return EXIT_OK


def compare(run_dirs: Sequence[str], tol: float, output: Optional[str] = None) -> int:
    try:
        runs = [load_run(path) for path in run_dirs]
        tables = compare_runs(runs, tol)
    except LDQNError as e:
        error_handler.handle(e)
        print(f"❌ [{e.code}] {e.message}", file=sys.stderr)
        return e.exit_code

    print(tables["time_to_tolerance"].to_string())
    if output:
        out = Path(output)
        out.mkdir(parents=True, exist_ok=True)
        for name, table in tables.items():
            table.to_csv(out / f"{name}.csv", float_format="%.17g", lineterminator="\n")
        print(f"✅ comparison tables written to {out}")
    return EXIT_OK


# ==================== ARGUMENT PARSING ====================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ldqn", description="Asynchronous limited-memory quasi-Newton experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="Run one solver and write trace/report/config")
    run_p.add_argument("--config", help="JSON or key=value config file; flags override it")
    run_p.add_argument("--solver", choices=["ldqn", "daveqn", "gd"])
    data = run_p.add_mutually_exclusive_group()
    data.add_argument("--dataset", help="LIBSVM file (.gz accepted)")
    data.add_argument("--synthetic", help="Synthetic spec, e.g. d=50,N=2000,sparsity=0.5,seed=1")
    data.add_argument("--quadratic", help="Quadratic spec, e.g. d=10,eig_lo=1,eig_hi=2,seed=0")
    run_p.add_argument("--lam", type=float, help="Regularization weight")
    run_p.add_argument("--no-normalize", action="store_true", help="Keep raw LIBSVM feature values")
    run_p.add_argument("--workers", type=int)
    run_p.add_argument("--memory", type=int)
    run_p.add_argument("--eta", type=float)
    run_p.add_argument("--gamma0", type=float)
    run_p.add_argument("--delay", help="Delay model, e.g. uniform-integer:low=1,high=4,seed=3")
    run_p.add_argument("--seed", type=int)
    run_p.add_argument("--stop", help="Stop rule, e.g. max_updates=2000,subopt_tol=1e-8")
    run_p.add_argument("--output-dir")
    run_p.add_argument("--snapshot-interval", type=int)
    run_p.add_argument("--observe-every", type=int)
    run_p.add_argument("--fixed-gamma", action="store_true", default=None)
    run_p.add_argument("--exact-hessian", action="store_true", default=None)
    run_p.add_argument("--runtime", choices=["simulated", "threaded"])

    cmp_p = sub.add_parser("compare", help="Compare finished runs")
    cmp_p.add_argument("runs", nargs="+", help="Run directories")
    cmp_p.add_argument("--tol", type=float, default=1e-4, help="Suboptimality tolerance")
    cmp_p.add_argument("--output", help="Directory for the comparison CSV tables")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """File values first, then flags"""
    base = {}
    if args.config:
        try:
            base = parse_config_text(Path(args.config).read_text())
        except OSError as e:
            raise ConfigError(f"cannot read config file {args.config}: {e}")

    overrides = {}
    for key in ("solver", "workers", "memory", "eta", "gamma0", "seed", "output_dir",
                "snapshot_interval", "observe_every", "fixed_gamma", "exact_hessian", "runtime"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value

    dataset = {}
    if args.dataset:
        dataset = {"kind": "libsvm", "path": args.dataset}
    elif args.synthetic is not None:
        dataset = {"kind": "synthetic", **parse_inline_spec(args.synthetic)}
    elif args.quadratic is not None:
        dataset = {"kind": "quadratic", **parse_inline_spec(args.quadratic)}
    if args.lam is not None:
        dataset["lam"] = args.lam
    if args.no_normalize:
        dataset["normalize"] = False
    if dataset:
        if "kind" in dataset and base.get("dataset", {}).get("kind") != dataset["kind"]:
            base.pop("dataset", None)
        overrides["dataset"] = dataset
    if args.delay:
        overrides["delay"] = parse_delay_spec(args.delay)
    if args.stop:
        overrides["stop"] = parse_inline_spec(args.stop)

    try:
        return RunConfig.model_validate(merge_config(base, overrides))
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e.error_count()} error(s)",
                          details={"errors": json.loads(e.json())})


def main(argv: Sequence[str] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "compare":
        return compare(args.runs, args.tol, args.output)
    try:
        cfg = config_from_args(args)
    except (ConfigError, ValueError) as e:
        if not isinstance(e, LDQNError):
            e = ConfigError(str(e))
        error_handler.handle(e)
        print(f"❌ [{e.code}] {e.message}", file=sys.stderr)
        return e.exit_code
    return run_experiment(cfg)


if __name__ == "__main__":
    sys.exit(main())
