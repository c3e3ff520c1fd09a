"""
Threaded Runtime
Workers compute on a thread pool; the master consumes finished messages one
at a time on the calling thread
"""
import time
from concurrent.futures import ThreadPoolExecutor, wait, FIRST_COMPLETED
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ldqn.core.error_handler import ConfigError
from ldqn.core.logging import simulator_logger
from ldqn.core.objectives import FiniteSumObjective
from ldqn.core.protocol_master import MasterState, master_step
from ldqn.core.protocol_worker import WorkerMessage, WorkerNode
from ldqn.core.simulator import CommHistory, EpochTracker, Observer, StopRule, Trace, _metrics


def run_threaded(workers: Sequence[WorkerNode], master: MasterState, stop: StopRule,
                 max_workers: Optional[int] = None, objective: FiniteSumObjective = None,
                 f_star: float = None, x_star: np.ndarray = None,
                 observers: Sequence[Observer] = ()) -> Tuple[Trace, CommHistory]:
    """Same contract as the simulator, but virtual time is wall-clock seconds

    Each worker has at most one step in flight, so worker states stay
    single-owner. Observers only see workers with no step running. Steps
    still in flight when the stop rule fires are absorbed before returning,
    so the master ledgers match the worker states. Not bit-reproducible
    across runs.
    """
    by_id = {w.worker_id: w for w in workers}
    if len(by_id) != len(workers):
        raise ConfigError("worker ids must be unique")

    history = CommHistory({wid: [] for wid in by_id})
    tracker = EpochTracker(list(by_id))
    trace = Trace(master.x, f_star=f_star, x_star=x_star)
    loss0, grad0 = _metrics(objective, master.x, float(np.linalg.norm(master.g)) / master.n_workers)
    trace.append(master.t, 1, 0.0, 0, master.x, grad0, loss0)
    start = time.perf_counter()
    in_flight = {}

    def settled() -> List[WorkerNode]:
        running = {wid for future, wid in in_flight.items() if not future.done()}
        return [w for w in workers if w.worker_id not in running]

    def absorb(wid: int, msg: WorkerMessage) -> Optional[str]:
        nonlocal master
        master, record = master_step(master, msg)
        history.record(wid, record.t)
        if tracker.record(wid, record.t):
            simulator_logger.log_event("EPOCH", {"epoch": tracker.current_epoch, "t": record.t})
        loss, grad_norm = _metrics(objective, master.x, record.grad_norm)
        row = trace.append(record.t, tracker.current_epoch, time.perf_counter() - start, wid, master.x,
                           grad_norm, loss, skipped=record.skipped, rejected=record.rejected)
        if observers:
            idle = settled()
            for observer in observers:
                observer(master, idle, record)
        subopt = row["suboptimality"] if f_star is not None else None
        return stop.reason(record.t, tracker.epochs.complete_epochs, grad_norm, subopt)

    reason = stop.reason(master.t, 0, grad0, trace.rows[0]["suboptimality"] if f_star is not None else None)
    with ThreadPoolExecutor(max_workers=max_workers or len(by_id)) as pool:
        if reason is None:
            in_flight.update({pool.submit(by_id[wid].step, master.x.copy()): wid for wid in sorted(by_id)})
        while reason is None:
            done, _ = wait(list(in_flight), return_when=FIRST_COMPLETED)
            for future in sorted(done, key=in_flight.get):
                wid = in_flight.pop(future)
                if reason is not None:
                    in_flight[future] = wid
                    continue
                reason = absorb(wid, future.result())
                if reason is None:
                    in_flight[pool.submit(by_id[wid].step, master.x.copy())] = wid

        wait(list(in_flight))
        for future in sorted(in_flight, key=in_flight.get):
            absorb(in_flight[future], future.result())

    trace.epochs = tracker.epochs
    trace.stop_reason = reason
    simulator_logger.info(f"Threaded run stopped ({reason}) after {master.t} updates")
    return trace, history
