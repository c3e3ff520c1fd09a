"""
Asynchronous Execution Simulator
Deterministic event loop over worker latencies, communication history,
delays, double delays and epochs
"""
import heapq
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, NamedTuple
import logging

import numpy as np
import pandas as pd

from ldqn.config import settings
from ldqn.core.error_handler import ConfigError, InsufficientHistory
from ldqn.core.logging import simulator_logger
from ldqn.core.objectives import FiniteSumObjective
from ldqn.core.protocol_master import MasterState, StepRecord, master_step
from ldqn.core.protocol_worker import WorkerNode
from ldqn.schemas.run_schemas import DelaySpec, StopRuleSpec

logger = logging.getLogger(__name__)

Observer = Callable[[MasterState, Sequence[WorkerNode], StepRecord], None]

# ==================== DELAY MODELS ====================


class DelayModel:
    """Compute latency per worker round

    constant:             params latency (default 1.0)
    uniform-integer:      params low, high (integers, inclusive)
    per-worker-constant:  params latencies (one per worker, 1-based order)
    heterogeneous-random: params speed_low, speed_high, jitter; per-worker
                          speed drawn once, times (1 + Exp(jitter))
    """

    KINDS = ("constant", "uniform-integer", "per-worker-constant", "heterogeneous-random")

    def __init__(self, kind: str = "constant", params: Dict = None, seed: int = 0):
        if kind not in self.KINDS:
            raise ConfigError(f"unknown delay model {kind!r}", details={"kinds": list(self.KINDS)})
        self.kind = kind
        self.params = dict(params or {})
        self.seed = seed
        self._validate()
        self.reset([])

    @classmethod
    def from_spec(cls, spec: DelaySpec) -> "DelayModel":
        return cls(spec.kind, spec.params, spec.seed)

    def _validate(self):
        p = self.params
        if self.kind == "constant" and not float(p.get("latency", 1.0)) > 0:
            raise ConfigError("constant latency must be positive")
        if self.kind == "uniform-integer":
            low, high = int(p.get("low", 1)), int(p.get("high", 4))
            if not 1 <= low <= high:
                raise ConfigError("uniform-integer latencies need 1 <= low <= high")
        if self.kind == "per-worker-constant":
            latencies = p.get("latencies")
            if not latencies or any(not float(v) > 0 for v in latencies):
                raise ConfigError("per-worker-constant needs positive latencies for every worker")
        if self.kind == "heterogeneous-random":
            lo, hi = float(p.get("speed_low", 0.5)), float(p.get("speed_high", 2.0))
            if not 0 < lo <= hi or float(p.get("jitter", 0.5)) < 0:
                raise ConfigError("heterogeneous-random needs 0 < speed_low <= speed_high, jitter >= 0")

    def reset(self, worker_ids: Sequence[int]) -> "DelayModel":
        """Restart the random stream; identical seeds give identical schedules"""
        self._rng = np.random.default_rng(self.seed)
        self._speed: Dict[int, float] = {}
        if self.kind == "per-worker-constant" and worker_ids:
            if len(self.params["latencies"]) < max(worker_ids):
                raise ConfigError("per-worker-constant needs one latency per worker")
        if self.kind == "heterogeneous-random":
            lo, hi = float(self.params.get("speed_low", 0.5)), float(self.params.get("speed_high", 2.0))
            for wid in sorted(worker_ids):
                self._speed[wid] = float(self._rng.uniform(lo, hi))
        return self

    def sample(self, worker_id: int) -> float:
        if self.kind == "constant":
            return float(self.params.get("latency", 1.0))
        if self.kind == "uniform-integer":
            return float(self._rng.integers(int(self.params.get("low", 1)), int(self.params.get("high", 4)) + 1))
        if self.kind == "per-worker-constant":
            return float(self.params["latencies"][worker_id - 1])
        jitter = float(self.params.get("jitter", 0.5))
        factor = 1.0 + float(self._rng.exponential(jitter)) if jitter > 0 else 1.0
        return self._speed[worker_id] * factor


@dataclass
class StopRule:
    """Stop on max updates, max epochs, gradient norm or suboptimality"""
    max_updates: Optional[int] = settings.DEFAULT_MAX_UPDATES
    max_epochs: Optional[int] = None
    grad_tol: Optional[float] = None
    subopt_tol: Optional[float] = None

    @classmethod
    def from_spec(cls, spec: StopRuleSpec) -> "StopRule":
        return cls(**spec.model_dump())

    def reason(self, t: int, epochs_completed: int, grad_norm: float,
               suboptimality: Optional[float]) -> Optional[str]:
        if self.max_updates is not None and t >= self.max_updates:
            return "max_updates"
        if self.max_epochs is not None and epochs_completed >= self.max_epochs:
            return "max_epochs"
        if self.grad_tol is not None and grad_norm <= self.grad_tol:
            return "grad_tol"
        if self.subopt_tol is not None and suboptimality is not None and suboptimality <= self.subopt_tol:
            return "subopt_tol"
        return None


# ==================== COMMUNICATION HISTORY ====================


class CommHistory:
    """Per worker, the increasing master-update indices at which it communicated"""

    def __init__(self, comms: Dict[int, Sequence[int]] = None):
        self._comms: Dict[int, List[int]] = {}
        for wid, times in (comms or {}).items():
            self._comms[int(wid)] = []
            for t in times:
                self.record(int(wid), int(t))

    def record(self, worker_id: int, t: int) -> None:
        times = self._comms.setdefault(worker_id, [])
        if times and t <= times[-1]:
            raise ValueError(f"communication times must increase for worker {worker_id}")
        times.append(t)

    def comms(self, worker_id: int) -> np.ndarray:
        return np.asarray(self._comms.get(worker_id, []), dtype=np.int64)

    @property
    def workers(self) -> List[int]:
        return sorted(self._comms)

    @property
    def T(self) -> int:
        return max((times[-1] for times in self._comms.values() if times), default=0)

    def is_complete(self) -> bool:
        """Every t in [1, T] appears for exactly one worker"""
        all_times = np.sort(np.concatenate([self.comms(w) for w in self.workers])) if self._comms else np.zeros(0)
        return bool(np.array_equal(all_times, np.arange(1, self.T + 1)))

    def to_dict(self) -> Dict[int, List[int]]:
        return {wid: list(times) for wid, times in sorted(self._comms.items())}


class DelayPair(NamedTuple):
    d: int
    D: Optional[int]


def delays(history: CommHistory, t: int, i: int) -> DelayPair:
    """Delay d = t - last comm <= t; double delay D = d + d^{t-d-1} + 1

    t - D is the second most recent communication, so D is None while
    worker i has communicated only once.
    """
    comms = history.comms(i)
    k = int(np.searchsorted(comms, t, side="right")) - 1
    if k < 0:
        raise InsufficientHistory(f"worker {i} has not communicated by t={t}", details={"t": t, "worker": i})
    d = int(t - comms[k])
    if k < 1:
        return DelayPair(d, None)
    d_before = int((t - d - 1) - comms[k - 1])
    return DelayPair(d, d + d_before + 1)


def double_delay(history: CommHistory, t: int, i: int) -> int:
    pair = delays(history, t, i)
    if pair.D is None:
        raise InsufficientHistory(f"worker {i} needs two communications by t={t}",
                                  details={"t": t, "worker": i})
    return pair.D


@dataclass
class EpochIndex:
    """Epoch start times E_1 = 0 < E_2 < ..."""
    starts: List[int] = field(default_factory=lambda: [0])

    @property
    def complete_epochs(self) -> int:
        return len(self.starts) - 1

    def epoch_of(self, t: int) -> int:
        """m such that E_m <= t < E_{m+1} (1-based)"""
        return int(np.searchsorted(self.starts, t, side="right"))

    def bounds(self, m: int) -> Tuple[int, int]:
        """[E_m, E_{m+1}) for a complete epoch m"""
        return self.starts[m - 1], self.starts[m]


def _second_last_times(history: CommHistory, T: int) -> np.ndarray:
    """f(t) = min_i (second most recent comm of i at or before t), -1 if undefined"""
    ts = np.arange(1, T + 1)
    f = np.full(T, np.iinfo(np.int64).max, dtype=np.int64)
    for wid in history.workers:
        comms = history.comms(wid)
        k = np.searchsorted(comms, ts, side="right") - 1
        second = np.where(k >= 1, comms[np.maximum(k - 1, 0)] if comms.size else -1, -1)
        f = np.minimum(f, second)
    return f


def compute_epochs(history: CommHistory, T: int = None) -> EpochIndex:
    """E_{m+1} = min{t : t - D_i^t >= E_m for all i}

    t = 0 is not a communication, so the first epoch ends at the second reply
    of the slowest worker. Under delays bounded by d it lasts at most 2d + 2
    updates and every later epoch at most 2d + 1.
    """
    T = history.T if T is None else T
    epochs = EpochIndex()
    if T < 1 or not history.workers:
        return epochs
    f = _second_last_times(history, T)
    while True:
        idx = int(np.searchsorted(f, epochs.starts[-1], side="left"))
        if idx >= T:
            break
        epochs.starts.append(idx + 1)
    return epochs


class EpochTracker:
    """Online epoch detection; agrees with compute_epochs on the same history"""

    def __init__(self, worker_ids: Sequence[int]):
        self._last: Dict[int, int] = {wid: -1 for wid in worker_ids}
        self._second: Dict[int, int] = {wid: -1 for wid in worker_ids}
        self.epochs = EpochIndex()

    def record(self, worker_id: int, t: int) -> bool:
        """Register a communication; True when t starts a new epoch"""
        if self._last[worker_id] >= 0:
            self._second[worker_id] = self._last[worker_id]
        self._last[worker_id] = t
        if min(self._second.values()) >= self.epochs.starts[-1]:
            self.epochs.starts.append(t)
            return True
        return False

    @property
    def current_epoch(self) -> int:
        return len(self.epochs.starts)


def random_bounded_history(n: int, d: int, T: int, seed: int = 0) -> CommHistory:
    """Random history in which every delay d_i^t stays <= d

    Worker i must communicate by last_i + d + 1, with last_i = 0 initially since
    every worker starts from x^0. A worker is drawn uniformly among the choices
    that keep every remaining deadline reachable; earliest deadline first is the
    fallback.
    """
    if n > d + 1:
        raise ConfigError(f"{n} workers cannot all keep delays <= {d}")
    rng = np.random.default_rng(seed)
    last = np.zeros(n, dtype=np.int64)
    history = CommHistory({i: [] for i in range(1, n + 1)})
    for t in range(1, T + 1):
        deadlines = last + d + 1
        feasible = []
        for j in range(n):
            others = np.sort(np.delete(deadlines, j))
            if np.all(others >= t + 1 + np.arange(n - 1)):
                feasible.append(j)
        j = int(rng.choice(feasible)) if feasible else int(np.argmin(deadlines))
        last[j] = t
        history.record(j + 1, t)
    return history


# ==================== TRACE ====================

TRACE_COLUMNS = ["t", "epoch", "virtual_time", "worker_id", "suboptimality",
                 "grad_norm", "dist_to_opt", "skipped", "rejected"]


class Trace:
    """Per-update rows plus the iterates x^0, x^1, ..."""

    def __init__(self, x0: np.ndarray, f_star: Optional[float] = None,
                 x_star: Optional[np.ndarray] = None, keep_iterates: bool = True):
        self.rows: List[dict] = []
        self.iterates: List[np.ndarray] = []
        self.x0 = np.array(x0, dtype=float)
        self.f_star = f_star
        self.x_star = None if x_star is None else np.asarray(x_star, dtype=float)
        self.keep_iterates = keep_iterates
        self.epochs = EpochIndex()
        self.stop_reason: Optional[str] = None

    def append(self, t: int, epoch: int, virtual_time: float, worker_id: int, x: np.ndarray,
               grad_norm: float, objective: Optional[float] = None,
               skipped: bool = False, rejected: bool = False) -> dict:
        subopt = objective - self.f_star if objective is not None and self.f_star is not None else float("nan")
        dist = float(np.linalg.norm(x - self.x_star)) if self.x_star is not None else float("nan")
        row = {"t": t, "epoch": epoch, "virtual_time": virtual_time, "worker_id": worker_id,
               "suboptimality": subopt, "grad_norm": grad_norm, "dist_to_opt": dist,
               "skipped": bool(skipped), "rejected": bool(rejected)}
        self.rows.append(row)
        if self.keep_iterates:
            self.iterates.append(np.array(x, dtype=float))
        return row

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def updates(self) -> int:
        return self.rows[-1]["t"] if self.rows else 0

    def iterate_array(self) -> np.ndarray:
        return np.vstack(self.iterates) if self.iterates else np.zeros((0, self.x0.shape[0]))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=TRACE_COLUMNS)


def _metrics(objective: Optional[FiniteSumObjective], x: np.ndarray,
             fallback_grad: float) -> Tuple[Optional[float], float]:
    if objective is None:
        return None, fallback_grad
    return objective.loss(x), float(np.linalg.norm(objective.gradient(x)))


# ==================== EVENT LOOP ====================


def run(workers: Sequence[WorkerNode], master: MasterState, delay_model: DelayModel,
        stop: StopRule, objective: FiniteSumObjective = None, f_star: float = None,
        x_star: np.ndarray = None, observers: Sequence[Observer] = (),
        keep_iterates: bool = True) -> Tuple[Trace, CommHistory]:
    """Earliest-finishing worker is served next; ties go to the lower worker id"""
    by_id = {w.worker_id: w for w in workers}
    if len(by_id) != len(workers):
        raise ConfigError("worker ids must be unique")
    delay_model.reset(list(by_id))

    history = CommHistory({wid: [] for wid in by_id})
    tracker = EpochTracker(list(by_id))
    trace = Trace(master.x, f_star=f_star, x_star=x_star, keep_iterates=keep_iterates)

    loss0, grad0 = _metrics(objective, master.x, float(np.linalg.norm(master.g)) / master.n_workers)
    trace.append(master.t, 1, 0.0, 0, master.x, grad0, loss0)

    pending = {wid: master.x.copy() for wid in by_id}
    events = [(delay_model.sample(wid), wid) for wid in sorted(by_id)]
    heapq.heapify(events)

    reason = stop.reason(master.t, 0, grad0, trace.rows[0]["suboptimality"] if f_star is not None else None)
    while reason is None:
        finish, wid = heapq.heappop(events)
        msg = by_id[wid].step(pending[wid])
        master, record = master_step(master, msg)

        history.record(wid, record.t)
        if tracker.record(wid, record.t):
            simulator_logger.log_event("EPOCH", {"epoch": tracker.current_epoch, "t": record.t,
                                                 "virtual_time": finish})

        loss, grad_norm = _metrics(objective, master.x, record.grad_norm)
        row = trace.append(record.t, tracker.current_epoch, finish, wid, master.x, grad_norm, loss,
                           skipped=record.skipped, rejected=record.rejected)
        for observer in observers:
            observer(master, workers, record)

        pending[wid] = master.x.copy()
        heapq.heappush(events, (finish + delay_model.sample(wid), wid))
        subopt = row["suboptimality"] if f_star is not None else None
        reason = stop.reason(record.t, tracker.epochs.complete_epochs, grad_norm, subopt)

    trace.epochs = tracker.epochs
    trace.stop_reason = reason
    simulator_logger.info(f"Simulation stopped ({reason}) after {master.t} updates, "
                          f"{tracker.epochs.complete_epochs} complete epochs")
    return trace, history
