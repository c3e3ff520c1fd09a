"""
Master Protocol
Aggregate ledgers, the incrementally maintained global inverse and the
iterate x = B_inv (u - eta * g)
"""
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple
import logging

import numpy as np
from scipy import linalg

from ldqn.config import settings
from ldqn.core.error_handler import (
    ConfigError, DivergedIterate, EventMonitor, SingularEstimate, SingularUpdate
)
from ldqn.core.logging import solver_logger
from ldqn.core.protocol_worker import WorkerMessage, WorkerNode

logger = logging.getLogger(__name__)


@dataclass
class MasterState:
    """Iterate, dense aggregate B = sum_i B_i with its inverse, and the u/g ledgers"""
    x: np.ndarray
    B: np.ndarray
    B_inv: np.ndarray
    u: np.ndarray
    g: np.ndarray
    eta: float
    n_workers: int
    t: int = 0
    rejections: int = 0
    refactorizations: int = 0
    monitor: EventMonitor = field(default_factory=EventMonitor)

    @property
    def d(self) -> int:
        return self.x.shape[0]

    def counters(self) -> dict:
        return {"updates": self.t, "rejections": self.rejections,
                "refactorizations": self.refactorizations}


@dataclass(frozen=True)
class StepRecord:
    """Outcome of one processed message"""
    t: int
    worker_id: int
    x_new: np.ndarray
    grad_norm: float
    denom1: float
    denom2: float
    skipped: bool = False
    rejected: bool = False


def _symmetrize(M: np.ndarray) -> np.ndarray:
    M[...] = 0.5 * (M + M.T)
    return M


def refactor(state: MasterState) -> MasterState:
    """Rebuild B_inv from the dense aggregate B"""
    identity = np.eye(state.d)
    try:
        state.B_inv = linalg.cho_solve(linalg.cho_factor(state.B), identity)
    except linalg.LinAlgError:
        logger.warning("Aggregate estimate is not positive definite; falling back to LU inverse")
        state.monitor.track("REFACTOR_FALLBACK")
        try:
            state.B_inv = linalg.inv(state.B)
        except linalg.LinAlgError as e:
            raise SingularEstimate(f"aggregate estimate is singular at t={state.t}: {e}",
                                   details={"t": state.t})
    if not np.all(np.isfinite(state.B_inv)):
        raise SingularEstimate(f"aggregate inverse is not finite at t={state.t}", details={"t": state.t})
    _symmetrize(state.B_inv)
    state.refactorizations += 1
    state.monitor.track("REFACTOR")
    solver_logger.log_event("REFACTOR", {"t": state.t})
    return state


def master_init(x0: np.ndarray, eta: float, workers: Sequence[WorkerNode],
                gamma0: Optional[float] = None) -> MasterState:
    """Aggregate the workers' initial estimates, gradients and u ledgers"""
    if not eta > 0:
        raise ConfigError(f"eta must be positive, got {eta}")
    if not workers:
        raise ConfigError("at least one worker is required")
    x0 = np.array(x0, dtype=float)
    for w in workers:
        if not np.array_equal(w.z, x0):
            raise ConfigError(f"worker {w.worker_id} was not initialized at x0")

    scales = [w.identity_scale() for w in workers]
    if gamma0 is not None and any(s is not None and s != gamma0 for s in scales):
        raise ConfigError("workers must share the initial scale gamma0")

    d = x0.shape[0]
    state = MasterState(
        x=x0.copy(),
        B=np.zeros((d, d)),
        B_inv=np.zeros((d, d)),
        u=np.sum([w.u_prev for w in workers], axis=0),
        g=np.sum([w.local_gradient() for w in workers], axis=0),
        eta=float(eta),
        n_workers=len(workers),
    )
    if all(s is not None for s in scales):
        total = float(sum(scales))
        state.B = total * np.eye(d)
        state.B_inv = np.eye(d) / total
    else:
        state.B = _symmetrize(np.sum([w.dense_estimate(cap=max(d, settings.DENSE_CAP)) for w in workers], axis=0))
        refactor(state)
        state.refactorizations = 0
    return state


def _sherman_morrison(B_inv: np.ndarray, vec: np.ndarray, coef: float, t: int) -> float:
    """In-place inverse of (B + coef * vec vec^T); returns 1/coef + vec^T B_inv vec"""
    v = B_inv @ vec
    quad = float(vec @ v)
    denom = 1.0 / coef + quad
    if abs(denom) <= settings.DENOM_TOL * (abs(1.0 / coef) + abs(quad)):
        raise SingularUpdate(f"denominator {denom:.3e} at t={t}", details={"denom": denom, "t": t})
    B_inv -= np.outer(v, v) / denom
    return denom


def _apply_estimate_change(state: MasterState, msg: WorkerMessage) -> Tuple[float, float, bool]:
    """Identity shift, rank-two insertion, then the eviction

    The insertion follows v = B_inv y, U = B_inv - v v^T / (alpha + v^T y),
    w = U q, B_inv = U + w w^T / (beta - q^T w). The dense aggregate B is
    updated exactly for every term; a singular denominator only makes
    B_inv stale, and it is then rebuilt from B.
    """
    if msg.gamma_shift != 0.0:
        state.B[np.diag_indices_from(state.B)] += msg.gamma_shift
        refactor(state)

    terms = [(msg.y, 1.0 / msg.alpha), (msg.q_tilde, -1.0 / msg.beta_tilde)]
    if msg.evicted is not None:
        terms += [(msg.evicted.q_tilde, 1.0 / msg.evicted.beta_tilde),
                  (msg.evicted.y, -1.0 / msg.evicted.alpha)]

    denoms = []
    rejected = False
    for vec, coef in terms:
        state.B += coef * np.outer(vec, vec)
        if rejected:
            continue
        try:
            denoms.append(_sherman_morrison(state.B_inv, vec, coef, state.t + 1))
        except SingularUpdate as e:
            rejected = True
            state.rejections += 1
            state.monitor.track("SINGULAR_UPDATE")
            solver_logger.log_event("SINGULAR_UPDATE", {"t": state.t + 1, "worker": msg.worker_id,
                                                        "denom": e.details.get("denom")},
                                    level=logging.WARNING)
    _symmetrize(state.B)
    if rejected:
        refactor(state)

    denom1 = denoms[0] if len(denoms) > 0 else float("nan")
    denom2 = -denoms[1] if len(denoms) > 1 else float("nan")
    return denom1, denom2, rejected


def master_step(state: MasterState, msg: WorkerMessage) -> Tuple[MasterState, StepRecord]:
    """Process one message: ledgers, inverse update, new iterate"""
    state.u += msg.delta_u
    state.g += msg.y
    denom1 = denom2 = float("nan")
    rejected = False

    if msg.skipped:
        state.monitor.track("GUARD_PATH")
    else:
        denom1, denom2, rejected = _apply_estimate_change(state, msg)

    _symmetrize(state.B_inv)
    x_new = state.B_inv @ (state.u - state.eta * state.g)
    if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(state.B_inv))):
        solver_logger.log_event("DIVERGED", {"t": state.t + 1, "worker": msg.worker_id}, level=logging.ERROR)
        raise DivergedIterate(f"non-finite iterate after update {state.t + 1}",
                              details={"t": state.t + 1, "worker": msg.worker_id})
    state.x = x_new
    state.t += 1
    record = StepRecord(
        t=state.t,
        worker_id=msg.worker_id,
        x_new=state.x.copy(),
        grad_norm=float(np.linalg.norm(state.g)) / state.n_workers,
        denom1=denom1,
        denom2=denom2,
        skipped=msg.skipped,
        rejected=rejected,
    )
    return state, record


def iterate_residual(state: MasterState, workers: Sequence[WorkerNode], cap: int = None) -> float:
    """Distance between x and the iterate recomputed from scratch out of worker states"""
    if state.t == 0:
        return 0.0
    cap = settings.DENSE_CAP if cap is None else cap
    estimates = [w.dense_estimate(cap) for w in workers]
    B = np.sum(estimates, axis=0)
    u = np.sum([Bi @ w.z for Bi, w in zip(estimates, workers)], axis=0)
    g = np.sum([w.shard.gradient(w.z) for w in workers], axis=0)
    x_ref = linalg.solve(B, u - state.eta * g, assume_a="sym")
    return float(np.linalg.norm(state.x - x_ref))
