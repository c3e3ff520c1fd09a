"""
Baselines
Full-memory BFGS workers, frozen exact-Hessian workers and synchronous
gradient descent
"""
from typing import Optional, Tuple

import numpy as np

from ldqn.config import settings
from ldqn.core.error_handler import ConfigError, CurvatureFailure, DegenerateStep, DimensionTooLarge
from ldqn.core.linalg_memory import compute_gamma
from ldqn.core.objectives import FiniteSumObjective, ShardObjective
from ldqn.core.protocol_worker import WorkerMessage, WorkerNode
from ldqn.core.simulator import StopRule, Trace


class DenseWorkerState(WorkerNode):
    """Worker keeping a dense d x d BFGS estimate B (O(d^2) memory)"""

    def __init__(self, worker_id: int, shard: ShardObjective, x0: np.ndarray, gamma0: float,
                 cap: int = None, curvature_tol: float = None):
        cap = settings.DENSE_CAP if cap is None else cap
        if shard.d > cap:
            raise DimensionTooLarge(
                f"dense BFGS workers need {shard.d}x{shard.d} matrices; dimension exceeds the cap {cap}",
                details={"d": shard.d, "cap": cap})
        if not gamma0 > 0:
            raise ConfigError(f"gamma0 must be positive, got {gamma0}")
        super().__init__(worker_id, shard, x0)
        self.gamma0 = float(gamma0)
        self.B = self.gamma0 * np.eye(self.d)
        self.curvature_tol = settings.CURVATURE_TOL if curvature_tol is None else curvature_tol
        self.u_prev = self.B @ self.z

    def step(self, x: np.ndarray) -> WorkerMessage:
        x = np.array(x, dtype=float)
        grad_x = self.shard.gradient(x)
        s = x - self.z
        y = grad_x - self.grad_z
        try:
            compute_gamma(y, s, self.curvature_tol)
            q = self.B @ s
            alpha = float(y @ s)
            beta = float(s @ q)
            if beta <= self.curvature_tol * np.linalg.norm(s) * np.linalg.norm(q):
                raise CurvatureFailure(f"s^T B s = {beta:.3e} below tolerance")
        except (DegenerateStep, CurvatureFailure) as e:
            return self._gradient_only(x, grad_x, self.B @ x, e.code)

        self.B += np.outer(y, y) / alpha - np.outer(q, q) / beta
        self.B[...] = 0.5 * (self.B + self.B.T)
        u = self.B @ x
        msg = WorkerMessage(
            worker_id=self.worker_id,
            delta_u=u - self.u_prev,
            y=y,
            q_tilde=q,
            alpha=alpha,
            beta_tilde=beta,
            skipped=False,
        )
        self.z, self.grad_z, self.u_prev = x, grad_x, u
        return msg

    def dense_estimate(self, cap: int = None) -> np.ndarray:
        return self.B.copy()

    def identity_scale(self) -> Optional[float]:
        if np.array_equal(self.B, self.gamma0 * np.eye(self.d)):
            return self.gamma0
        return None

    def tuple_nbytes(self) -> int:
        return self.B.nbytes


def daveqn_worker_step(state: DenseWorkerState, x: np.ndarray) -> Tuple[DenseWorkerState, WorkerMessage]:
    return state, state.step(x)


class FixedEstimateWorker(WorkerNode):
    """Worker whose estimate is frozen (exact-Hessian mode: B = Q_i)

    Every reply is gradient-only with delta_u = B (x - z).
    """

    def __init__(self, worker_id: int, shard: ShardObjective, x0: np.ndarray,
                 B: np.ndarray = None, cap: int = None):
        super().__init__(worker_id, shard, x0)
        self.B = shard.hessian(self.z, cap) if B is None else np.array(B, dtype=float)
        self.u_prev = self.B @ self.z

    def step(self, x: np.ndarray) -> WorkerMessage:
        x = np.array(x, dtype=float)
        grad_x = self.shard.gradient(x)
        y = grad_x - self.grad_z
        u = self.B @ x
        msg = WorkerMessage(
            worker_id=self.worker_id,
            delta_u=u - self.u_prev,
            y=y,
            q_tilde=np.zeros(self.d),
            alpha=0.0,
            beta_tilde=0.0,
            skipped=True,
        )
        self.z, self.grad_z, self.u_prev = x, grad_x, u
        return msg

    def dense_estimate(self, cap: int = None) -> np.ndarray:
        return self.B.copy()

    def tuple_nbytes(self) -> int:
        return self.B.nbytes


def sync_gd_step(x: np.ndarray, shards, eta: float) -> np.ndarray:
    """x - eta * (1/n) sum_i grad f_i(x)"""
    if not eta > 0:
        raise ConfigError(f"eta must be positive, got {eta}")
    return x - eta * np.mean([shard.gradient(x) for shard in shards], axis=0)


def run_sync_gd(objective: FiniteSumObjective, x0: np.ndarray, eta: float, stop: StopRule,
                f_star: float = None, x_star: np.ndarray = None) -> Trace:
    """Synchronous rounds; every round is one epoch and one unit of virtual time"""
    x = np.array(x0, dtype=float)
    trace = Trace(x, f_star=f_star, x_star=x_star)
    grad_norm = float(np.linalg.norm(objective.gradient(x)))
    trace.append(0, 1, 0.0, 0, x, grad_norm, objective.loss(x))

    rounds = 0
    subopt = trace.rows[0]["suboptimality"] if f_star is not None else None
    reason = stop.reason(0, 0, grad_norm, subopt)
    while reason is None:
        x = sync_gd_step(x, objective.shards, eta)
        rounds += 1
        grad_norm = float(np.linalg.norm(objective.gradient(x)))
        row = trace.append(rounds, rounds + 1, float(rounds), 0, x, grad_norm, objective.loss(x))
        trace.epochs.starts.append(rounds)
        subopt = row["suboptimality"] if f_star is not None else None
        reason = stop.reason(rounds, rounds, grad_norm, subopt)

    trace.stop_reason = reason
    return trace
