"""
Worker Protocol
Local estimate updates and the O(d) reply message sent to the master
"""
import struct
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional, Tuple
import logging

import numpy as np

from ldqn.config import settings
from ldqn.core.error_handler import (
    ConfigError, CurvatureFailure, DegenerateStep, InvalidTuple, NotPositiveDefinite
)
from ldqn.core.linalg_memory import (
    MemoryTuple, TupleMemory, compute_gamma, lbfgs_apply, materialize, smallest_eigenvalue
)
from ldqn.core.logging import solver_logger
from ldqn.core.objectives import ShardObjective


@dataclass(frozen=True)
class WorkerMessage:
    """Reply to the master; `skipped` marks a gradient-only update"""
    worker_id: int
    delta_u: np.ndarray
    y: np.ndarray
    q_tilde: np.ndarray
    alpha: float
    beta_tilde: float
    skipped: bool
    gamma_shift: float = 0.0
    evicted: Optional[MemoryTuple] = None

    def __post_init__(self):
        for arr in (self.delta_u, self.y, self.q_tilde):
            arr.setflags(write=False)


class WorkerNode(ABC):
    """State shared by every worker kind: local copy z, cached gradient, u ledger"""

    def __init__(self, worker_id: int, shard: ShardObjective, x0: np.ndarray):
        if worker_id < 1:
            raise ConfigError("worker ids are 1-based")
        self.worker_id = int(worker_id)
        self.shard = shard
        self.d = shard.d
        self.z = np.array(x0, dtype=float)
        self.grad_z = shard.gradient(self.z)
        self.u_prev = np.zeros(self.d)

    @abstractmethod
    def step(self, x: np.ndarray) -> WorkerMessage:
        ...

    @abstractmethod
    def dense_estimate(self, cap: int = None) -> np.ndarray:
        ...

    def identity_scale(self) -> Optional[float]:
        """gamma when the estimate is exactly gamma * I, else None"""
        return None

    def local_gradient(self) -> np.ndarray:
        return self.grad_z

    def state_nbytes(self) -> int:
        return self.z.nbytes + self.grad_z.nbytes + self.u_prev.nbytes + self.tuple_nbytes()

    def tuple_nbytes(self) -> int:
        return 0

    def _gradient_only(self, x: np.ndarray, grad_x: np.ndarray, u: np.ndarray, reason: str) -> WorkerMessage:
        """Guard path: estimate unchanged, ledgers still advance"""
        y = grad_x - self.grad_z
        msg = WorkerMessage(
            worker_id=self.worker_id,
            delta_u=u - self.u_prev,
            y=y,
            q_tilde=np.zeros(self.d),
            alpha=0.0,
            beta_tilde=0.0,
            skipped=True,
        )
        solver_logger.log_event("GUARD_PATH", {"worker": self.worker_id, "reason": reason})
        self.z, self.grad_z, self.u_prev = x, grad_x, u
        return msg


class LimitedMemoryWorker(WorkerNode):
    """Worker holding the compact estimate gamma * I + sum of m rank-two tuples"""

    def __init__(self, worker_id: int, shard: ShardObjective, x0: np.ndarray, gamma0: float,
                 memory_size: int = None, fixed_gamma: bool = False, curvature_tol: float = None):
        if not gamma0 > 0 or not np.isfinite(gamma0):
            raise ConfigError(f"gamma0 must be positive and finite, got {gamma0}")
        super().__init__(worker_id, shard, x0)
        self.gamma0 = float(gamma0)
        self.gamma = float(gamma0)
        self.fixed_gamma = fixed_gamma
        self.curvature_tol = settings.CURVATURE_TOL if curvature_tol is None else curvature_tol
        memory_size = settings.DEFAULT_MEMORY if memory_size is None else memory_size
        if memory_size < 1:
            raise ConfigError(f"memory size must be at least 1, got {memory_size}")
        self.memory = TupleMemory(memory_size, self.d)
        self.lowest = self.gamma
        self.u_prev = self.gamma * self.z

    def apply_estimate(self, v: np.ndarray) -> np.ndarray:
        return lbfgs_apply(self.gamma, self.memory, v)

    def step(self, x: np.ndarray) -> WorkerMessage:
        x = np.array(x, dtype=float)
        grad_x = self.shard.gradient(x)
        s = x - self.z
        y = grad_x - self.grad_z

        try:
            if self.fixed_gamma:
                gamma_new = self.gamma0
            else:
                gamma_new = self._next_gamma(compute_gamma(y, s, self.curvature_tol))
            q_tilde = lbfgs_apply(gamma_new, self.memory, s)
            alpha = float(y @ s)
            beta_tilde = float(s @ q_tilde)
            if beta_tilde <= self.curvature_tol * np.linalg.norm(s) * np.linalg.norm(q_tilde):
                raise CurvatureFailure(f"s^T q = {beta_tilde:.3e} below tolerance")
            item = MemoryTuple(y, q_tilde, alpha, beta_tilde)
            item.validate(self.d)
            candidate = self.memory.copy()
            evicted = candidate.push(item)
            lowest = smallest_eigenvalue(gamma_new, candidate)
            if lowest <= settings.ESTIMATE_FLOOR * gamma_new:
                raise NotPositiveDefinite(f"estimate eigenvalue {lowest:.3e} below floor",
                                          details={"gamma": gamma_new, "evicted": evicted is not None})
        except (DegenerateStep, CurvatureFailure, InvalidTuple, NotPositiveDefinite) as e:
            return self._gradient_only(x, grad_x, self.apply_estimate(x), e.code)

        gamma_shift = gamma_new - self.gamma
        self.memory, self.gamma, self.lowest = candidate, gamma_new, lowest
        u = self.apply_estimate(x)
        msg = WorkerMessage(
            worker_id=self.worker_id,
            delta_u=u - self.u_prev,
            y=y,
            q_tilde=q_tilde,
            alpha=alpha,
            beta_tilde=beta_tilde,
            skipped=False,
            gamma_shift=gamma_shift,
            evicted=evicted,
        )
        self.z, self.grad_z, self.u_prev = x, grad_x, u
        return msg

    def _next_gamma(self, proposed: float) -> float:
        """Proposed scale, with decreases capped at SHIFT_SHARE of the smallest eigenvalue

        A change of gamma shifts every stored direction by the same amount, so a
        deep drop would push learned curvatures towards zero. An empty memory
        has nothing to protect.
        """
        if proposed >= self.gamma or len(self.memory) == 0:
            return proposed
        floor = self.gamma - settings.SHIFT_SHARE * self.lowest
        if proposed < floor:
            solver_logger.log_event("GAMMA_CLAMPED", {"worker": self.worker_id, "proposed": proposed,
                                                      "used": floor})
            return floor
        return proposed

    def dense_estimate(self, cap: int = None) -> np.ndarray:
        return materialize(self.gamma, self.memory, self.d, cap)

    def identity_scale(self) -> Optional[float]:
        return self.gamma if len(self.memory) == 0 else None

    def tuple_nbytes(self) -> int:
        return self.memory.nbytes


# Alias matching the protocol's state name
WorkerState = LimitedMemoryWorker


def worker_init(worker_id: int, shard: ShardObjective, x0: np.ndarray, gamma0: float,
                memory_size: int = None, fixed_gamma: bool = False) -> LimitedMemoryWorker:
    return LimitedMemoryWorker(worker_id, shard, x0, gamma0, memory_size, fixed_gamma)


def worker_step(state: WorkerNode, x: np.ndarray) -> Tuple[WorkerNode, WorkerMessage]:
    msg = state.step(x)
    return state, msg


def local_gradient(state: WorkerNode) -> np.ndarray:
    return state.local_gradient()


# ==================== WIRE FORMAT ====================
# header: worker_id (int64), flags (uint8), alpha, beta_tilde, gamma_shift (float64)
# then length-prefixed float64 vectors delta_u, y, q_tilde
# and, when flag bit 1 is set, the evicted tuple (alpha, beta, y, q)

_HEADER = struct.Struct("<qBddd")
_LENGTH = struct.Struct("<q")
_SCALARS = struct.Struct("<dd")

FLAG_SKIPPED = 1
FLAG_EVICTED = 2


def _pack_vector(v: np.ndarray) -> bytes:
    return _LENGTH.pack(v.shape[0]) + np.ascontiguousarray(v, dtype="<f8").tobytes()


def _unpack_vector(buf: bytes, offset: int) -> Tuple[np.ndarray, int]:
    (length,) = _LENGTH.unpack_from(buf, offset)
    offset += _LENGTH.size
    end = offset + 8 * length
    if end > len(buf):
        raise ValueError("truncated message")
    return np.frombuffer(buf[offset:end], dtype="<f8").astype(float), end


def encode_message(msg: WorkerMessage) -> bytes:
    flags = (FLAG_SKIPPED if msg.skipped else 0) | (FLAG_EVICTED if msg.evicted is not None else 0)
    parts = [
        _HEADER.pack(msg.worker_id, flags, msg.alpha, msg.beta_tilde, msg.gamma_shift),
        _pack_vector(msg.delta_u),
        _pack_vector(msg.y),
        _pack_vector(msg.q_tilde),
    ]
    if msg.evicted is not None:
        parts.append(_SCALARS.pack(msg.evicted.alpha, msg.evicted.beta_tilde))
        parts.append(_pack_vector(msg.evicted.y))
        parts.append(_pack_vector(msg.evicted.q_tilde))
    return b"".join(parts)


def decode_message(buf: bytes) -> WorkerMessage:
    worker_id, flags, alpha, beta_tilde, gamma_shift = _HEADER.unpack_from(buf, 0)
    offset = _HEADER.size
    delta_u, offset = _unpack_vector(buf, offset)
    y, offset = _unpack_vector(buf, offset)
    q_tilde, offset = _unpack_vector(buf, offset)
    evicted = None
    if flags & FLAG_EVICTED:
        e_alpha, e_beta = _SCALARS.unpack_from(buf, offset)
        offset += _SCALARS.size
        e_y, offset = _unpack_vector(buf, offset)
        e_q, offset = _unpack_vector(buf, offset)
        evicted = MemoryTuple(e_y, e_q, e_alpha, e_beta)
    if offset != len(buf):
        raise ValueError("trailing bytes after message")
    return WorkerMessage(worker_id=worker_id, delta_u=delta_u, y=y, q_tilde=q_tilde, alpha=alpha,
                         beta_tilde=beta_tilde, skipped=bool(flags & FLAG_SKIPPED),
                         gamma_shift=gamma_shift, evicted=evicted)
