"""
Limited-Memory Hessian Estimates
Tuple storage and the apply/materialize kernels of the compact forward estimate

    B = gamma * I + sum_i ( y_i y_i^T / alpha_i - q_i q_i^T / beta_i )
"""
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from ldqn.config import settings
from ldqn.core.error_handler import (
    CurvatureFailure, DegenerateStep, DimensionTooLarge, InvalidTuple
)


@dataclass(frozen=True)
class MemoryTuple:
    """One (y, q_tilde, alpha, beta_tilde) record"""
    y: np.ndarray
    q_tilde: np.ndarray
    alpha: float
    beta_tilde: float

    def validate(self, d: Optional[int] = None) -> None:
        if not (self.alpha > 0 and np.isfinite(self.alpha)):
            raise InvalidTuple(f"alpha must be positive, got {self.alpha}")
        if not (self.beta_tilde > 0 and np.isfinite(self.beta_tilde)):
            raise InvalidTuple(f"beta_tilde must be positive, got {self.beta_tilde}")
        if self.y.shape != self.q_tilde.shape or self.y.ndim != 1:
            raise InvalidTuple("y and q_tilde must be vectors of equal length")
        if d is not None and self.y.shape[0] != d:
            raise InvalidTuple(f"tuple length {self.y.shape[0]} does not match memory dimension {d}")


class TupleMemory:
    """FIFO ring buffer of at most `capacity` tuples

    Storage is preallocated as (capacity, d) arrays. Rows [0, len) are live
    at all times; `_head` marks the oldest row once the buffer has wrapped.
    """

    def __init__(self, capacity: int, d: int):
        if capacity < 1:
            raise ValueError("memory capacity must be at least 1")
        self.capacity = int(capacity)
        self.d = int(d)
        self._y = np.zeros((self.capacity, self.d))
        self._q = np.zeros((self.capacity, self.d))
        self._alpha = np.zeros(self.capacity)
        self._beta = np.zeros(self.capacity)
        self._size = 0
        self._head = 0

    def __len__(self) -> int:
        return self._size

    def _row(self, k: int) -> MemoryTuple:
        return MemoryTuple(self._y[k].copy(), self._q[k].copy(),
                           float(self._alpha[k]), float(self._beta[k]))

    def push(self, item: MemoryTuple) -> Optional[MemoryTuple]:
        """Insert a tuple, returning the evicted oldest tuple when full"""
        item.validate(self.d)
        evicted = None
        if self._size < self.capacity:
            k = self._size
            self._size += 1
        else:
            k = self._head
            evicted = self._row(k)
            self._head = (self._head + 1) % self.capacity
        self._y[k] = item.y
        self._q[k] = item.q_tilde
        self._alpha[k] = item.alpha
        self._beta[k] = item.beta_tilde
        return evicted

    def tuples(self) -> List[MemoryTuple]:
        """Live tuples, oldest first"""
        order = [(self._head + i) % self.capacity for i in range(self._size)]
        return [self._row(k) for k in order]

    def arrays(self):
        """Views of the live rows (Y, Q, alpha, beta) in storage order"""
        n = self._size
        return self._y[:n], self._q[:n], self._alpha[:n], self._beta[:n]

    def copy(self) -> "TupleMemory":
        other = TupleMemory(self.capacity, self.d)
        other._y[:] = self._y
        other._q[:] = self._q
        other._alpha[:] = self._alpha
        other._beta[:] = self._beta
        other._size = self._size
        other._head = self._head
        return other

    @property
    def nbytes(self) -> int:
        return self._y.nbytes + self._q.nbytes + self._alpha.nbytes + self._beta.nbytes

    def __repr__(self) -> str:
        return f"TupleMemory(capacity={self.capacity}, d={self.d}, size={self._size})"


def compute_gamma(y: np.ndarray, s: np.ndarray, curvature_tol: float = None) -> float:
    """Scaling factor ||y||^2 / y^T s"""
    tol = settings.CURVATURE_TOL if curvature_tol is None else curvature_tol
    norm_y = np.linalg.norm(y)
    norm_s = np.linalg.norm(s)
    if norm_s == 0.0 or norm_y == 0.0:
        raise DegenerateStep("zero step or zero gradient difference",
                             details={"norm_s": float(norm_s), "norm_y": float(norm_y)})
    ys = float(y @ s)
    if ys <= tol * norm_y * norm_s:
        raise CurvatureFailure(f"curvature y^T s = {ys:.3e} below tolerance",
                               details={"ys": ys, "norm_y": float(norm_y), "norm_s": float(norm_s)})
    return float(norm_y ** 2 / ys)


def lbfgs_apply(gamma: float, memory: TupleMemory, x: np.ndarray) -> np.ndarray:
    """Apply the compact estimate to x in O(md)"""
    u = gamma * x
    if len(memory) == 0:
        return u
    Y, Q, alpha, beta = memory.arrays()
    u = u + Y.T @ ((Y @ x) / alpha)
    u -= Q.T @ ((Q @ x) / beta)
    return u


def smallest_eigenvalue(gamma: float, memory: TupleMemory) -> float:
    """min(gamma, smallest eigenvalue of the estimate) in O(m^2 d + m^3)

    The nonzero spectrum of W^T D W, with W = [Y; Q] and D = diag(1/alpha, -1/beta),
    equals that of G^(1/2) D G^(1/2) for the 2m x 2m Gram matrix G = W W^T.
    """
    if len(memory) == 0:
        return float(gamma)
    Y, Q, alpha, beta = memory.arrays()
    W = np.vstack([Y, Q])
    D = np.concatenate([1.0 / alpha, -1.0 / beta])
    evals, V = np.linalg.eigh(W @ W.T)
    root = (V * np.sqrt(np.clip(evals, 0.0, None))) @ V.T
    inner = root @ (D[:, None] * root)
    lowest = float(np.linalg.eigvalsh(0.5 * (inner + inner.T))[0])
    return float(gamma) + min(0.0, lowest)


def push_tuple(memory: TupleMemory, item: MemoryTuple) -> TupleMemory:
    memory.push(item)
    return memory


def materialize(gamma: float, memory: TupleMemory, d: int, cap: int = None) -> np.ndarray:
    """Dense d x d form of the estimate (diagnostics and test oracles only)"""
    cap = settings.DENSE_CAP if cap is None else cap
    if d > cap:
        raise DimensionTooLarge(f"dimension {d} exceeds dense cap {cap}",
                                details={"d": d, "cap": cap})
    if d != memory.d:
        raise InvalidTuple(f"dimension {d} does not match memory dimension {memory.d}")
    B = gamma * np.eye(d)
    if len(memory):
        Y, Q, alpha, beta = memory.arrays()
        B += (Y.T / alpha) @ Y
        B -= (Q.T / beta) @ Q
    return 0.5 * (B + B.T)
