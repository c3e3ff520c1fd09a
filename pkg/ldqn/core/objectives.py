"""
Objectives
Regularized logistic regression and quadratic shards, the finite-sum
objective over them, smoothness constants and the reference solve
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import List, Sequence, Tuple
import logging

import numpy as np
import scipy.sparse as sp
from scipy import linalg, optimize
from scipy.special import expit

from ldqn.config import settings
from ldqn.core.error_handler import DimensionTooLarge, ConfigError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SmoothnessConstants:
    """Strong convexity and smoothness bounds shared by all components"""
    mu: float
    L: float

    @property
    def kappa(self) -> float:
        return self.L / self.mu if self.mu > 0 else float("inf")


def _check_dense(d: int, cap: int = None) -> None:
    cap = settings.DENSE_CAP if cap is None else cap
    if d > cap:
        raise DimensionTooLarge(f"dense Hessian of dimension {d} exceeds cap {cap}",
                                details={"d": d, "cap": cap})


class ShardObjective(ABC):
    """Local component f_i held by one worker"""

    d: int

    @abstractmethod
    def loss(self, x: np.ndarray) -> float:
        ...

    @abstractmethod
    def gradient(self, x: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def hessian(self, x: np.ndarray, cap: int = None) -> np.ndarray:
        ...

    @abstractmethod
    def hessian_vector(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def constants(self) -> SmoothnessConstants:
        ...


class LogisticShard(ShardObjective):
    """(1/|S|) sum_j log(1 + exp(-b_j a_j^T x)) + (lam/2)||x||^2"""

    def __init__(self, rows, labels, lam: float = 0.0):
        self.rows = sp.csr_matrix(rows, dtype=float)
        self.labels = np.asarray(labels, dtype=float).ravel()
        self.lam = float(lam)
        self.d = self.rows.shape[1]
        if self.rows.shape[0] != self.labels.shape[0]:
            raise ConfigError("rows and labels disagree in length")
        if self.lam < 0:
            raise ConfigError("regularization weight must be nonnegative")
        if self.labels.size and not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise ConfigError("labels must be in {-1, +1}")

    @property
    def n_samples(self) -> int:
        return self.rows.shape[0]

    def _margins(self, x: np.ndarray) -> np.ndarray:
        return self.labels * (self.rows @ x)

    def loss(self, x: np.ndarray) -> float:
        value = 0.5 * self.lam * float(x @ x)
        if self.n_samples:
            value += float(np.mean(np.logaddexp(0.0, -self._margins(x))))
        return value

    def gradient(self, x: np.ndarray) -> np.ndarray:
        grad = self.lam * x
        if self.n_samples:
            coef = -self.labels * expit(-self._margins(x))
            grad = grad + (self.rows.T @ coef) / self.n_samples
        return grad

    def _curvature_weights(self, x: np.ndarray) -> np.ndarray:
        m = self._margins(x)
        return expit(m) * expit(-m)

    def hessian(self, x: np.ndarray, cap: int = None) -> np.ndarray:
        _check_dense(self.d, cap)
        H = self.lam * np.eye(self.d)
        if self.n_samples:
            w = self._curvature_weights(x)
            H += (self.rows.T @ sp.diags(w) @ self.rows).toarray() / self.n_samples
        return 0.5 * (H + H.T)

    def hessian_vector(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        hv = self.lam * v
        if self.n_samples:
            w = self._curvature_weights(x)
            hv = hv + (self.rows.T @ (w * (self.rows @ v))) / self.n_samples
        return hv

    def constants(self) -> SmoothnessConstants:
        # sigma' <= 1/4, so L <= lam + max ||a||^2 / 4
        max_sq = 0.0
        if self.n_samples:
            max_sq = float(self.rows.multiply(self.rows).sum(axis=1).max())
        return SmoothnessConstants(mu=self.lam, L=self.lam + max_sq / 4.0)


class QuadraticShard(ShardObjective):
    """f_i(x) = 1/2 (x - x_star)^T Q (x - x_star)"""

    def __init__(self, Q, x_star):
        self.Q = np.asarray(Q, dtype=float)
        self.x_star = np.asarray(x_star, dtype=float).ravel()
        self.d = self.x_star.shape[0]
        if self.Q.shape != (self.d, self.d):
            raise ConfigError("Q must be a d x d matrix matching x_star")
        if not np.allclose(self.Q, self.Q.T, atol=settings.SYMMETRY_TOL):
            raise ConfigError("Q must be symmetric")

    def loss(self, x: np.ndarray) -> float:
        r = x - self.x_star
        return 0.5 * float(r @ (self.Q @ r))

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.Q @ (x - self.x_star)

    def hessian(self, x: np.ndarray = None, cap: int = None) -> np.ndarray:
        _check_dense(self.d, cap)
        return self.Q.copy()

    def hessian_vector(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        return self.Q @ v

    def constants(self) -> SmoothnessConstants:
        eigs = linalg.eigvalsh(self.Q)
        return SmoothnessConstants(mu=float(eigs[0]), L=float(eigs[-1]))


def shard_loss(shard: ShardObjective, x: np.ndarray) -> float:
    return shard.loss(x)


def shard_gradient(shard: ShardObjective, x: np.ndarray) -> np.ndarray:
    return shard.gradient(x)


def shard_hessian(shard: ShardObjective, x: np.ndarray, cap: int = None) -> np.ndarray:
    return shard.hessian(x, cap)


def global_constants(shards: Sequence[ShardObjective]) -> SmoothnessConstants:
    """Conservative (mu, L) valid for every component"""
    if not shards:
        raise ConfigError("at least one shard is required")
    per_shard = [shard.constants() for shard in shards]
    constants = SmoothnessConstants(mu=min(c.mu for c in per_shard),
                                    L=max(c.L for c in per_shard))
    if constants.mu <= 0:
        logger.warning("Components are not strongly convex (mu = 0); condition number is infinite")
    return constants


class FiniteSumObjective:
    """f(x) = (1/n) sum_i f_i(x)"""

    def __init__(self, shards: Sequence[ShardObjective]):
        if not shards:
            raise ConfigError("at least one shard is required")
        self.shards: List[ShardObjective] = list(shards)
        self.d = self.shards[0].d
        if any(shard.d != self.d for shard in self.shards):
            raise ConfigError("all shards must share the dimension d")

    @property
    def n(self) -> int:
        return len(self.shards)

    def loss(self, x: np.ndarray) -> float:
        return float(np.mean([shard.loss(x) for shard in self.shards]))

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return np.mean([shard.gradient(x) for shard in self.shards], axis=0)

    def loss_and_gradient(self, x: np.ndarray) -> Tuple[float, np.ndarray]:
        return self.loss(x), self.gradient(x)

    def hessian(self, x: np.ndarray, cap: int = None) -> np.ndarray:
        return np.mean([shard.hessian(x, cap) for shard in self.shards], axis=0)


def reference_solution(objective: FiniteSumObjective, tol: float = 1e-12,
                       x0: np.ndarray = None, max_iter: int = 200,
                       cap: int = None) -> Tuple[np.ndarray, float, float]:
    """High-accuracy minimizer: damped Newton up to the dense cap, L-BFGS-B beyond"""
    cap = settings.DENSE_CAP if cap is None else cap
    x = np.zeros(objective.d) if x0 is None else np.asarray(x0, dtype=float).copy()

    if objective.d <= cap:
        f, g = objective.loss_and_gradient(x)
        for _ in range(max_iter):
            if np.linalg.norm(g) <= tol:
                break
            H = objective.hessian(x, cap)
            try:
                p = -linalg.cho_solve(linalg.cho_factor(H), g)
            except linalg.LinAlgError:
                # singular Hessian, e.g. lam = 0 with an all-zero feature: minimum-norm step
                p = -linalg.lstsq(H, g)[0]
            slope = float(g @ p)
            step = 1.0
            while step > 1e-10:
                f_new = objective.loss(x + step * p)
                if f_new <= f + 1e-4 * step * slope:
                    break
                step *= 0.5
            else:
                # rounding dominates the decrease test near the optimum
                step = 1.0
            x_new = x + step * p
            f_new, g_new = objective.loss_and_gradient(x_new)
            if np.linalg.norm(g_new) >= np.linalg.norm(g) and step == 1.0 and f_new >= f:
                break  # stalled at roundoff
            x, f, g = x_new, f_new, g_new
    else:
        result = optimize.minimize(objective.loss_and_gradient, x, jac=True, method="L-BFGS-B",
                                   options={"gtol": tol, "ftol": 0.0, "maxiter": 20000})
        x = result.x
        f, g = objective.loss_and_gradient(x)

    grad_norm = float(np.linalg.norm(g))
    if grad_norm > tol:
        logger.warning(f"Reference solve stopped at gradient norm {grad_norm:.3e} (target {tol:.1e})")
    else:
        logger.info(f"Reference solve reached gradient norm {grad_norm:.3e}")
    return x, float(f), grad_norm


def random_quadratic_shards(n: int, d: int, eig_lo: float = 1.0, eig_hi: float = 2.0,
                            seed: int = 0, x_star: np.ndarray = None) -> List[QuadraticShard]:
    """Quadratic shards sharing x_star whose spectra span [eig_lo, eig_hi] exactly"""
    if not 0 < eig_lo <= eig_hi:
        raise ConfigError("eigenvalue range must satisfy 0 < eig_lo <= eig_hi")
    rng = np.random.default_rng(seed)
    if x_star is None:
        x_star = rng.standard_normal(d)
    eigs = np.linspace(eig_lo, eig_hi, d) if d > 1 else np.array([eig_lo])
    shards = []
    for _ in range(n):
        V, R = np.linalg.qr(rng.standard_normal((d, d)))
        V *= np.sign(np.diag(R))
        Q = (V * eigs) @ V.T
        shards.append(QuadraticShard(0.5 * (Q + Q.T), x_star))
    return shards
