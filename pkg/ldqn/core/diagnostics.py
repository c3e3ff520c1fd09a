"""
Diagnostics
Hessian-approximation constants, the linear-rate condition and stepsize
window, the theoretical contraction factor, per-epoch rate fitting and the
run report
"""
import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence

import numpy as np
from scipy import linalg

from ldqn.config import settings
from ldqn.core.error_handler import (
    ConfigError, DimensionTooLarge, EventMonitor, InsufficientEpochs, NotPositiveDefinite
)
from ldqn.core.logging import diagnostics_logger as logger
from ldqn.core.objectives import SmoothnessConstants
from ldqn.core.protocol_master import MasterState, StepRecord
from ldqn.core.protocol_worker import WorkerNode
from ldqn.core.simulator import EpochIndex, Trace
from ldqn.schemas.report_schemas import (
    CertificationReport, DiagnosticsReport, QualityReport, RateReportSchema, SpectrumReport
)

RATE_TOL = 1e-9


@dataclass(frozen=True)
class ApproxQuality:
    """eps_d I <= B^{-1/2} H B^{-1/2} <= eps_u I"""
    eps_d: float
    eps_u: float

    @property
    def eps(self) -> float:
        return self.eps_u / self.eps_d if self.eps_d > 0 else float("inf")


@dataclass(frozen=True)
class SpectrumBounds:
    """Eigenvalues of the worker estimates lie in [lambda_d, lambda_u]"""
    lambda_d: float
    lambda_u: float
    log_lambda_d: Optional[float] = None

    @property
    def kappa_tilde(self) -> float:
        return self.lambda_u / self.lambda_d if self.lambda_d > 0 else float("inf")


class ConditionCheck(NamedTuple):
    holds: bool
    threshold: float


class StepsizeWindow(NamedTuple):
    lo: float
    hi: float

    @property
    def empty(self) -> bool:
        return not self.lo < self.hi

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def contains(self, eta: float) -> bool:
        return self.lo < eta < self.hi


@dataclass
class RateReport:
    rho_theory: Optional[float]
    rho_fitted: float
    epochs_used: int
    window: Optional[StepsizeWindow] = None
    per_epoch: List[float] = field(default_factory=list)
    violations: List[int] = field(default_factory=list)

    @property
    def diverged(self) -> bool:
        return self.rho_fitted > 1.0

    def to_schema(self) -> RateReportSchema:
        return RateReportSchema(
            rho_theory=self.rho_theory,
            rho_fitted=self.rho_fitted,
            epochs_used=self.epochs_used,
            window=list(self.window) if self.window is not None else None,
            per_epoch=self.per_epoch,
            violations=self.violations,
            diverged=self.diverged,
        )


# ==================== ASSUMPTION CONSTANTS ====================


def estimate_quality(B_dense: np.ndarray, H: np.ndarray, cap: int = None) -> ApproxQuality:
    """Extreme generalized eigenvalues of the pencil (H, B)"""
    cap = settings.DENSE_CAP if cap is None else cap
    if B_dense.shape[0] > cap:
        raise DimensionTooLarge(f"dimension {B_dense.shape[0]} exceeds dense cap {cap}")
    try:
        eigs = linalg.eigh(H, B_dense, eigvals_only=True)
    except linalg.LinAlgError as e:
        raise NotPositiveDefinite(f"estimate is not positive definite: {e}")
    return ApproxQuality(eps_d=float(eigs[0]), eps_u=float(eigs[-1]))


def estimate_spectrum(B_dense: np.ndarray) -> SpectrumBounds:
    eigs = linalg.eigvalsh(B_dense)
    return SpectrumBounds(lambda_d=float(eigs[0]), lambda_u=float(eigs[-1]))


def check_rate_condition(eps: float, kappa: float) -> ConditionCheck:
    """eps < 1/2 [1 + 1/kappa + sqrt((1 + 1/kappa)^2 + 4/kappa)]"""
    inv = 0.0 if math.isinf(kappa) else 1.0 / kappa
    threshold = 0.5 * (1.0 + inv + math.sqrt((1.0 + inv) ** 2 + 4.0 * inv))
    return ConditionCheck(holds=bool(eps < threshold), threshold=threshold)


def stepsize_window(eps_d: float, eps_u: float, kappa: float) -> StepsizeWindow:
    """(1/eps_d (1 - 1/(eps kappa)), 2/(eps_d + eps_u)); empty when lo >= hi"""
    hi = 2.0 / (eps_d + eps_u) if eps_d + eps_u > 0 else 0.0
    if not eps_d > 0:
        return StepsizeWindow(math.inf, hi)
    eps = eps_u / eps_d
    lo = (1.0 / eps_d) * (1.0 - 1.0 / (eps * kappa))
    return StepsizeWindow(lo, hi)


def theoretical_rate(n: int, bounds: SpectrumBounds, eta: float, mu: float, L: float,
                     variant: str = "split") -> float:
    """sqrt(n) k/(k + n - 1) max{|1 - eta L/lambda_d|, |1 - eta mu/lambda_u|}, k = lambda_u/lambda_d

    variant="lower" uses lambda_d in both terms.
    """
    if variant not in ("split", "lower"):
        raise ConfigError(f"unknown rate variant {variant!r}")
    if not eta > 0:
        raise ConfigError("eta must be positive")
    k = bounds.kappa_tilde
    prefactor = math.sqrt(n) * k / (k + n - 1)
    lower = bounds.lambda_d if variant == "lower" else bounds.lambda_u
    return prefactor * max(abs(1.0 - eta * L / bounds.lambda_d), abs(1.0 - eta * mu / lower))


def literature_lambda_bounds(m: int, d: int, mu: float, L: float) -> SpectrumBounds:
    """lambda_u = (m + d) L, lambda_d = mu^(m+d) / ((m + d) L)^(m+d-1), evaluated in log space"""
    if m < 1 or d < 1:
        raise ConfigError("m and d must be at least 1")
    k = m + d
    log_lambda_d = k * math.log(mu) - (k - 1) * math.log(k * L)
    lambda_d = math.exp(log_lambda_d) if log_lambda_d > -745.0 else 0.0
    return SpectrumBounds(lambda_d=lambda_d, lambda_u=k * L, log_lambda_d=log_lambda_d)


# ==================== RATE FITTING ====================


def fit_epoch_rate(trace: Trace, epochs: EpochIndex, x_star: np.ndarray,
                   rho_theory: float = None, certified: bool = False,
                   window: StepsizeWindow = None) -> RateReport:
    """Largest per-epoch contraction (max_t ||x^t - x*|| / ||x^0 - x*||)^(1/m)

    Row t of the trace holds the iterate produced by the update at time t; the
    rows with t in [E_m, E_{m+1}) (t >= 1) make up epoch m.
    """
    m_total = epochs.complete_epochs
    if m_total < 3:
        raise InsufficientEpochs(f"{m_total} complete epochs; at least 3 are needed",
                                 details={"epochs": m_total})
    errors = np.linalg.norm(trace.iterate_array() - x_star, axis=1)
    ts = np.array([row["t"] for row in trace.rows])
    e0 = float(errors[0])

    per_epoch, violations = [], []
    for m in range(1, m_total + 1):
        lo, hi = epochs.bounds(m)
        mask = (ts >= max(lo, 1)) & (ts < hi)
        if not mask.any():
            continue
        ratio = float(errors[mask].max()) / e0 if e0 > 0 else 0.0
        per_epoch.append(ratio ** (1.0 / m))
        if certified and rho_theory is not None and ratio > rho_theory ** m + RATE_TOL:
            violations.append(m)

    report = RateReport(rho_theory=rho_theory, rho_fitted=max(per_epoch, default=0.0),
                        epochs_used=len(per_epoch), window=window,
                        per_epoch=per_epoch, violations=violations)
    if violations:
        logger.warning(f"Per-epoch contraction exceeded the theoretical rate in epochs {violations[:10]}")
    if report.diverged:
        logger.warning(f"Fitted rate {report.rho_fitted:.4f} > 1: iterates are not converging")
    return report


# ==================== TRAJECTORY MONITOR ====================


class AssumptionMonitor:
    """Observer that snapshots worker estimates every `interval` updates

    Each snapshot materializes B_i, the local Hessian at z_i, and folds the
    generalized eigenvalue range and the spectrum of B_i into running extremes.
    """

    def __init__(self, interval: int = None, cap: int = None, monitor: EventMonitor = None):
        self.interval = settings.SNAPSHOT_INTERVAL if interval is None else interval
        self.cap = settings.DENSE_CAP if cap is None else cap
        self.monitor = monitor or EventMonitor()
        self.eps_d = math.inf
        self.eps_u = -math.inf
        self.lambda_d = math.inf
        self.lambda_u = -math.inf
        self.snapshots = 0
        self._disabled = False

    def snapshot(self, workers: Sequence[WorkerNode]) -> None:
        if self._disabled:
            return
        if workers and workers[0].d > self.cap:
            logger.warning(f"Dimension {workers[0].d} exceeds dense cap {self.cap}; snapshots disabled")
            self._disabled = True
            return
        for worker in workers:
            B = worker.dense_estimate(self.cap)
            spectrum = estimate_spectrum(B)
            if spectrum.lambda_d <= 0:
                self.monitor.track("INDEFINITE_SNAPSHOT")
                continue
            quality = estimate_quality(B, worker.shard.hessian(worker.z, self.cap), self.cap)
            self.eps_d = min(self.eps_d, quality.eps_d)
            self.eps_u = max(self.eps_u, quality.eps_u)
            self.lambda_d = min(self.lambda_d, spectrum.lambda_d)
            self.lambda_u = max(self.lambda_u, spectrum.lambda_u)
        self.snapshots += 1

    def __call__(self, master: MasterState, workers: Sequence[WorkerNode], record: StepRecord) -> None:
        if self.interval > 0 and record.t % self.interval == 0:
            self.snapshot(workers)

    def quality(self) -> Optional[ApproxQuality]:
        if not math.isfinite(self.eps_d):
            return None
        return ApproxQuality(self.eps_d, self.eps_u)

    def spectrum(self) -> Optional[SpectrumBounds]:
        if not math.isfinite(self.lambda_d):
            return None
        return SpectrumBounds(self.lambda_d, self.lambda_u)


@dataclass
class Certification:
    condition: ConditionCheck
    window: StepsizeWindow
    eps: float
    kappa: float
    eta: float
    rho_theory: Optional[float]
    variant: str = "split"

    @property
    def eta_in_window(self) -> bool:
        return not self.window.empty and self.window.contains(self.eta)

    @property
    def certified(self) -> bool:
        return (self.condition.holds and self.eta_in_window
                and self.rho_theory is not None and self.rho_theory < 1.0)

    def to_schema(self) -> CertificationReport:
        return CertificationReport(
            condition_holds=self.condition.holds, threshold=self.condition.threshold,
            eps=self.eps, kappa=self.kappa, window_lo=self.window.lo, window_hi=self.window.hi,
            window_empty=self.window.empty, eta=self.eta, eta_in_window=self.eta_in_window,
            rho_theory=self.rho_theory, rho_variant=self.variant, certified=self.certified,
        )


def certify(quality: ApproxQuality, constants: SmoothnessConstants, eta: float, n: int,
            bounds: Optional[SpectrumBounds] = None, variant: str = "split") -> Certification:
    """Check the linear-rate preconditions for a run"""
    condition = check_rate_condition(quality.eps, constants.kappa)
    window = stepsize_window(quality.eps_d, quality.eps_u, constants.kappa)
    rho = None
    if bounds is not None and bounds.lambda_d > 0:
        rho = theoretical_rate(n, bounds, eta, constants.mu, constants.L, variant)
    result = Certification(condition, window, quality.eps, constants.kappa, eta, rho, variant)
    logger.info(f"Certification: eps={quality.eps:.4f} threshold={condition.threshold:.4f} "
                f"window=({window.lo:.4f}, {window.hi:.4f}) eta={eta} rho={rho} certified={result.certified}")
    return result


def build_report(*, solver: str, n_workers: int, d: int, memory: int, eta: float, gamma0: float,
                 constants: SmoothnessConstants, trace: Trace, f_star: Optional[float] = None,
                 reference_grad_norm: Optional[float] = None,
                 quality: Optional[ApproxQuality] = None, spectrum: Optional[SpectrumBounds] = None,
                 snapshots: int = 0, certification: Optional[Certification] = None,
                 rate: Optional[RateReport] = None, rate_note: Optional[str] = None,
                 memory_usage: dict = None, events: dict = None, master: dict = None) -> DiagnosticsReport:
    last = trace.rows[-1] if trace.rows else {}
    subopt = last.get("suboptimality")
    literature = None
    if constants.mu > 0 and solver == "ldqn":
        lit = literature_lambda_bounds(memory, d, constants.mu, constants.L)
        literature = SpectrumReport(lambda_d=lit.lambda_d, lambda_u=lit.lambda_u, log_lambda_d=lit.log_lambda_d)
    return DiagnosticsReport(
        solver=solver, n_workers=n_workers, d=d, memory=memory, eta=eta, gamma0=gamma0,
        mu=constants.mu, L=constants.L, kappa=constants.kappa,
        f_star=f_star, reference_grad_norm=reference_grad_norm,
        updates=trace.updates, epoch_starts=list(trace.epochs.starts),
        epochs_completed=trace.epochs.complete_epochs,
        virtual_time=float(last.get("virtual_time", 0.0)),
        final_suboptimality=None if subopt is None or math.isnan(subopt) else float(subopt),
        final_grad_norm=last.get("grad_norm"),
        quality=QualityReport(eps_d=quality.eps_d, eps_u=quality.eps_u, eps=quality.eps,
                              snapshots=snapshots) if quality else None,
        spectrum=SpectrumReport(lambda_d=spectrum.lambda_d, lambda_u=spectrum.lambda_u) if spectrum else None,
        certification=certification.to_schema() if certification else None,
        rate=rate.to_schema() if rate else None,
        rate_note=rate_note,
        literature_bounds=literature,
        memory_usage=memory_usage or {},
        events=events or {},
        master=master or {},
    )
