"""
Pydantic schemas for diagnostics reports
"""
from pydantic import BaseModel, Field
from typing import Optional, List, Dict, Any

# ==================== THEORY SCHEMAS ====================

class QualityReport(BaseModel):
    """Hessian approximation constants observed along the trajectory"""
    eps_d: float
    eps_u: float
    eps: float
    snapshots: int = 0


class SpectrumReport(BaseModel):
    """Eigenvalue range of the worker estimates"""
    lambda_d: float
    lambda_u: float
    log_lambda_d: Optional[float] = None


class CertificationReport(BaseModel):
    """Whether the linear-rate preconditions hold for the run"""
    condition_holds: bool
    threshold: float
    eps: float
    kappa: float
    window_lo: float
    window_hi: float
    window_empty: bool
    eta: float
    eta_in_window: bool
    rho_theory: Optional[float] = None
    rho_variant: str = "split"
    certified: bool


class RateReportSchema(BaseModel):
    """Per-epoch contraction fitted on the trace"""
    rho_theory: Optional[float] = None
    rho_fitted: float
    epochs_used: int
    window: Optional[List[float]] = None
    per_epoch: List[float] = []
    violations: List[int] = []
    diverged: bool = False


# ==================== RUN REPORT ====================

class DiagnosticsReport(BaseModel):
    """Everything written to report.json next to the trace"""
    solver: str
    n_workers: int
    d: int
    memory: int
    eta: float
    gamma0: float
    mu: float
    L: float
    kappa: float
    f_star: Optional[float] = None
    reference_grad_norm: Optional[float] = None
    updates: int
    epoch_starts: List[int] = []
    epochs_completed: int = 0
    virtual_time: float = 0.0
    final_suboptimality: Optional[float] = None
    final_grad_norm: Optional[float] = None
    quality: Optional[QualityReport] = None
    spectrum: Optional[SpectrumReport] = None
    certification: Optional[CertificationReport] = None
    rate: Optional[RateReportSchema] = None
    rate_note: Optional[str] = None
    literature_bounds: Optional[SpectrumReport] = None
    memory_usage: Dict[str, Any] = Field(default_factory=dict)
    events: Dict[str, int] = Field(default_factory=dict)
    master: Dict[str, int] = Field(default_factory=dict)
