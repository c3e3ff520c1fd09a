"""
Pydantic schemas for configuration and reports
"""
from ldqn.schemas.run_schemas import (
    RunConfig, DatasetSpec, SynthConfig, QuadraticSpec, DelaySpec, StopRuleSpec
)
from ldqn.schemas.report_schemas import (
    QualityReport, SpectrumReport, CertificationReport, RateReportSchema, DiagnosticsReport
)
