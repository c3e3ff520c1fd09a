"""
Error Handling for the L-DQN solver
Exception hierarchy with error codes, structured error reports and
numerical event monitoring
"""
import traceback
import uuid
from typing import Dict, Any, Optional
from datetime import datetime, timezone
from collections import Counter
import logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

ERROR_CODES = {
    # Configuration
    "CFG_001": "Invalid configuration",
    "CFG_002": "Dense dimension cap exceeded",

    # Data
    "DATA_001": "Malformed LIBSVM line",
    "DATA_002": "Invalid feature index",
    "DATA_003": "Unsupported label set",
    "DATA_004": "Dataset not readable",
    "DATA_005": "Incompatible traces",

    # Numerical
    "NUM_001": "Curvature condition failed",
    "NUM_002": "Degenerate step",
    "NUM_003": "Invalid memory tuple",
    "NUM_004": "Singular rank-one update",
    "NUM_005": "Matrix not positive definite",
    "NUM_006": "Singular aggregate estimate",
    "NUM_007": "Non-finite iterate",

    # Analysis
    "ANA_001": "Insufficient communication history",
    "ANA_002": "Insufficient epochs",
}


class LDQNError(Exception):
    """Base error carrying a code and structured details"""

    code = "SYS_001"
    exit_code = EXIT_UNEXPECTED

    def __init__(self, message: str = None, code: str = None, details: Dict[str, Any] = None):
        self.code = code or self.code
        self.message = message or ERROR_CODES.get(self.code, "Unknown error")
        self.details = details or {}
        super().__init__(self.message)


class ConfigError(LDQNError):
    code = "CFG_001"
    exit_code = EXIT_CONFIG


class DataError(LDQNError):
    code = "DATA_004"
    exit_code = EXIT_DATA


class NumericalError(LDQNError):
    code = "NUM_005"
    exit_code = EXIT_NUMERICAL


class AnalysisError(LDQNError):
    code = "ANA_001"
    exit_code = EXIT_NUMERICAL


class DimensionTooLarge(ConfigError):
    code = "CFG_002"


class ParseError(DataError):
    code = "DATA_001"


class LibsvmIndexError(DataError, IndexError):
    code = "DATA_002"


class IncompatibleTraces(DataError):
    code = "DATA_005"


class CurvatureFailure(NumericalError):
    code = "NUM_001"


class DegenerateStep(NumericalError):
    code = "NUM_002"


class InvalidTuple(NumericalError):
    code = "NUM_003"


class SingularUpdate(NumericalError):
    code = "NUM_004"


class NotPositiveDefinite(NumericalError):
    code = "NUM_005"


class SingularEstimate(NumericalError):
    code = "NUM_006"


class DivergedIterate(NumericalError):
    code = "NUM_007"


class InsufficientHistory(AnalysisError):
    code = "ANA_001"


class InsufficientEpochs(AnalysisError):
    code = "ANA_002"


class ErrorHandler:
    """Maps exceptions to structured reports and process exit codes"""

    def __init__(self):
        self.error_codes = dict(ERROR_CODES)

    def create_error_report(
        self,
        error_code: str,
        message: str = None,
        details: Dict[str, Any] = None,
        exit_code: int = EXIT_UNEXPECTED,
        run_id: str = None
    ) -> Dict[str, Any]:
        """Create standardized error report"""
        report = {
            "error": {
                "code": error_code,
                "message": message or self.error_codes.get(error_code, "Unknown error"),
                "details": details or {},
                "run_id": run_id or str(uuid.uuid4()),
                "timestamp": datetime.now(timezone.utc).isoformat(),
                "exit_code": exit_code
            }
        }
        self.log_error(error_code, report["error"]["message"], details or {}, exit_code)
        return report

    def log_error(self, error_code: str, message: str, details: Dict[str, Any], exit_code: int):
        """Log error with structured information"""
        log_data = {"error_code": error_code, "details": details, "exit_code": exit_code}
        if exit_code == EXIT_UNEXPECTED:
            logger.error(f"Unexpected Error [{error_code}]: {message}", extra={"ldqn": log_data})
        else:
            logger.warning(f"Run Error [{error_code}]: {message}", extra={"ldqn": log_data})

    def handle(self, error: Exception, run_id: str = None) -> Dict[str, Any]:
        """Build the report for any exception raised by a run"""
        if isinstance(error, LDQNError):
            return self.create_error_report(
                error.code, error.message, error.details, error.exit_code, run_id
            )
        logger.error(f"Unexpected error: {error}", extra={"ldqn": {
            "traceback": traceback.format_exc(),
            "error_type": type(error).__name__
        }})
        return self.create_error_report(
            "SYS_001", "An unexpected error occurred",
            {"error_type": type(error).__name__, "error": str(error)},
            EXIT_UNEXPECTED, run_id
        )

    def exit_code_for(self, error: Exception) -> int:
        return error.exit_code if isinstance(error, LDQNError) else EXIT_UNEXPECTED


# Global error handler instance
error_handler = ErrorHandler()


class EventMonitor:
    """Counts numerical events during a run and alerts past thresholds"""

    def __init__(self, alert_thresholds: Optional[Dict[str, int]] = None):
        self.counts: Counter = Counter()
        self.alerted = set()
        self.alert_thresholds = alert_thresholds or {
            "SINGULAR_UPDATE": 10,
            "INDEFINITE_SNAPSHOT": 10,
            "REFACTOR_FALLBACK": 1,
        }

    def track(self, event: str, count: int = 1):
        """Track event occurrence"""
        self.counts[event] += count

        threshold = self.alert_thresholds.get(event)
        if threshold and self.counts[event] >= threshold and event not in self.alerted:
            self.alerted.add(event)
            logger.critical(f"ALERT: event threshold exceeded for {event}: {self.counts[event]} occurrences")

    def get_event_stats(self) -> Dict[str, int]:
        return dict(sorted(self.counts.items()))

    def reset(self):
        self.counts.clear()
        self.alerted.clear()
