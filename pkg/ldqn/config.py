"""
Configuration settings for the L-DQN solver
Numerical tolerances, dense caps and output locations
"""
import os


class Settings:
    """Solver settings"""

    PROJECT_NAME: str = "L-DQN"
    VERSION: str = "1.0.0"

    # Numerical tolerances
    CURVATURE_TOL: float = float(os.getenv("LDQN_CURVATURE_TOL", "1e-10"))
    DENOM_TOL: float = float(os.getenv("LDQN_DENOM_TOL", "1e-12"))
    SYMMETRY_TOL: float = float(os.getenv("LDQN_SYMMETRY_TOL", "1e-8"))
    # Smallest eigenvalue of a worker estimate, relative to its scale gamma
    ESTIMATE_FLOOR: float = float(os.getenv("LDQN_ESTIMATE_FLOOR", "1e-8"))
    # A decrease of gamma may lower the estimate by at most this share of its smallest eigenvalue
    SHIFT_SHARE: float = float(os.getenv("LDQN_SHIFT_SHARE", "0.5"))

    # Dense d x d objects are only built up to this dimension
    DENSE_CAP: int = int(os.getenv("LDQN_DENSE_CAP", "512"))

    # Diagnostics
    SNAPSHOT_INTERVAL: int = int(os.getenv("LDQN_SNAPSHOT_INTERVAL", "25"))

    # Solver defaults (m=20, eta=0.8 are the values used on the larger datasets)
    DEFAULT_MEMORY: int = 20
    DEFAULT_ETA: float = 0.8
    DEFAULT_MAX_UPDATES: int = 10000

    # Output and logging
    OUTPUT_DIR: str = os.getenv("LDQN_OUTPUT_DIR", "./runs")
    LOG_LEVEL: str = os.getenv("LDQN_LOG_LEVEL", "INFO")
    LOG_DIR: str = os.getenv("LDQN_LOG_DIR", "")

    def output_dir(self, fallback: str = None) -> str:
        """Output directory; the environment override wins over config values"""
        return os.getenv("LDQN_OUTPUT_DIR") or fallback or self.OUTPUT_DIR


# Global settings instance
settings = Settings()
