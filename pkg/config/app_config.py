"""
Application Configuration for TransNN Lab
Central configuration management for numerical tolerances, limits and defaults
"""

import os
import logging
from typing import Dict, Any
from dotenv import load_dotenv

# Initialize logger
logger = logging.getLogger(__name__)

# Load environment variables from .env file
load_dotenv()


class AppConfig:
    """
    Main application configuration class.
    Loads settings from environment variables and provides sensible defaults.
    Includes fail-fast validation for numerical settings.
    """

    # --- Core Application Settings ---
    APP_NAME: str = os.getenv('APP_NAME', 'TransNN Lab')
    VERSION: str = os.getenv('TRANSNN_VERSION', '1.0.0')
    LOG_LEVEL: str = os.getenv('LOG_LEVEL', 'INFO').upper()
    DEFAULT_SEED: int = int(os.getenv('DEFAULT_SEED', '0'))
    OUTPUT_DIR: str = os.getenv('OUTPUT_DIR', './runs')

    # --- Spectral Analysis ---
    SPECTRAL_TOLERANCE: float = float(os.getenv('SPECTRAL_TOLERANCE', '1e-12'))
    MAX_POWER_ITERATIONS: int = int(os.getenv('MAX_POWER_ITERATIONS', '100000'))
    BOUNDARY_TOLERANCE: float = float(os.getenv('BOUNDARY_TOLERANCE', '1e-9'))
    DENSE_EIGEN_MAX_N: int = int(os.getenv('DENSE_EIGEN_MAX_N', '64'))

    # --- Network Storage and Dynamics ---
    DENSE_STORAGE_MAX_N: int = int(os.getenv('DENSE_STORAGE_MAX_N', '2048'))
    SPARSE_DENSITY_THRESHOLD: float = float(os.getenv('SPARSE_DENSITY_THRESHOLD', '0.05'))
    LOG_SPACE_MIN_N: int = int(os.getenv('LOG_SPACE_MIN_N', '64'))
    PROBABILITY_SNAP_EPS: float = float(os.getenv('PROBABILITY_SNAP_EPS', '1e-15'))
    STREAMING_HORIZON_LIMIT: int = int(os.getenv('STREAMING_HORIZON_LIMIT', '1000000'))

    # --- Activation Calculus ---
    STIRLING_MAX_N: int = int(os.getenv('STIRLING_MAX_N', '30'))

    # --- Continuous Time ---
    RK4_REFERENCE_SUBSTEPS: int = int(os.getenv('RK4_REFERENCE_SUBSTEPS', '8'))

    # --- Learning ---
    GRADIENT_WORKERS: int = int(os.getenv('GRADIENT_WORKERS', '1'))
    RATIONAL_MAX_DENOMINATOR: int = int(os.getenv('RATIONAL_MAX_DENOMINATOR', '1000000'))
    DEFAULT_LEARNING_RATE: float = float(os.getenv('DEFAULT_LEARNING_RATE', '0.01'))
    DEFAULT_EPOCHS: int = int(os.getenv('DEFAULT_EPOCHS', '300'))
    DEFAULT_BATCH_SIZE: int = int(os.getenv('DEFAULT_BATCH_SIZE', '32'))

    @classmethod
    def validate_config(cls) -> None:
        """
        Validates numerical configuration settings.
        Raises ValueError if a setting is missing or invalid.
        """
        issues = []
        if cls.SPECTRAL_TOLERANCE <= 0:
            issues.append(f"SPECTRAL_TOLERANCE must be positive, but is {cls.SPECTRAL_TOLERANCE}")

        if cls.MAX_POWER_ITERATIONS < 1:
            issues.append(f"MAX_POWER_ITERATIONS must be at least 1, but is {cls.MAX_POWER_ITERATIONS}")

        if not (0.0 < cls.BOUNDARY_TOLERANCE < 1.0):
            issues.append(f"BOUNDARY_TOLERANCE must be in (0, 1), but is {cls.BOUNDARY_TOLERANCE}")

        if not (0.0 <= cls.SPARSE_DENSITY_THRESHOLD <= 1.0):
            issues.append(
                f"SPARSE_DENSITY_THRESHOLD must be between 0 and 1, but is {cls.SPARSE_DENSITY_THRESHOLD}"
            )

        if not (0.0 <= cls.PROBABILITY_SNAP_EPS < 1e-6):
            issues.append(f"PROBABILITY_SNAP_EPS must be in [0, 1e-6), but is {cls.PROBABILITY_SNAP_EPS}")

        if cls.STIRLING_MAX_N < 1:
            issues.append(f"STIRLING_MAX_N must be at least 1, but is {cls.STIRLING_MAX_N}")

        if cls.RK4_REFERENCE_SUBSTEPS < 1:
            issues.append(f"RK4_REFERENCE_SUBSTEPS must be at least 1, but is {cls.RK4_REFERENCE_SUBSTEPS}")

        if cls.GRADIENT_WORKERS < 1:
            issues.append(f"GRADIENT_WORKERS must be at least 1, but is {cls.GRADIENT_WORKERS}")

        if cls.DEFAULT_LEARNING_RATE < 0:
            issues.append(f"DEFAULT_LEARNING_RATE must be nonnegative, but is {cls.DEFAULT_LEARNING_RATE}")

        if issues:
            error_message = "Critical configuration errors found: " + ", ".join(issues)
            logger.error(error_message)
            raise ValueError(error_message)

    @classmethod
    def get_spectral_config(cls) -> Dict[str, Any]:
        """Returns a dictionary of spectral-analysis settings."""
        return {
            "tol": cls.SPECTRAL_TOLERANCE,
            "max_iter": cls.MAX_POWER_ITERATIONS,
            "boundary_tol": cls.BOUNDARY_TOLERANCE,
            "dense_max_n": cls.DENSE_EIGEN_MAX_N,
        }

    @classmethod
    def get_dynamics_config(cls) -> Dict[str, Any]:
        """Returns a dictionary of dynamics and storage settings."""
        return {
            "dense_storage_max_n": cls.DENSE_STORAGE_MAX_N,
            "sparse_density_threshold": cls.SPARSE_DENSITY_THRESHOLD,
            "log_space_min_n": cls.LOG_SPACE_MIN_N,
            "probability_snap_eps": cls.PROBABILITY_SNAP_EPS,
            "streaming_horizon_limit": cls.STREAMING_HORIZON_LIMIT,
        }

    @classmethod
    def get_training_defaults(cls) -> Dict[str, Any]:
        """Returns a dictionary of training defaults."""
        return {
            "learning_rate": cls.DEFAULT_LEARNING_RATE,
            "epochs": cls.DEFAULT_EPOCHS,
            "batch_size": cls.DEFAULT_BATCH_SIZE,
            "seed": cls.DEFAULT_SEED,
            "workers": cls.GRADIENT_WORKERS,
        }


# --- Run validation on import ---
try:
    AppConfig.validate_config()
except ValueError as e:
    logger.critical(f"Application startup failed due to configuration error: {e}")
