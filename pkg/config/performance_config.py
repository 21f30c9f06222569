"""
Performance Configuration for TransNN Lab
Thread settings for the BLAS/OpenMP backends behind numpy and scipy
"""

import logging
import os
import platform
from typing import Dict, Any

# Try to import psutil, but don't make it a hard requirement
try:
    import psutil
except ImportError:
    psutil = None

logger = logging.getLogger(__name__)


class PerformanceConfig:
    """
    Provides hardware-aware thread settings.
    This is not user-configurable via .env; it adapts to the host system.
    """
    # Physical cores suit dense linear algebra better than hyperthreads.
    CPU_PHYSICAL_CORES = (psutil.cpu_count(logical=False) or 4) if psutil else 4

    OMP_NUM_THREADS = str(CPU_PHYSICAL_CORES)
    MKL_NUM_THREADS = str(CPU_PHYSICAL_CORES)
    OPENBLAS_NUM_THREADS = str(CPU_PHYSICAL_CORES)


def apply_cpu_optimizations() -> None:
    """
    Exports BLAS/OpenMP thread counts.
    Must run before numpy is imported to take effect; values already set in
    the environment are left alone so runs stay reproducible across hosts.
    """
    logger.info(f"Applying CPU thread settings for {PerformanceConfig.CPU_PHYSICAL_CORES} physical cores.")
    os.environ.setdefault('OMP_NUM_THREADS', PerformanceConfig.OMP_NUM_THREADS)
    os.environ.setdefault('MKL_NUM_THREADS', PerformanceConfig.MKL_NUM_THREADS)
    os.environ.setdefault('OPENBLAS_NUM_THREADS', PerformanceConfig.OPENBLAS_NUM_THREADS)


def get_system_info() -> Dict[str, Any]:
    """
    Returns a dictionary of system information recorded in run manifests.
    Falls back to platform data only if psutil is not installed.
    """
    info: Dict[str, Any] = {
        "python_version": platform.python_version(),
        "platform": platform.platform(),
        "thread_settings": {
            "omp_threads": os.environ.get('OMP_NUM_THREADS'),
            "mkl_threads": os.environ.get('MKL_NUM_THREADS'),
            "openblas_threads": os.environ.get('OPENBLAS_NUM_THREADS'),
        },
    }
    if not psutil:
        logger.warning("psutil not installed, manifest will not include hardware info.")
        return info

    try:
        info.update({
            "cpu_physical_cores": PerformanceConfig.CPU_PHYSICAL_CORES,
            "cpu_logical_cores": psutil.cpu_count(logical=True),
            "memory_total_gb": round(psutil.virtual_memory().total / (1024**3), 2),
        })
    except Exception as e:
        logger.error(f"Could not retrieve system info: {e}", exc_info=True)
    return info
