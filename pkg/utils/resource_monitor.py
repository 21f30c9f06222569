"""
Resource monitoring for TransNN Lab
Wall-time and resident-memory profiling of long-running experiment steps
"""

import logging
import time
from functools import wraps
from typing import Callable

# Try to import psutil, but don't make it a hard requirement
try:
    import psutil
except ImportError:
    psutil = None

logger = logging.getLogger(__name__)


def resource_profile(func: Callable) -> Callable:
    """Decorator logging wall time and, when psutil is present, the RSS growth of a call."""
    @wraps(func)
    def wrapper(*args, **kwargs):
        process = psutil.Process() if psutil else None
        mem_before = process.memory_info().rss / 1024**2 if process else 0.0
        start = time.perf_counter()
        try:
            return func(*args, **kwargs)
        except Exception as e:
            # the caller reports the failure; keep the traceback for --log-level DEBUG
            logger.debug(f"Error executing {func.__name__}: {e}", exc_info=True)
            raise
        finally:
            elapsed = time.perf_counter() - start
            if process:
                mem_diff = process.memory_info().rss / 1024**2 - mem_before
                logger.info(f"{func.__name__} took {elapsed:.3f}s, memory {mem_diff:+.2f}MB")
            else:
                logger.info(f"{func.__name__} took {elapsed:.3f}s")

    return wrapper
