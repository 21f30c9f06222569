"""
Analysis Service for TransNN Lab
Spectral extinction threshold of A⊙W and the homogeneous special case
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from config.app_config import AppConfig
from services.exceptions import ConvergenceError, DomainError, ValidationError
from services.network_service import NetworkKind, TransmissionNetwork

logger = logging.getLogger(__name__)

MatrixLike = Union[np.ndarray, scipy.sparse.spmatrix, scipy.sparse.sparray]


class SpectralMethod(str, Enum):
    POWER_ITERATION = "power_iteration"
    DENSE_EIGEN = "dense_eigen"
    ARNOLDI = "arnoldi"


class Verdict(str, Enum):
    GUARANTEED = "extinction guaranteed"
    NOT_GUARANTEED = "extinction not guaranteed"
    INDETERMINATE = "indeterminate at tolerance"
    UNCONVERGED = "unconverged"


@dataclass(frozen=True)
class SpectralEstimate:
    radius: float
    method: SpectralMethod
    iterations: int
    residual: float
    converged: bool


@dataclass(frozen=True)
class ThresholdReport:
    """
    Outcome of the sufficient extinction condition ρ(A⊙W) < 1.

    A radius >= 1 only means extinction is not guaranteed; it never claims the
    epidemic persists.
    """
    spectral_radius: float
    extinction_guaranteed: bool
    method: SpectralMethod
    iterations: int
    residual: float
    converged: bool
    verdict: Verdict

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["method"] = self.method.value
        data["verdict"] = self.verdict.value
        return data

    def summary(self) -> str:
        return f"radius {self.spectral_radius:.6f}, {self.verdict.value}"


def hadamard(a: MatrixLike, w: MatrixLike) -> MatrixLike:
    """Elementwise product A⊙W."""
    if scipy.sparse.issparse(a):
        if a.shape != w.shape:
            raise DomainError(f"shape mismatch: {a.shape} vs {w.shape}")
        return scipy.sparse.csr_array(a.multiply(w))
    a = np.asarray(a, dtype=float)
    w = np.asarray(w, dtype=float)
    if a.shape != w.shape:
        raise DomainError(f"shape mismatch: {a.shape} vs {w.shape}")
    return a * w


def _power_iteration(m: MatrixLike, tol: float, max_iter: int) -> SpectralEstimate:
    """
    Perron root of a nonnegative matrix by power iteration on M + I.

    The shift makes the Perron root strictly dominant even for periodic
    matrices; the Rayleigh quotient and the residual ||(M+I)x - λx|| are
    tracked on the unit iterate and the estimate restarts from a fresh
    positive vector if the iterate collapses to zero.
    """
    n = m.shape[0]
    x = np.full(n, 1.0 / np.sqrt(n))
    lam, residual = 0.0, np.inf
    restarts = 0
    for iteration in range(1, max_iter + 1):
        y = m @ x + x
        y_norm = np.linalg.norm(y)
        if y_norm == 0.0 or not np.isfinite(y_norm):
            restarts += 1
            x = np.random.default_rng(restarts).random(n) + 0.1
            x /= np.linalg.norm(x)
            continue
        lam = float(x @ y)
        residual = float(np.linalg.norm(y - lam * x))
        x = y / y_norm
        if residual < tol * max(1.0, lam):
            return SpectralEstimate(max(lam - 1.0, 0.0), SpectralMethod.POWER_ITERATION, iteration, residual, True)
    logger.warning(f"Power iteration unconverged after {max_iter} iterations (residual {residual:.3e})")
    return SpectralEstimate(max(lam - 1.0, 0.0), SpectralMethod.POWER_ITERATION, max_iter, residual, False)


def _dense_eigen(m: np.ndarray) -> SpectralEstimate:
    eigenvalues, vectors = scipy.linalg.eig(m)
    idx = int(np.argmax(np.abs(eigenvalues)))
    lam, v = eigenvalues[idx], vectors[:, idx]
    residual = float(np.linalg.norm(m @ v - lam * v))
    return SpectralEstimate(float(np.abs(lam)), SpectralMethod.DENSE_EIGEN, 0, residual, True)


def _arnoldi(m: MatrixLike, tol: float, max_iter: int) -> SpectralEstimate:
    try:
        values = scipy.sparse.linalg.eigs(m, k=1, which='LM', tol=tol, maxiter=max_iter,
                                          return_eigenvectors=False)
        return SpectralEstimate(float(np.abs(values[0])), SpectralMethod.ARNOLDI, max_iter, 0.0, True)
    except scipy.sparse.linalg.ArpackNoConvergence as e:
        best = float(np.max(np.abs(e.eigenvalues))) if len(e.eigenvalues) else float("nan")
        logger.warning(f"ARPACK did not converge; best estimate {best}")
        return SpectralEstimate(best, SpectralMethod.ARNOLDI, max_iter, float("inf"), False)


def spectral_radius(m: MatrixLike, tol: Optional[float] = None,
                    max_iter: Optional[int] = None) -> Tuple[float, SpectralEstimate]:
    """
    Approximate max_i |λ_i(m)|.

    Args:
        m: square dense array or scipy sparse matrix
        tol: residual tolerance (defaults to SPECTRAL_TOLERANCE)
        max_iter: iteration cap (defaults to MAX_POWER_ITERATIONS)

    Returns:
        (radius, estimate); unconverged runs return the best estimate with converged=False
    """
    settings = AppConfig.get_spectral_config()
    tol = settings["tol"] if tol is None else float(tol)
    max_iter = settings["max_iter"] if max_iter is None else int(max_iter)
    if tol <= 0:
        raise DomainError(f"tol must be positive, got {tol}")
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DomainError(f"spectral radius needs a square matrix, got shape {m.shape}")
    n = m.shape[0]
    if n == 0:
        return 0.0, SpectralEstimate(0.0, SpectralMethod.DENSE_EIGEN, 0, 0.0, True)

    sparse = scipy.sparse.issparse(m)
    values = m.data if sparse else np.asarray(m, dtype=float)
    if np.isnan(values).any():
        raise DomainError("matrix contains NaN")
    nonnegative = bool(np.all(values >= 0.0))

    if n <= settings["dense_max_n"]:
        dense = m.toarray() if sparse else np.asarray(m, dtype=float)
        estimate = _dense_eigen(dense)
        if nonnegative:
            check = _power_iteration(dense, max(tol, 1e-10), min(max_iter, 5000))
            if check.converged and abs(check.radius - estimate.radius) > 1e-8 * max(1.0, estimate.radius):
                logger.warning(
                    f"Power iteration ({check.radius}) disagrees with dense eigen ({estimate.radius})"
                )
        return estimate.radius, estimate

    if nonnegative:
        estimate = _power_iteration(m, tol, max_iter)
    elif sparse:
        estimate = _arnoldi(m, tol, max_iter)
    else:
        estimate = _dense_eigen(np.asarray(m, dtype=float))
    return estimate.radius, estimate


def _verdict(radius: float, converged: bool) -> Verdict:
    if not converged:
        return Verdict.UNCONVERGED
    if abs(radius - 1.0) < AppConfig.BOUNDARY_TOLERANCE:
        return Verdict.INDETERMINATE
    return Verdict.GUARANTEED if radius < 1.0 else Verdict.NOT_GUARANTEED


def extinction_check(net: TransmissionNetwork, tol: Optional[float] = None,
                     require_converged: bool = False) -> ThresholdReport:
    """
    Spectral test ρ(A⊙W) < 1 for an epidemic network; the same condition covers
    multi-particle counts. Sparse networks are tested on their CSR links.

    Args:
        net: effective, single- or multi-particle network
        tol: residual tolerance passed to spectral_radius
        require_converged: raise instead of reporting an unconverged estimate

    Returns:
        ThresholdReport with the radius, method and verdict

    Raises:
        ConvergenceError: when require_converged is set and the estimate did not converge
    """
    if not net.kind.is_epidemic:
        raise ValidationError("extinction check applies to epidemic networks only", "kind")
    if net.storage == "sparse":
        rows, cols, a_values, w_values = net.links
        if net.kind is NetworkKind.EFFECTIVE:
            w_values = np.ones_like(a_values)
        m = scipy.sparse.csr_array((a_values * w_values, (rows, cols)), shape=(net.n, net.n))
    else:
        w = np.ones_like(net.a) if net.kind is NetworkKind.EFFECTIVE else net.effective_w
        m = hadamard(net.a, w)
    radius, estimate = spectral_radius(m, tol=tol)
    if require_converged and not estimate.converged:
        raise ConvergenceError(f"spectral radius did not converge (best estimate {radius})")
    verdict = _verdict(radius, estimate.converged)
    if verdict is Verdict.INDETERMINATE:
        logger.warning(f"Spectral radius {radius} lies within {AppConfig.BOUNDARY_TOLERANCE} of 1")
    return ThresholdReport(
        spectral_radius=radius,
        extinction_guaranteed=radius < 1.0,
        method=estimate.method,
        iterations=estimate.iterations,
        residual=estimate.residual,
        converged=estimate.converged,
        verdict=verdict,
    )


def _check_simple_graph(adj: np.ndarray) -> np.ndarray:
    adj = np.asarray(adj, dtype=float)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ValidationError(f"adjacency must be square, got shape {adj.shape}", "adjacency")
    if np.any((adj != 0.0) & (adj != 1.0)):
        raise ValidationError("adjacency entries must be 0 or 1", "adjacency")
    if np.any(np.diag(adj) != 0.0):
        raise ValidationError("adjacency must have a zero diagonal", "adjacency")
    if not np.array_equal(adj, adj.T):
        raise ValidationError("adjacency must be symmetric", "adjacency")
    return adj


def homogeneous_threshold(adj_no_selfloops: Any, delta: float, beta: float) -> bool:
    """
    Homogeneous rule λ_max(Ã) < δ/β, equivalent to ρ(βÃ + (1-δ)I) < 1.

    β = 0 means no cross infection and always returns True.
    """
    adj = _check_simple_graph(adj_no_selfloops)
    if not (0.0 < delta < 1.0):
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    if not (0.0 <= beta < 1.0):
        raise DomainError(f"beta must lie in [0, 1), got {beta}")
    if beta == 0.0:
        return True
    lam_max = float(scipy.linalg.eigvalsh(adj)[-1]) if adj.shape[0] else 0.0
    return lam_max < delta / beta


def homogeneous_network(adj_no_selfloops: Any, delta: float, beta: float) -> TransmissionNetwork:
    """Single-particle network with a = Ã + I, w_ii = 1 - δ and w_ij = β on edges."""
    adj = _check_simple_graph(adj_no_selfloops)
    n = adj.shape[0]
    a = adj + np.eye(n)
    w = beta * adj + (1.0 - delta) * np.eye(n)
    return TransmissionNetwork(a=a, w=w, kind=NetworkKind.SINGLE)


def scan_extinction(nets: Iterable[TransmissionNetwork], workers: Optional[int] = None) -> List[ThresholdReport]:
    """Extinction checks over a family of networks; results keep the input order."""
    nets = list(nets)
    workers = workers or AppConfig.GRADIENT_WORKERS
    if workers <= 1 or len(nets) <= 1:
        return [extinction_check(net) for net in nets]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        reports = list(pool.map(extinction_check, nets))
    logger.info(f"Scanned {len(reports)} networks with {workers} workers")
    return reports
