"""
Activation Service for TransNN Lab
Tunable activation functions TLogSigmoid (Ψ), TLogSigmoidPlus (Ψ₊) and
TSoftAffine (Φ) with their closed-form derivative calculus.

All functions accept scalars or numpy arrays (broadcast together) and return a
float for scalar inputs. The activation level w must lie in [0, 1]; the input
x is an extended real, with ±inf represented by the floating-point infinities.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Callable, Tuple, Union

import numpy as np
from scipy.special import expit, logit

from config.app_config import AppConfig
from services.exceptions import DomainError, RangeError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


class ActivationKind(str, Enum):
    """The three tunable activations."""
    TLOG_SIGMOID = "tlogsigmoid"
    TLOG_SIGMOID_PLUS = "tlogsigmoid_plus"
    TSOFT_AFFINE = "tsoftaffine"

    @classmethod
    def parse(cls, name: str) -> "ActivationKind":
        """Accepts the enum value or the short aliases psi / psi_plus / phi."""
        aliases = {
            "psi": cls.TLOG_SIGMOID,
            "psi_plus": cls.TLOG_SIGMOID_PLUS,
            "psi+": cls.TLOG_SIGMOID_PLUS,
            "phi": cls.TSOFT_AFFINE,
        }
        key = name.strip().lower()
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError as e:
            raise DomainError(f"Unknown activation kind '{name}'") from e


def _prepare(w: ArrayLike, x: ArrayLike) -> Tuple[np.ndarray, np.ndarray, bool]:
    w_arr = np.asarray(w, dtype=float)
    x_arr = np.asarray(x, dtype=float)
    if np.isnan(w_arr).any() or np.any((w_arr < 0.0) | (w_arr > 1.0)):
        raise DomainError("activation level w must lie in [0, 1]")
    if np.isnan(x_arr).any():
        raise DomainError("NaN input to activation")
    scalar = w_arr.ndim == 0 and x_arr.ndim == 0
    w_arr, x_arr = np.broadcast_arrays(w_arr, x_arr)
    return w_arr, x_arr, scalar


def _finish(out: np.ndarray, scalar: bool) -> ArrayLike:
    return float(out) if scalar else out


def _check_order(order: int, minimum: int, name: str) -> None:
    if isinstance(order, bool) or not isinstance(order, (int, np.integer)) or order < minimum:
        raise DomainError(f"{name} must be an integer >= {minimum}, got {order!r}")


# --- Ψ, Ψ₊, Φ ---

def psi(w: ArrayLike, x: ArrayLike) -> ArrayLike:
    """
    TLogSigmoid Ψ(w, x) = -log(1 - w + w e^{-x}).

    Two branches keep full precision: log1p(w·expm1(-x)) while w(1 - e^{-x})
    stays at most 1/2, and x - logaddexp(log w, log(1-w) + x) beyond that,
    where the log1p argument would approach -1. The second form also covers
    x below about -709, where e^{-x} overflows.
    """
    w, x, scalar = _prepare(w, x)
    with np.errstate(all='ignore'):
        em = np.expm1(-x)
        near = -np.log1p(w * em)
        far = x - np.logaddexp(np.log(w), np.log1p(-w) + x)
        out = np.where((-w * em > 0.5) | np.isposinf(em), far, near)
        out = np.where(w == 0.0, 0.0, out)
        out = np.where(np.isposinf(x), -np.log1p(-w), out)
    return _finish(out, scalar)


def psi_plus(w: ArrayLike, x: ArrayLike) -> ArrayLike:
    """TLogSigmoidPlus: Ψ(w, x) for x >= 0 and 0 for x < 0 (ReLU at w = 1)."""
    w, x, scalar = _prepare(w, x)
    out = np.where(x >= 0.0, psi(w, np.maximum(x, 0.0)), 0.0)
    return _finish(out, scalar)


def phi(w: ArrayLike, x: ArrayLike) -> ArrayLike:
    """TSoftAffine Φ(w, x) = log(1 - w + w e^{x}) = -Ψ(w, -x)."""
    w, x, scalar = _prepare(w, x)
    return _finish(-psi(w, -x), scalar)


# --- derivatives of Ψ ---

def dpsi_dw(w: ArrayLike, x: ArrayLike) -> ArrayLike:
    """∂_w Ψ(w, x) = (1 - e^{-x}) e^{Ψ(w, x)}; equals 2·tanh(x/2) at w = 1/2."""
    w, x, scalar = _prepare(w, x)
    with np.errstate(all='ignore'):
        # x <= 0: numerator and denominator scaled by e^{x} to stay finite
        left = np.expm1(x) / (w + (1.0 - w) * np.exp(x))
        right = -np.expm1(-x) / (1.0 - w + w * np.exp(-x))
        out = np.where(x > 0.0, right, left)
    return _finish(out, scalar)


def _log_space_power(base: np.ndarray, k: int) -> np.ndarray:
    """(k-1)!·base^k evaluated as sign·exp(lgamma(k) + k·log|base|)."""
    with np.errstate(all='ignore'):
        sign = np.sign(base) ** k
        magnitude = np.exp(math.lgamma(k) + k * np.log(np.abs(base)))
        return sign * magnitude


def dpsi_dw_higher(w: ArrayLike, x: ArrayLike, k: int) -> ArrayLike:
    """
    k-th derivative in w: (k-1)!·(1 - e^{-x})^k·e^{kΨ(w, x)} = (k-1)!·(∂_w Ψ)^k.
    Factorial growth saturates to ±inf instead of raising.
    """
    _check_order(k, 1, "k")
    w, x, scalar = _prepare(w, x)
    out = _log_space_power(np.asarray(dpsi_dw(w, x), dtype=float), int(k))
    return _finish(out, scalar)


def dpsi_dx(w: ArrayLike, x: ArrayLike) -> ArrayLike:
    """∂_x Ψ(w, x) = w e^{-x} e^{Ψ(w, x)} = expit(logit(w) - x), in [0, 1]."""
    w, x, scalar = _prepare(w, x)
    with np.errstate(all='ignore'):
        interior = expit(logit(w) - x)
    out = np.where(w == 0.0, 0.0, np.where(w == 1.0, 1.0, interior))
    return _finish(out, scalar)


@lru_cache(maxsize=None)
def stirling2(n: int, k: int) -> int:
    """
    Stirling number of the second kind S(n, k).

    Row recurrence S(i, j) = j·S(i-1, j) + S(i-1, j-1) with S(0, 0) = 1.
    n is capped at AppConfig.STIRLING_MAX_N so results stay exact.
    """
    if isinstance(n, bool) or isinstance(k, bool) or not isinstance(n, (int, np.integer)) \
            or not isinstance(k, (int, np.integer)):
        raise RangeError(f"stirling2 expects integers, got ({n!r}, {k!r})")
    n, k = int(n), int(k)
    if n < 0 or k < 0 or n > AppConfig.STIRLING_MAX_N:
        raise RangeError(f"stirling2 requires 0 <= k <= n <= {AppConfig.STIRLING_MAX_N}, got ({n}, {k})")
    if k > n:
        return 0
    if n == k:
        return 1
    if k == 0:
        return 0
    row = [1] + [0] * k
    for i in range(1, n + 1):
        for j in range(min(k, i), 0, -1):
            row[j] = j * row[j] + row[j - 1]
        row[0] = 0
    return row[k]


def _stirling_series(d: np.ndarray, n: int, sign_offset: int) -> np.ndarray:
    # Σ_{k=1}^{n} (-1)^{k + sign_offset} (k-1)! S(n, k) d^k
    total = np.zeros_like(d)
    for k in range(1, n + 1):
        coefficient = (-1) ** (k + sign_offset) * math.factorial(k - 1) * stirling2(n, k)
        total = total + float(coefficient) * d ** k
    return total


def dpsi_dx_higher(w: ArrayLike, x: ArrayLike, n: int) -> ArrayLike:
    """n-th derivative in x: Σ_k (-1)^{k+n} (k-1)! S(n, k) (∂_x Ψ)^k; n = 2 gives -d(1-d) <= 0."""
    _check_order(n, 1, "n")
    w, x, scalar = _prepare(w, x)
    d = np.asarray(dpsi_dx(w, x), dtype=float)
    return _finish(_stirling_series(d, int(n), int(n)), scalar)


# --- derivatives of Φ, through Φ(w, x) = -Ψ(w, -x) ---

def dphi_dw(w: ArrayLike, x: ArrayLike) -> ArrayLike:
    """∂_w Φ(w, x) = (e^{x} - 1) e^{-Φ(w, x)}."""
    w, x, scalar = _prepare(w, x)
    return _finish(-np.asarray(dpsi_dw(w, -x)), scalar)


def dphi_dw_higher(w: ArrayLike, x: ArrayLike, k: int) -> ArrayLike:
    """k-th derivative in w: (-1)^{k-1} (k-1)! (∂_w Φ)^k."""
    _check_order(k, 1, "k")
    w, x, scalar = _prepare(w, x)
    return _finish(-np.asarray(dpsi_dw_higher(w, -x, k)), scalar)


def dphi_dx(w: ArrayLike, x: ArrayLike) -> ArrayLike:
    """∂_x Φ(w, x) = w e^{x} e^{-Φ(w, x)}: a tunable sigmoid, equal to w at x = 0."""
    w, x, scalar = _prepare(w, x)
    return _finish(np.asarray(dpsi_dx(w, -x)), scalar)


def dphi_dx_higher(w: ArrayLike, x: ArrayLike, n: int) -> ArrayLike:
    """n-th derivative in x: Σ_k (-1)^{k-1} (k-1)! S(n, k) (∂_x Φ)^k; n = 2 gives d(1-d) >= 0."""
    _check_order(n, 1, "n")
    w, x, scalar = _prepare(w, x)
    d = np.asarray(dphi_dx(w, x), dtype=float)
    return _finish(_stirling_series(d, int(n), 1), scalar)


# --- Ψ₊ derivatives (subgradient 0 at the kink) ---

def dpsi_plus_dw(w: ArrayLike, x: ArrayLike) -> ArrayLike:
    w, x, scalar = _prepare(w, x)
    out = np.where(x > 0.0, dpsi_dw(w, np.maximum(x, 0.0)), 0.0)
    return _finish(out, scalar)


def dpsi_plus_dx(w: ArrayLike, x: ArrayLike) -> ArrayLike:
    w, x, scalar = _prepare(w, x)
    out = np.where(x > 0.0, dpsi_dx(w, np.maximum(x, 0.0)), 0.0)
    return _finish(out, scalar)


@dataclass(frozen=True)
class ActivationFunctions:
    """Value and first partial derivatives of one activation kind."""
    kind: ActivationKind
    value: Callable[[ArrayLike, ArrayLike], ArrayLike]
    d_dw: Callable[[ArrayLike, ArrayLike], ArrayLike]
    d_dx: Callable[[ArrayLike, ArrayLike], ArrayLike]


_DISPATCH = {
    ActivationKind.TLOG_SIGMOID: ActivationFunctions(ActivationKind.TLOG_SIGMOID, psi, dpsi_dw, dpsi_dx),
    ActivationKind.TLOG_SIGMOID_PLUS: ActivationFunctions(
        ActivationKind.TLOG_SIGMOID_PLUS, psi_plus, dpsi_plus_dw, dpsi_plus_dx
    ),
    ActivationKind.TSOFT_AFFINE: ActivationFunctions(ActivationKind.TSOFT_AFFINE, phi, dphi_dw, dphi_dx),
}


def activation_functions(kind: Union[ActivationKind, str]) -> ActivationFunctions:
    """Returns the (value, d_dw, d_dx) triple for an activation kind."""
    if not isinstance(kind, ActivationKind):
        kind = ActivationKind.parse(str(kind))
    return _DISPATCH[kind]
