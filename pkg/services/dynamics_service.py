"""
Dynamics Service for TransNN Lab
Discrete-time spread dynamics in the probability, info and log-healthy representations
"""

import csv
import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from config.app_config import AppConfig
from services.activation_service import ActivationKind, activation_functions, phi, psi
from services.exceptions import DomainError, ValidationError
from services.network_service import (
    NetworkKind,
    TransmissionNetwork,
    as_info_state,
    as_probability_state,
    info_to_prob,
    prob_to_info,
    prob_to_log_healthy,
)

logger = logging.getLogger(__name__)


class Representation(str, Enum):
    PROBABILITY = "prob"
    INFO = "info"
    LOG_HEALTHY = "log_healthy"


class LayerView(Protocol):
    """Anything exposing per-layer a, w, bias and an activation kind (e.g. a LayeredTransNN)."""
    a: Sequence[np.ndarray]
    w: Sequence[np.ndarray]
    bias: Sequence[np.ndarray]
    activation: ActivationKind


# --- link kernels ---

def _require_kind(net: TransmissionNetwork, *kinds: NetworkKind) -> None:
    if net.kind not in kinds:
        expected = "/".join(k.value for k in kinds)
        raise ValidationError(f"operation requires a {expected} network, got {net.kind.value}", "kind")


def _link_sum(net: TransmissionNetwork, terms: np.ndarray, rows: np.ndarray) -> np.ndarray:
    return np.bincount(rows, weights=terms, minlength=net.n)


def _link_weights(net: TransmissionNetwork) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    rows, cols, a, w = net.links
    if net.kind is NetworkKind.EFFECTIVE:
        w = np.ones_like(a)
    return rows, cols, a, w


def _info_kernel(net: TransmissionNetwork, s: np.ndarray) -> np.ndarray:
    # s'_i = Σ_j a_ij Ψ(w_ij, s_j); only links with a_ij != 0 are visited, so 0·(+inf) never occurs
    rows, cols, a, w = _link_weights(net)
    if rows.size == 0:
        return np.zeros(net.n)
    return _link_sum(net, a * psi(w, s[cols]), rows)


def _log_healthy_kernel(net: TransmissionNetwork, s_bar: np.ndarray) -> np.ndarray:
    rows, cols, a, w = _link_weights(net)
    if rows.size == 0:
        return np.zeros(net.n)
    return _link_sum(net, a * phi(w, s_bar[cols]), rows)


def _prob_kernel(net: TransmissionNetwork, p: np.ndarray) -> np.ndarray:
    """1 - Π_j (1 - w_ij p_j)^{a_ij}: direct products for small n, log space above LOG_SPACE_MIN_N."""
    rows, cols, a, w = _link_weights(net)
    if net.n <= AppConfig.LOG_SPACE_MIN_N:
        factors = np.ones((net.n, net.n))
        factors[rows, cols] = (1.0 - w * p[cols]) ** a
        out = 1.0 - np.prod(factors, axis=1)
    else:
        with np.errstate(divide='ignore'):
            logs = a * np.log1p(-w * p[cols])
        out = -np.expm1(_link_sum(net, logs, rows))
    return np.clip(out, 0.0, 1.0)


# --- effective transmission ---

def step_effective_info(net: TransmissionNetwork, s: Any) -> np.ndarray:
    """s' = A·s; +inf is absorbing."""
    _require_kind(net, NetworkKind.EFFECTIVE)
    s = as_info_state(s)
    return _info_kernel(net, s)


def step_effective_prob(net: TransmissionNetwork, p: Any) -> np.ndarray:
    """p'_i = 1 - Π_j (1 - p_j)^{a_ij}."""
    _require_kind(net, NetworkKind.EFFECTIVE)
    return _prob_kernel(net, as_probability_state(p))


def predict_effective_prob(net: TransmissionNetwork, p: Any, k: int) -> np.ndarray:
    """p(k) = 1 - exp(-A^k s(0)) by k applications of step_effective_info."""
    _require_kind(net, NetworkKind.EFFECTIVE)
    if k < 0:
        raise DomainError(f"step count must be nonnegative, got {k}")
    s = prob_to_info(p)
    for _ in range(int(k)):
        s = _info_kernel(net, s)
    return info_to_prob(s)


# --- single- and multi-particle transmission ---

def step_single_prob(net: TransmissionNetwork, p: Any) -> np.ndarray:
    """p'_i = 1 - Π_{j: a_ij != 0} (1 - w_ij p_j)."""
    _require_kind(net, NetworkKind.SINGLE)
    return _prob_kernel(net, as_probability_state(p))


def step_single_info(net: TransmissionNetwork, s: Any) -> np.ndarray:
    """s'_i = Σ_j a_ij Ψ(w_ij, s_j)."""
    _require_kind(net, NetworkKind.SINGLE)
    return _info_kernel(net, as_info_state(s))


def step_single_log_healthy(net: TransmissionNetwork, s_bar: Any) -> np.ndarray:
    """
    TSoftAffine form on s̄ = log(1 - p): s̄'_i = Σ_j a_ij Φ(w_ij, s̄_j).

    Works for every epidemic kind since the product form is the same.
    """
    _require_kind(net, NetworkKind.EFFECTIVE, NetworkKind.SINGLE, NetworkKind.MULTI)
    arr = np.array(s_bar, dtype=float, ndmin=1)
    if np.isnan(arr).any() or np.any(arr > 0.0):
        raise DomainError("log-healthy state must lie in [-inf, 0]")
    return _log_healthy_kernel(net, arr)


def step_multi_prob(net: TransmissionNetwork, p: Any) -> np.ndarray:
    """1 - p'_h = Π_q (1 - w_hq p_q)^{a_hq} with real a_hq >= 0."""
    _require_kind(net, NetworkKind.MULTI)
    return _prob_kernel(net, as_probability_state(p))


def step_multi_info(net: TransmissionNetwork, s: Any) -> np.ndarray:
    _require_kind(net, NetworkKind.MULTI)
    return _info_kernel(net, as_info_state(s))


# --- general layered form ---

def _layer_params(layers: LayerView, k: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not (0 <= k < len(layers.a)):
        raise DomainError(f"layer index {k} outside [0, {len(layers.a) - 1}]")
    a = np.asarray(layers.a[k], dtype=float)
    w = np.broadcast_to(np.asarray(layers.w[k], dtype=float), a.shape)
    bias = np.zeros(a.shape[0]) if layers.bias is None else np.asarray(layers.bias[k], dtype=float)
    return a, w, bias


def general_layer(a: np.ndarray, w: np.ndarray, bias: np.ndarray, activation: ActivationKind,
                  s: np.ndarray) -> np.ndarray:
    """s'_i = Σ_j a_ij F(w_ij, s_j) + b_i for a single vector or a batch of row vectors."""
    values = np.asarray(activation_functions(activation).value(w, s[..., None, :]))
    terms = np.where(a != 0.0, a * values, 0.0)
    return terms.sum(axis=-1) + bias


def step_general_info(layers: LayerView, s: Any, k: int) -> np.ndarray:
    """
    Layer-dependent step s_i(k+1) = Σ_j a_ij^k F(w_ij^k, s_j(k)) + b_i^k.

    s is any real vector; negative entries are legitimate intermediate values.
    """
    a, w, bias = _layer_params(layers, k)
    s = np.array(s, dtype=float, ndmin=1)
    if s.shape != (a.shape[1],):
        raise DomainError(f"state has length {s.shape[0]}, layer {k} expects {a.shape[1]}")
    if np.isnan(s).any():
        raise DomainError("state contains NaN")
    return general_layer(a, w, bias, layers.activation, s)


def step_general_prob(layers: LayerView, p: Any, k: int) -> np.ndarray:
    """
    Probability form of a Ψ layer: p'_i = 1 - e^{-b_i} Π_j (1 - w_ij p_j)^{a_ij}.

    Only defined for a >= 0 and b >= 0; use step_general_info otherwise.
    """
    a, w, bias = _layer_params(layers, k)
    if ActivationKind(layers.activation) is not ActivationKind.TLOG_SIGMOID:
        raise DomainError("probability form exists only for the TLogSigmoid activation")
    if np.any(a < 0.0) or np.any(bias < 0.0):
        raise DomainError("probability form requires nonnegative a and bias")
    p = as_probability_state(p)
    with np.errstate(divide='ignore'):
        logs = np.where(a != 0.0, a * np.log1p(-w * p[None, :]), 0.0)
    return np.clip(-np.expm1(logs.sum(axis=1) - bias), 0.0, 1.0)


# --- trajectories ---

@dataclass(frozen=True)
class Trajectory:
    """States of one run, shape (horizon + 1, n), in a single representation."""
    states: np.ndarray
    representation: Representation

    @property
    def horizon(self) -> int:
        return self.states.shape[0] - 1

    @property
    def n(self) -> int:
        return self.states.shape[1]

    def probabilities(self) -> np.ndarray:
        if self.representation is Representation.PROBABILITY:
            return self.states
        if self.representation is Representation.INFO:
            return -np.expm1(-self.states)
        return -np.expm1(self.states)

    def info(self) -> np.ndarray:
        if self.representation is Representation.INFO:
            return self.states
        if self.representation is Representation.LOG_HEALTHY:
            return -self.states
        with np.errstate(divide='ignore'):
            return -np.log1p(-self.states)

    def rows(self) -> Iterator[Tuple[int, int, float, float]]:
        """Yields (step, node, p, s) in step-major order."""
        p, s = self.probabilities(), self.info()
        for step in range(self.states.shape[0]):
            for node in range(self.n):
                yield step, node, float(p[step, node]), float(s[step, node])

    def to_dict(self) -> Dict[str, Any]:
        p, s = self.probabilities(), self.info()
        return {
            "representation": self.representation.value,
            "horizon": self.horizon,
            "n": self.n,
            "steps": [{"step": k, "p": p[k].tolist(), "s": s[k].tolist()} for k in range(self.horizon + 1)],
        }

    def save(self, path: Union[str, Path], fmt: str = "csv") -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        if fmt == "json":
            with open(path, 'w', encoding='utf-8') as file:
                json.dump(self.to_dict(), file, indent=2)
        else:
            with open(path, 'w', encoding='utf-8', newline='') as file:
                writer = csv.writer(file)
                writer.writerow(["step", "node", "p", "s"])
                for step, node, p, s in self.rows():
                    writer.writerow([step, node, repr(p), repr(s)])
        logger.info(f"Trajectory with {self.horizon + 1} states written to {path}")
        return path


def _stepper(net: TransmissionNetwork, representation: Representation) -> Callable[[np.ndarray], np.ndarray]:
    if not net.kind.is_epidemic:
        raise ValidationError("general networks are simulated layer by layer through step_general_info", "kind")
    if representation is Representation.PROBABILITY:
        return lambda state: _prob_kernel(net, state)
    if representation is Representation.INFO:
        return lambda state: _info_kernel(net, state)
    return lambda state: _log_healthy_kernel(net, state)


def _initial_state(net: TransmissionNetwork, initial: Any, representation: Representation,
                   initial_representation: Optional[Representation]) -> np.ndarray:
    source = representation if initial_representation is None else Representation(initial_representation)
    if source is Representation.PROBABILITY:
        p = as_probability_state(initial)
    elif source is Representation.INFO:
        p = info_to_prob(initial)
    else:
        arr = np.array(initial, dtype=float, ndmin=1)
        if np.isnan(arr).any() or np.any(arr > 0.0):
            raise DomainError("log-healthy state must lie in [-inf, 0]")
        p = -np.expm1(arr)
    if p.shape != (net.n,):
        raise DomainError(f"initial state has length {p.shape[0]}, network has {net.n} nodes")
    if source is representation:
        return np.array(initial, dtype=float, ndmin=1) if source is not Representation.PROBABILITY else p
    if representation is Representation.PROBABILITY:
        return p
    if representation is Representation.INFO:
        return prob_to_info(p)
    return prob_to_log_healthy(p)


def simulate(net: TransmissionNetwork, initial: Any, horizon: int,
             representation: Union[Representation, str] = Representation.PROBABILITY,
             initial_representation: Optional[Union[Representation, str]] = None) -> Trajectory:
    """
    Iterate the network's step operation and record every state.

    Args:
        net: epidemic-kind network
        initial: starting state, read in `initial_representation` (defaults to `representation`)
        horizon: number of steps; at most STREAMING_HORIZON_LIMIT
        representation: state space the recursion runs in

    Returns:
        Trajectory of length horizon + 1
    """
    representation = Representation(representation)
    if horizon < 0:
        raise DomainError(f"horizon must be nonnegative, got {horizon}")
    if horizon > AppConfig.STREAMING_HORIZON_LIMIT:
        raise DomainError(
            f"horizon {horizon} exceeds {AppConfig.STREAMING_HORIZON_LIMIT}; use simulate_streaming"
        )
    step = _stepper(net, representation)
    states = np.empty((horizon + 1, net.n))
    states[0] = _initial_state(net, initial, representation, initial_representation)
    for k in range(horizon):
        states[k + 1] = step(states[k])
    logger.debug(f"Simulated {horizon} steps of a {net.kind.value} network in {representation.value} space")
    states.setflags(write=False)
    return Trajectory(states=states, representation=representation)


def simulate_streaming(net: TransmissionNetwork, initial: Any, horizon: int,
                       callback: Callable[[int, np.ndarray], None],
                       representation: Union[Representation, str] = Representation.PROBABILITY,
                       initial_representation: Optional[Union[Representation, str]] = None) -> np.ndarray:
    """Unbounded-horizon variant: hands each state to `callback(step, state)` and keeps only the latest."""
    representation = Representation(representation)
    if horizon < 0:
        raise DomainError(f"horizon must be nonnegative, got {horizon}")
    step = _stepper(net, representation)
    state = _initial_state(net, initial, representation, initial_representation)
    callback(0, state)
    for k in range(1, horizon + 1):
        state = step(state)
        callback(k, state)
    return state
