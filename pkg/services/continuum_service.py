"""
Continuum Service for TransNN Lab
Continuous-time network SIS limits, fixed-step RK4 and the Δ → 0 consistency harness
"""

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import partial
from pathlib import Path
from typing import Any, Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
from pydantic import BaseModel, ConfigDict, Field
from pydantic import ValidationError as PydanticValidationError

from config.app_config import AppConfig
from services.dynamics_service import simulate
from services.exceptions import DomainError, NumericalError, ValidationError
from services.network_service import NetworkKind, TransmissionNetwork, as_probability_state

logger = logging.getLogger(__name__)

VectorField = Callable[[np.ndarray], np.ndarray]


class SelfTransmission(str, Enum):
    EXPONENTIAL = "exponential"
    LINEAR = "linear"


class RateModel(str, Enum):
    SINGLE = "single"
    MULTI = "multi"


@dataclass(frozen=True)
class ContinuousRates:
    """
    c: cross-node transmission rates (off-diagonal) and self-healing rates (diagonal).
    kappa: per-particle rates of the multi-particle model, all ones when omitted.
    epsilon: split of the multi-particle scaling between counts and probabilities.
    """
    c: np.ndarray
    kappa: Optional[np.ndarray] = None
    epsilon: float = 0.5

    def __post_init__(self):
        c = np.array(self.c, dtype=float)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValidationError(f"c must be square, got shape {c.shape}", "c")
        _check_rates(c, "c")
        kappa = np.ones_like(c) if self.kappa is None else np.array(self.kappa, dtype=float)
        if kappa.shape != c.shape:
            raise ValidationError(f"kappa has shape {kappa.shape}, expected {c.shape}", "kappa")
        _check_rates(kappa, "kappa")
        if not (0.0 <= float(self.epsilon) <= 1.0):
            raise ValidationError(f"epsilon={self.epsilon} outside [0, 1]", "epsilon")
        c.setflags(write=False)
        kappa.setflags(write=False)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "kappa", kappa)
        object.__setattr__(self, "epsilon", float(self.epsilon))

    @property
    def n(self) -> int:
        return self.c.shape[0]

    @property
    def max_rate(self) -> float:
        return float(np.max(self.c * np.maximum(self.kappa, 1.0))) if self.c.size else 0.0


def _check_rates(m: np.ndarray, name: str) -> None:
    bad = np.argwhere(~np.isfinite(m) | (m < 0.0))
    if bad.size:
        i, j = (int(v) for v in bad[0])
        raise ValidationError(f"rate ({i},{j})={m[i, j]} must be finite and nonnegative", f"{name}[{i}][{j}]")


def _off_diagonal(m: np.ndarray) -> np.ndarray:
    out = np.array(m, dtype=float)
    np.fill_diagonal(out, 0.0)
    return out


def _check_adjacency(rates: ContinuousRates, adj: Any) -> np.ndarray:
    adj = np.asarray(adj, dtype=float)
    if adj.shape != rates.c.shape:
        raise ValidationError(f"adjacency has shape {adj.shape}, expected {rates.c.shape}", "adjacency")
    if np.any(adj < 0.0):
        raise ValidationError("adjacency entries must be nonnegative", "adjacency")
    return adj


# --- vector fields ---

def sis_rhs_single(rates: ContinuousRates, adj: Any, p: Any) -> np.ndarray:
    """dp_i/dt = (1 - p_i) Σ_{j≠i} a_ij c_ij p_j - c_ii p_i."""
    adj = _check_adjacency(rates, adj)
    p = np.asarray(p, dtype=float)
    transmission = _off_diagonal(adj * rates.c)
    return (1.0 - p) * (transmission @ p) - np.diag(rates.c) * p


def sis_rhs_multi(rates: ContinuousRates, p: Any) -> np.ndarray:
    """dp_h/dt = -c_hh κ_hh p_h + (1 - p_h) Σ_{q≠h} c_hq κ_hq p_q."""
    p = np.asarray(p, dtype=float)
    effective = rates.c * rates.kappa
    return (1.0 - p) * (_off_diagonal(effective) @ p) - np.diag(effective) * p


def transnn_rhs_info(rates: ContinuousRates, adj: Any, s: Any) -> np.ndarray:
    """Single-particle field in info coordinates: ds_i/dt = Σ_{j≠i} a_ij c_ij (1 - e^{-s_j}) - c_ii (e^{s_i} - 1)."""
    adj = _check_adjacency(rates, adj)
    s = np.asarray(s, dtype=float)
    p = -np.expm1(-s)
    return _off_diagonal(adj * rates.c) @ p - np.diag(rates.c) * np.expm1(s)


def disease_free_stable(rates: ContinuousRates, adj: Any) -> bool:
    """True when the linearisation at p = 0 (B_ij = a_ij c_ij, B_ii = -c_ii) is Hurwitz."""
    adj = _check_adjacency(rates, adj)
    b = _off_diagonal(adj * rates.c) - np.diag(np.diag(rates.c))
    return bool(np.max(scipy.linalg.eigvals(b).real) < 0.0)


# --- integration ---

@dataclass(frozen=True)
class ClampEvent:
    step: int
    max_violation: float


@dataclass(frozen=True)
class TimeSeries:
    times: np.ndarray
    states: np.ndarray
    clamp_events: List[ClampEvent] = field(default_factory=list)

    def save(self, path: Union[str, Path], fmt: str = "csv", column: str = "p") -> Path:
        """CSV columns t,node,p (or a JSON mirror)."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        if fmt == "json":
            payload = {"t": self.times.tolist(), column: self.states.tolist(),
                       "clamp_events": [e.__dict__ for e in self.clamp_events]}
            with open(path, 'w', encoding='utf-8') as file:
                json.dump(payload, file, indent=2)
        else:
            with open(path, 'w', encoding='utf-8', newline='') as file:
                writer = csv.writer(file)
                writer.writerow(["t", "node", column])
                for t, state in zip(self.times, self.states):
                    for node, value in enumerate(state):
                        writer.writerow([repr(float(t)), node, repr(float(value))])
        return path


def integrate(rhs: VectorField, p0: Any, t_end: float, dt: float,
              bounds: Optional[Tuple[float, float]] = (0.0, 1.0)) -> TimeSeries:
    """
    Classical fixed-step RK4 from t = 0 to t_end.

    The last step is shortened to land on t_end. After every step the state is
    clamped into `bounds` and each clamp is recorded.

    Args:
        rhs: vector field x -> dx/dt
        p0: initial state
        t_end: final time, >= 0
        dt: step size, > 0
        bounds: clamp interval, or None to integrate unclamped

    Returns:
        TimeSeries with one row per grid time, t = 0 included

    Raises:
        NumericalError: the field produced NaN; `where` carries the step index
    """
    if dt <= 0.0 or not math.isfinite(dt):
        raise DomainError(f"dt must be positive, got {dt}")
    if t_end < 0.0:
        raise DomainError(f"t_end must be nonnegative, got {t_end}")
    x = as_probability_state(p0) if bounds == (0.0, 1.0) else np.array(p0, dtype=float, ndmin=1)
    n_steps = max(0, math.ceil(t_end / dt - 1e-9))
    times = np.minimum(np.arange(n_steps + 1) * dt, t_end)
    states = np.empty((n_steps + 1, x.size))
    states[0] = x
    events: List[ClampEvent] = []
    for k in range(n_steps):
        h = times[k + 1] - times[k]
        k1 = rhs(x)
        k2 = rhs(x + 0.5 * h * k1)
        k3 = rhs(x + 0.5 * h * k2)
        k4 = rhs(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if np.isnan(x).any():
            raise NumericalError("NaN in vector field", {"step": k + 1})
        if bounds is not None:
            clamped = np.clip(x, bounds[0], bounds[1])
            violation = float(np.max(np.abs(clamped - x)))
            if violation > 0.0:
                events.append(ClampEvent(step=k + 1, max_violation=violation))
                logger.debug(f"Clamped state at step {k + 1} by {violation:.3e}")
                x = clamped
        states[k + 1] = x
    if events:
        worst = max(e.max_violation for e in events)
        logger.warning(f"RK4 clamped {len(events)} steps (largest violation {worst:.3e})")
    return TimeSeries(times=times, states=states, clamp_events=events)


# --- Δ → 0 consistency ---

@dataclass(frozen=True)
class ConsistencyRow:
    delta: float
    sup_error: float
    order_estimate: float


@dataclass(frozen=True)
class ConsistencyTable:
    rows: List[ConsistencyRow]

    @property
    def errors(self) -> np.ndarray:
        return np.array([r.sup_error for r in self.rows])

    @property
    def orders(self) -> np.ndarray:
        return np.array([r.order_estimate for r in self.rows[1:]])

    @property
    def fitted_constant(self) -> float:
        """Smallest C with e(Δ) <= C·Δ over the ladder."""
        return max((r.sup_error / r.delta for r in self.rows), default=0.0)

    def save(self, path: Union[str, Path], fmt: str = "csv") -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        if fmt == "json":
            with open(path, 'w', encoding='utf-8') as file:
                json.dump({"rows": [r.__dict__ for r in self.rows], "fitted_constant": self.fitted_constant},
                          file, indent=2)
        else:
            with open(path, 'w', encoding='utf-8', newline='') as file:
                writer = csv.writer(file)
                writer.writerow(["delta", "sup_error", "order_estimate"])
                for r in self.rows:
                    writer.writerow([repr(r.delta), repr(r.sup_error), repr(r.order_estimate)])
        return path


def _check_deltas(deltas: Sequence[float]) -> List[float]:
    deltas = [float(d) for d in deltas]
    if not deltas:
        raise DomainError("delta list is empty")
    if any(d <= 0.0 or not math.isfinite(d) for d in deltas):
        raise DomainError(f"deltas must be positive, got {deltas}")
    if any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise DomainError(f"deltas must be strictly decreasing, got {deltas}")
    return deltas


def _order(prev: ConsistencyRow, delta: float, error: float) -> float:
    if prev.sup_error <= 0.0 or error <= 0.0:
        return float("nan")
    return math.log(prev.sup_error / error) / math.log(prev.delta / delta)


def _ladder(build: Callable[[float], TransmissionNetwork], rhs: VectorField, p0: np.ndarray,
            deltas: List[float], t_end: float) -> ConsistencyTable:
    substeps = AppConfig.RK4_REFERENCE_SUBSTEPS
    rows: List[ConsistencyRow] = []
    for delta in deltas:
        net = build(delta)
        n_steps = math.ceil(t_end / delta - 1e-9)
        discrete = simulate(net, p0, n_steps, "prob").states
        reference = integrate(rhs, p0, n_steps * delta, delta / substeps).states[::substeps]
        error = float(np.max(np.abs(discrete - reference))) if discrete.size else 0.0
        order = _order(rows[-1], delta, error) if rows else float("nan")
        rows.append(ConsistencyRow(delta=delta, sup_error=error, order_estimate=order))
        logger.debug(f"delta={delta}: sup error {error:.3e}, order {order:.3f}")
    return ConsistencyTable(rows=rows)


def single_particle_network(rates: ContinuousRates, adj: Any, delta: float,
                            self_transmission: Union[SelfTransmission, str] = SelfTransmission.EXPONENTIAL
                            ) -> TransmissionNetwork:
    """Discrete network with w_ij = c_ij Δ off the diagonal and w_ii = e^{-c_ii Δ} (or 1 - c_ii Δ)."""
    adj = _check_adjacency(rates, adj)
    mode = SelfTransmission(self_transmission)
    cross = _off_diagonal(rates.c) * delta
    too_large = np.argwhere((cross > 1.0) & (adj != 0.0))
    if too_large.size:
        i, j = (int(v) for v in too_large[0])
        raise DomainError(f"delta {delta} too large: c[{i}][{j}]·delta = {cross[i, j]} > 1")
    healing = np.diag(rates.c) * delta
    if mode is SelfTransmission.LINEAR:
        bad = np.flatnonzero(healing > 1.0)
        if bad.size:
            i = int(bad[0])
            raise DomainError(f"delta {delta} too large: c[{i}][{i}]·delta = {healing[i]} > 1")
        self_w = 1.0 - healing
    else:
        self_w = np.exp(-healing)
    a = _off_diagonal(adj) + np.eye(rates.n)
    w = np.where(adj != 0.0, np.minimum(cross, 1.0), 0.0)
    np.fill_diagonal(w, self_w)
    return TransmissionNetwork(a=a, w=w, kind=NetworkKind.SINGLE)


def multi_particle_network(rates: ContinuousRates, delta: float,
                           epsilon: Optional[float] = None) -> TransmissionNetwork:
    """Cross links a = Δ^ε c, w = κ Δ^{1-ε}; self link a = 1, w = e^{-c_hh κ_hh Δ}."""
    eps = rates.epsilon if epsilon is None else float(epsilon)
    if not (0.0 <= eps < 1.0):
        raise DomainError(f"epsilon must lie in [0, 1) for the multi-particle limit, got {eps}")
    w_cross = _off_diagonal(rates.kappa) * delta ** (1.0 - eps)
    a_cross = _off_diagonal(rates.c) * delta ** eps
    too_large = np.argwhere((w_cross > 1.0) & (a_cross != 0.0))
    if too_large.size:
        i, j = (int(v) for v in too_large[0])
        raise DomainError(f"delta {delta} too large: kappa[{i}][{j}]·delta^(1-eps) = {w_cross[i, j]} > 1")
    a = a_cross + np.eye(rates.n)
    w = np.where(a_cross != 0.0, w_cross, 0.0)
    np.fill_diagonal(w, np.exp(-np.diag(rates.c) * np.diag(rates.kappa) * delta))
    return TransmissionNetwork(a=a, w=w, kind=NetworkKind.MULTI)


def discretization_consistency(rates: ContinuousRates, adj: Any, p0: Any, deltas: Sequence[float],
                               t_end: float = 1.0,
                               self_transmission: Union[SelfTransmission, str] = SelfTransmission.EXPONENTIAL
                               ) -> ConsistencyTable:
    """
    Sup-norm deviation of the discrete single-particle dynamics from the RK4
    solution of the SIS field at the discrete grid times, one row per Δ.

    Args:
        rates: continuous rates (diagonal = healing)
        adj: adjacency weights a_ij
        p0: initial probabilities
        deltas: strictly decreasing positive step sizes
        t_end: horizon T, reached by ceil(T/Δ) discrete steps

    Returns:
        ConsistencyTable with empirical orders log(e_prev/e)/log(Δ_prev/Δ)
    """
    adj = _check_adjacency(rates, adj)
    deltas = _check_deltas(deltas)
    p0 = as_probability_state(p0)
    for delta in deltas:
        single_particle_network(rates, adj, delta, self_transmission)
    rhs = partial(sis_rhs_single, rates, adj)
    table = _ladder(lambda d: single_particle_network(rates, adj, d, self_transmission), rhs, p0, deltas, t_end)
    logger.info(f"Consistency ladder over {len(deltas)} deltas, errors {table.errors.tolist()}")
    return table


def discretization_consistency_multi(rates: ContinuousRates, p0: Any, deltas: Sequence[float],
                                     t_end: float = 1.0, epsilon: Optional[float] = None) -> ConsistencyTable:
    """
    Multi-particle Δ-ladder against sis_rhs_multi; the limit does not depend on ε, the rate does (≈ 1 - ε).

    Args:
        rates: continuous rates with κ and ε
        p0: initial probabilities
        deltas: strictly decreasing positive step sizes
        t_end: horizon T
        epsilon: overrides rates.epsilon, in [0, 1)

    Returns:
        ConsistencyTable, one row per Δ
    """
    deltas = _check_deltas(deltas)
    p0 = as_probability_state(p0)
    for delta in deltas:
        multi_particle_network(rates, delta, epsilon)
    rhs = partial(sis_rhs_multi, rates)
    return _ladder(lambda d: multi_particle_network(rates, d, epsilon), rhs, p0, deltas, t_end)


# --- rates file ---

class RatesDocument(BaseModel):
    """JSON rates file: {"c", "kappa"?, "epsilon"?, "adjacency"?, "model"?}."""
    model_config = ConfigDict(extra="forbid")

    c: List[List[float]]
    kappa: Optional[List[List[float]]] = None
    epsilon: float = Field(default=0.5, ge=0.0, le=1.0)
    adjacency: Optional[List[List[float]]] = None
    model: RateModel = RateModel.SINGLE


def load_rates(path: Union[str, Path]) -> Tuple[ContinuousRates, np.ndarray, RateModel]:
    """
    Returns (rates, adjacency, model). A missing adjacency means every pair is linked.
    """
    path = Path(path)
    if not path.is_file():
        raise ValidationError("file not found", str(path))
    try:
        with open(path, 'r', encoding='utf-8') as file:
            document = RatesDocument.model_validate(json.load(file))
    except json.JSONDecodeError as e:
        raise ValidationError(f"invalid JSON: {e.msg}", f"{path.name}:line {e.lineno}") from e
    except PydanticValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first.get("loc", ()))
        raise ValidationError(first.get("msg", "invalid rates document"), location) from e
    rates = ContinuousRates(c=np.array(document.c, dtype=float),
                            kappa=None if document.kappa is None else np.array(document.kappa, dtype=float),
                            epsilon=document.epsilon)
    if document.adjacency is None:
        adj = np.ones((rates.n, rates.n))
    else:
        adj = _check_adjacency(rates, document.adjacency)
    logger.info(f"Loaded {document.model.value}-particle rates for {rates.n} nodes from {path}")
    return rates, adj, document.model
