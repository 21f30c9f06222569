"""
Network Service for TransNN Lab
Transmission networks, nodal state conversions, modulation and network file I/O
"""

import csv
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import scipy.sparse
from pydantic import BaseModel, ConfigDict, Field
from pydantic import ValidationError as PydanticValidationError

from config.app_config import AppConfig
from services.exceptions import DomainError, ValidationError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
Matrix = Union[np.ndarray, scipy.sparse.sparray]

# Nodal states are plain float arrays; the validators below enforce their ranges.
ProbabilityState = np.ndarray
InfoState = np.ndarray


class NetworkKind(str, Enum):
    EFFECTIVE = "effective"
    SINGLE = "single"
    MULTI = "multi"
    GENERAL = "general"

    @property
    def is_epidemic(self) -> bool:
        return self is not NetworkKind.GENERAL


class ModulationMode(str, Enum):
    NONE = "none"
    GLOBAL = "global"
    DUAL_NODAL = "dual_nodal"


# --- state conversions ---

def as_probability_state(p: Any) -> ProbabilityState:
    """Validates a probability vector; values within PROBABILITY_SNAP_EPS of 1 snap to 1."""
    arr = np.array(p, dtype=float, ndmin=1)
    if arr.ndim != 1:
        raise DomainError(f"probability state must be a vector, got shape {arr.shape}")
    if np.isnan(arr).any():
        raise DomainError("probability state contains NaN")
    bad = np.flatnonzero((arr < 0.0) | (arr > 1.0))
    if bad.size:
        i = int(bad[0])
        raise DomainError(f"p[{i}]={arr[i]} outside [0, 1]")
    arr[arr >= 1.0 - AppConfig.PROBABILITY_SNAP_EPS] = 1.0
    return arr


def as_info_state(s: Any) -> InfoState:
    """Validates a negative-log-negative state: entries in [0, +inf]."""
    arr = np.array(s, dtype=float, ndmin=1)
    if arr.ndim != 1:
        raise DomainError(f"info state must be a vector, got shape {arr.shape}")
    if np.isnan(arr).any():
        raise DomainError("info state contains NaN")
    bad = np.flatnonzero(arr < 0.0)
    if bad.size:
        i = int(bad[0])
        raise DomainError(f"s[{i}]={arr[i]} is negative")
    return arr


def prob_to_info(p: Any) -> InfoState:
    """s = -log(1 - p); p = 1 maps to +inf."""
    arr = as_probability_state(p)
    with np.errstate(divide='ignore'):
        return -np.log1p(-arr)


def info_to_prob(s: Any) -> ProbabilityState:
    """p = 1 - e^{-s}; exact inverse of prob_to_info."""
    arr = as_info_state(s)
    return -np.expm1(-arr)


def prob_to_log_healthy(p: Any) -> np.ndarray:
    """s̄ = log(1 - p) in [-inf, 0], the state of the TSoftAffine representation."""
    arr = as_probability_state(p)
    with np.errstate(divide='ignore'):
        return np.log1p(-arr)


def log_healthy_to_prob(s_bar: Any) -> ProbabilityState:
    arr = np.array(s_bar, dtype=float, ndmin=1)
    if np.isnan(arr).any() or np.any(arr > 0.0):
        raise DomainError("log-healthy state must lie in [-inf, 0]")
    return -np.expm1(arr)


# --- matrix storage ---

def _entries(m: Matrix) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(rows, cols, values) of the stored entries in row-major order; dense arrays list their nonzeros."""
    if scipy.sparse.issparse(m):
        m = scipy.sparse.csr_array(m)
        rows = np.repeat(np.arange(m.shape[0], dtype=np.intp), np.diff(m.indptr))
        return rows, m.indices.astype(np.intp), m.data
    rows, cols = np.nonzero(m)
    return rows, cols, m[rows, cols]


def _on_pattern(pattern: scipy.sparse.csr_array, values: np.ndarray) -> scipy.sparse.csr_array:
    # same indices and indptr as `pattern`, so stored entries line up one to one
    return scipy.sparse.csr_array((values, pattern.indices.copy(), pattern.indptr.copy()), shape=pattern.shape)


def _frozen(arr: Matrix) -> Matrix:
    if scipy.sparse.issparse(arr):
        m = scipy.sparse.csr_array(arr, dtype=float, copy=True)
        m.sum_duplicates()
        for part in (m.data, m.indices, m.indptr):
            part.setflags(write=False)
        return m
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


def _dense(m: Matrix) -> np.ndarray:
    return m.toarray() if scipy.sparse.issparse(m) else np.asarray(m)


def _values_at(m: Matrix, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    if not scipy.sparse.issparse(m):
        return np.asarray(m)[rows, cols]
    if rows.size == 0:
        return np.zeros(0)
    return np.asarray(scipy.sparse.csr_matrix(m)[rows, cols], dtype=float).ravel()


def _same_pattern(m: Matrix, pattern: scipy.sparse.csr_array) -> bool:
    return scipy.sparse.issparse(m) and m.format == "csr" and np.array_equal(m.indptr, pattern.indptr) \
        and np.array_equal(m.indices, pattern.indices)


def _check_unit_matrix(w: Matrix, name: str) -> None:
    if scipy.sparse.issparse(w):
        rows, cols, values = _entries(w)
        bad = np.flatnonzero(np.isnan(values) | (values < 0.0) | (values > 1.0))
        if bad.size:
            k = int(bad[0])
            i, j = int(rows[k]), int(cols[k])
            raise ValidationError(f"entry ({i},{j})={values[k]} outside [0, 1]", f"{name}[{i}][{j}]")
        return
    bad = np.argwhere(np.isnan(w) | (w < 0.0) | (w > 1.0))
    if bad.size:
        i, j = (int(v) for v in bad[0])
        raise ValidationError(f"entry ({i},{j})={w[i, j]} outside [0, 1]", f"{name}[{i}][{j}]")


# --- modulation ---

@dataclass(frozen=True)
class Modulation:
    """Multiplicative rescaling of the base link probabilities c."""
    base: Matrix
    mode: ModulationMode = ModulationMode.NONE
    gamma: Optional[float] = None
    alpha: Optional[np.ndarray] = None
    beta: Optional[np.ndarray] = None

    def __post_init__(self):
        base = self.base if scipy.sparse.issparse(self.base) else np.array(self.base, dtype=float)
        if base.ndim != 2 or base.shape[0] != base.shape[1]:
            raise ValidationError(f"modulation base must be square, got shape {base.shape}", "modulation.base")
        _check_unit_matrix(base, "modulation.base")
        object.__setattr__(self, "base", _frozen(base))
        n = base.shape[0]
        if self.mode is ModulationMode.GLOBAL:
            if self.gamma is None or not (0.0 <= float(self.gamma) <= 1.0):
                raise ValidationError(f"gamma={self.gamma} outside [0, 1]", "modulation.gamma")
            object.__setattr__(self, "gamma", float(self.gamma))
        elif self.mode is ModulationMode.DUAL_NODAL:
            for name in ("alpha", "beta"):
                vec = getattr(self, name)
                if vec is None:
                    raise ValidationError(f"{name} is required for dual nodal modulation", f"modulation.{name}")
                vec = np.array(vec, dtype=float)
                if vec.shape != (n,):
                    raise ValidationError(f"{name} must have length {n}", f"modulation.{name}")
                bad = np.flatnonzero(np.isnan(vec) | (vec < 0.0) | (vec > 1.0))
                if bad.size:
                    raise ValidationError(f"value {vec[bad[0]]} outside [0, 1]", f"modulation.{name}[{bad[0]}]")
                object.__setattr__(self, name, _frozen(vec))

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"mode": self.mode.value}
        if self.mode is ModulationMode.GLOBAL:
            out["gamma"] = self.gamma
        elif self.mode is ModulationMode.DUAL_NODAL:
            out["alpha"] = self.alpha.tolist()
            out["beta"] = self.beta.tolist()
        return out


def apply_modulation(m: Modulation) -> Matrix:
    """None -> c; Global -> γ·c; DualNodal -> diag(α)·c·diag(β). Sparse bases keep their pattern."""
    if scipy.sparse.issparse(m.base):
        rows, cols, values = _entries(m.base)
        if m.mode is ModulationMode.GLOBAL:
            values = m.gamma * values
        elif m.mode is ModulationMode.DUAL_NODAL:
            values = m.alpha[rows] * values * m.beta[cols]
        return _on_pattern(m.base, np.array(values, dtype=float))
    if m.mode is ModulationMode.GLOBAL:
        return m.gamma * m.base
    if m.mode is ModulationMode.DUAL_NODAL:
        return m.alpha[:, None] * m.base * m.beta[None, :]
    return m.base.copy()


# --- the network value type ---

@dataclass(frozen=True)
class TransmissionNetwork:
    """
    Immutable transmission network.

    a holds adjacency indicators (effective), link indicators (single),
    particle counts (multi) or real weights (general); w holds the base link
    probabilities, used only where a != 0. When a modulation is attached the
    dynamics read `effective_w` instead of `w`.

    Networks above DENSE_STORAGE_MAX_N nodes or at most SPARSE_DENSITY_THRESHOLD
    dense are stored as CSR arrays. In that case w is kept on the links of a
    only, and its stored entries line up with those of a.
    """
    a: Matrix
    w: Optional[Matrix]
    kind: NetworkKind = NetworkKind.SINGLE
    modulation: Optional[Modulation] = field(default=None, compare=False)

    def __post_init__(self):
        kind = NetworkKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if scipy.sparse.issparse(self.a):
            a = scipy.sparse.csr_array(self.a, dtype=float, copy=True)
            a.sum_duplicates()
            a.eliminate_zeros()
        else:
            a = np.array(self.a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValidationError(f"a must be square, got shape {a.shape}", "a")
        n = a.shape[0]
        w = self.w
        if w is not None:
            w = scipy.sparse.csr_array(w, dtype=float, copy=True) if scipy.sparse.issparse(w) \
                else np.array(w, dtype=float)
            if w.shape != a.shape:
                raise ValidationError(f"w has shape {w.shape}, expected {a.shape}", "w")
            _check_unit_matrix(w, "w")

        rows, cols, values = _entries(a)

        def reject(mask: np.ndarray, message: str) -> None:
            bad = np.flatnonzero(mask)
            if bad.size:
                k = int(bad[0])
                i, j = int(rows[k]), int(cols[k])
                raise ValidationError(message.format(i=i, j=j, v=values[k]), f"a[{i}][{j}]")

        reject(~np.isfinite(values), "entry ({i},{j}) is not finite")
        if kind.is_epidemic:
            diagonal = a.diagonal()
            missing = np.flatnonzero(diagonal <= 0.0)
            if missing.size:
                i = int(missing[0])
                raise ValidationError(f"node {i} has no self-loop (a[{i}][{i}]={diagonal[i]})", f"a[{i}][{i}]")
        if kind is NetworkKind.EFFECTIVE:
            reject(values != 1.0, "effective adjacency entry ({i},{j})={v} not in {{0, 1}}")
        if kind in (NetworkKind.SINGLE, NetworkKind.MULTI):
            reject(values < 0.0, "negative count ({i},{j})={v}")
        if self.modulation is not None and self.modulation.base.shape != a.shape:
            raise ValidationError("modulation base shape does not match the network", "modulation")

        sparse = n > AppConfig.DENSE_STORAGE_MAX_N \
            or values.size / max(n * n, 1) <= AppConfig.SPARSE_DENSITY_THRESHOLD
        if sparse:
            a = scipy.sparse.csr_array(a)
            w_values = np.ones(values.size) if w is None else _values_at(w, rows, cols)
            w = _on_pattern(a, np.array(w_values, dtype=float))
        else:
            a = _dense(a)
            w = np.ones((n, n)) if w is None else _dense(w)
        object.__setattr__(self, "a", _frozen(a))
        object.__setattr__(self, "w", _frozen(w))

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @cached_property
    def effective_w(self) -> Matrix:
        if self.modulation is None:
            return self.w
        return _frozen(apply_modulation(self.modulation))

    @cached_property
    def counts_exact(self) -> bool:
        """True when every count is integral (no fractional particle counts)."""
        values = _entries(self.a)[2]
        return bool(np.all(values == np.round(values)))

    @cached_property
    def density(self) -> float:
        nnz = self.a.nnz if scipy.sparse.issparse(self.a) else np.count_nonzero(self.a)
        return float(nnz) / float(max(self.n * self.n, 1))

    @property
    def storage(self) -> str:
        return "sparse" if scipy.sparse.issparse(self.a) else "dense"

    @cached_property
    def links(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(rows, cols, a, w) over the links with a != 0, in row-major order."""
        rows, cols, a_values = _entries(self.a)
        w_eff = self.effective_w
        if _same_pattern(w_eff, self.a):
            w_values = np.asarray(w_eff.data)
        else:
            w_values = _values_at(w_eff, rows, cols)
        return rows, cols, a_values, w_values

    def with_modulation(self, mode: ModulationMode, gamma: Optional[float] = None,
                        alpha: Optional[np.ndarray] = None, beta: Optional[np.ndarray] = None
                        ) -> "TransmissionNetwork":
        modulation = Modulation(base=self.w, mode=ModulationMode(mode), gamma=gamma, alpha=alpha, beta=beta)
        return TransmissionNetwork(a=self.a, w=self.w, kind=self.kind, modulation=modulation)

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "n": self.n,
            "kind": self.kind.value,
            "a": _dense(self.a).tolist(),
            "w": _dense(self.w).tolist(),
        }
        if self.modulation is not None:
            out["modulation"] = self.modulation.to_dict()
        return out


# --- file schema ---

class ModulationDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mode: ModulationMode = ModulationMode.NONE
    gamma: Optional[float] = None
    alpha: Optional[List[float]] = None
    beta: Optional[List[float]] = None


class NetworkDocument(BaseModel):
    """JSON network file: {"n", "kind", "a", "w", "modulation"?}."""
    model_config = ConfigDict(extra="forbid")

    n: int = Field(ge=1)
    kind: NetworkKind = NetworkKind.SINGLE
    a: List[List[float]]
    w: Optional[List[List[float]]] = None
    modulation: Optional[ModulationDocument] = None

    def build(self) -> TransmissionNetwork:
        for name in ("a", "w"):
            rows = getattr(self, name)
            if rows is None:
                continue
            if len(rows) != self.n:
                raise ValidationError(f"expected {self.n} rows, got {len(rows)} (non-square)", name)
            for i, row in enumerate(rows):
                if len(row) != self.n:
                    raise ValidationError(f"expected {self.n} columns, got {len(row)} (non-square)", f"{name}[{i}]")
        net = TransmissionNetwork(a=np.array(self.a), w=None if self.w is None else np.array(self.w),
                                  kind=self.kind)
        if self.modulation is not None and self.modulation.mode is not ModulationMode.NONE:
            net = net.with_modulation(self.modulation.mode, gamma=self.modulation.gamma,
                                      alpha=self.modulation.alpha, beta=self.modulation.beta)
        return net


def _pydantic_location(e: PydanticValidationError) -> str:
    first = e.errors()[0]
    parts = []
    for loc in first.get("loc", ()):
        parts.append(f"[{loc}]" if isinstance(loc, int) else (f".{loc}" if parts else str(loc)))
    return "".join(parts)


def network_from_dict(data: Dict[str, Any]) -> TransmissionNetwork:
    """
    Validate a parsed JSON network document.

    Args:
        data: mapping with n, kind, a and optional w and modulation

    Returns:
        The validated TransmissionNetwork

    Raises:
        ValidationError: with the offending field path as `location`
    """
    try:
        document = NetworkDocument.model_validate(data)
    except PydanticValidationError as e:
        raise ValidationError(e.errors()[0].get("msg", "invalid network document"), _pydantic_location(e)) from e
    return document.build()


def _load_json_network(path: Path) -> TransmissionNetwork:
    try:
        with open(path, 'r', encoding='utf-8') as file:
            data = json.load(file)
    except json.JSONDecodeError as e:
        raise ValidationError(f"invalid JSON: {e.msg}", f"{path.name}:line {e.lineno}") from e
    return network_from_dict(data)


def _load_csv_network(path: Path, kind: NetworkKind) -> TransmissionNetwork:
    """
    Edge list with header src,dst,a,w; src/dst are 0-based node ids, row i<-src j.

    Rows with a = 0 carry a level on an absent link. A repeated (src, dst) pair
    keeps its last row.
    """
    edges: Dict[Tuple[int, int], Tuple[float, float]] = {}
    with open(path, 'r', encoding='utf-8', newline='') as file:
        reader = csv.DictReader(file)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames[:4]] != ["src", "dst", "a", "w"]:
            raise ValidationError("header must be src,dst,a,w", f"{path.name}:line 1")
        for line_no, row in enumerate(reader, start=2):
            try:
                src, dst = int(row["src"]), int(row["dst"])
                a_val, w_val = float(row["a"]), float(row["w"])
            except (TypeError, ValueError) as e:
                raise ValidationError(f"malformed row: {e}", f"{path.name}:line {line_no}") from e
            if src < 0 or dst < 0:
                raise ValidationError("node ids must be nonnegative", f"{path.name}:line {line_no}")
            if not (0.0 <= w_val <= 1.0):
                raise ValidationError(f"w={w_val} outside [0, 1]", f"{path.name}:line {line_no}")
            # an edge src -> dst means dst can be infected by src: entry (dst, src)
            edges[(dst, src)] = (a_val, w_val)
    if not edges:
        raise ValidationError("edge list is empty", path.name)
    index = np.array(list(edges), dtype=np.intp)
    values = np.array(list(edges.values()), dtype=float)
    n = int(index.max()) + 1
    coords = (index[:, 0], index[:, 1])
    a = scipy.sparse.csr_array((values[:, 0], coords), shape=(n, n))
    w = scipy.sparse.csr_array((values[:, 1], coords), shape=(n, n))
    return TransmissionNetwork(a=a, w=w, kind=kind)


def load_network(path: PathLike, kind: Union[NetworkKind, str] = NetworkKind.SINGLE) -> TransmissionNetwork:
    """
    Load a network from a JSON document or a CSV edge list.

    Args:
        path: .json or .csv file
        kind: network kind for CSV files (JSON files carry their own)

    Returns:
        The validated TransmissionNetwork

    Raises:
        ValidationError: with a field path or line number as `location`
    """
    path = Path(path)
    if not path.is_file():
        raise ValidationError("file not found", str(path))
    if path.suffix.lower() == ".csv":
        net = _load_csv_network(path, NetworkKind(kind))
    else:
        net = _load_json_network(path)
    logger.info(f"Loaded {net.kind.value} network with {net.n} nodes from {path} ({net.storage} storage)")
    return net


def save_network(net: TransmissionNetwork, path: PathLike) -> None:
    """
    Writes JSON (default) or a CSV edge list, depending on the suffix.

    The CSV form lists every link plus, for dense networks, each nonzero level
    on an absent link as a row with a = 0, so reloading reproduces `w` exactly.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() == ".csv":
        if net.modulation is not None:
            raise ValidationError("CSV edge lists cannot carry a modulation; use JSON", str(path))
        if net.storage == "sparse":
            rows, cols, a_values, w_values = net.links
        else:
            rows, cols = np.nonzero((net.a != 0.0) | (net.w != 0.0))
            a_values, w_values = net.a[rows, cols], net.w[rows, cols]
        with open(path, 'w', encoding='utf-8', newline='') as file:
            writer = csv.writer(file)
            writer.writerow(["src", "dst", "a", "w"])
            for i, j, a_val, w_val in zip(rows, cols, a_values, w_values):
                writer.writerow([int(j), int(i), repr(float(a_val)), repr(float(w_val))])
    else:
        with open(path, 'w', encoding='utf-8') as file:
            json.dump(net.to_dict(), file, indent=2)
    logger.info(f"Saved network with {net.n} nodes to {path}")
