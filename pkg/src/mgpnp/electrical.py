"""Averaged electrical models of converter units and their resistive network.

Two unit kinds are supported:

* ``cdgu``: a grid-feeding current-controlled unit, state ``[V, I^C]``.
* ``mg``: a microgrid made of one grid-feeding and one grid-forming converter
  on a shared bus, state ``[V, I^C, I^V]``.

Lines are purely resistive (quasi-stationary approximation); their inductance
is carried for bookkeeping only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import ParameterError, TopologyError

UnitId = str

KIND_CDGU = "cdgu"
KIND_MG = "mg"


def _require_positive(**values: float | None) -> None:
    for name, value in values.items():
        if value is None or not math.isfinite(value) or value <= 0:
            raise ParameterError(f"{name} must be a finite positive number, got {value!r}")


@dataclass(frozen=True)
class CdguParams:
    """Electrical constants of a current-controlled unit.

    ``R_L=None`` means the bus carries no resistive load.
    """

    C_t: float
    L_tC: float
    R_tC: float
    R_L: float | None = None
    I_L: float = 0.0
    I_cap: float = 1.0

    def __post_init__(self) -> None:
        _require_positive(C_t=self.C_t, L_tC=self.L_tC, R_tC=self.R_tC, I_cap=self.I_cap)
        if self.R_L is not None:
            _require_positive(R_L=self.R_L)
        if not math.isfinite(self.I_L):
            raise ParameterError(f"I_L must be finite, got {self.I_L!r}")

    @property
    def has_load(self) -> bool:
        return self.R_L is not None


@dataclass(frozen=True)
class MgParams:
    """A grid-feeding unit plus the grid-forming branch sharing its bus."""

    cdgu: CdguParams
    L_tV: float
    R_tV: float

    def __post_init__(self) -> None:
        _require_positive(L_tV=self.L_tV, R_tV=self.R_tV)

    @property
    def C_t(self) -> float:
        return self.cdgu.C_t

    @property
    def R_L(self) -> float | None:
        return self.cdgu.R_L

    @property
    def I_L(self) -> float:
        return self.cdgu.I_L

    @property
    def I_cap(self) -> float:
        return self.cdgu.I_cap

    @property
    def has_load(self) -> bool:
        return self.cdgu.has_load


UnitParams = Union[CdguParams, MgParams]


def unit_kind(params: UnitParams) -> str:
    return KIND_MG if isinstance(params, MgParams) else KIND_CDGU


def bus_params(params: UnitParams) -> CdguParams:
    """Bus-side constants (capacitance, load, capacity) of either unit kind."""
    return params.cdgu if isinstance(params, MgParams) else params


@dataclass(frozen=True)
class Line:
    a: UnitId
    b: UnitId
    R: float
    L: float = 0.0  # stored only; lines are resistive in the dynamics

    def __post_init__(self) -> None:
        if self.a == self.b:
            raise TopologyError(f"line endpoints must be distinct, got {self.a!r} twice")
        _require_positive(R=self.R)
        if self.L < 0:
            raise ParameterError(f"line inductance must be non-negative, got {self.L!r}")

    @property
    def key(self) -> frozenset:
        return frozenset((self.a, self.b))

    def other(self, unit: UnitId) -> UnitId:
        if unit == self.a:
            return self.b
        if unit == self.b:
            return self.a
        raise KeyError(unit)


@dataclass(frozen=True)
class ElectricalGraph:
    """Units indexed by id plus the resistive lines joining them.

    Unit order follows insertion order of ``units`` and fixes the ordering of
    every assembled global matrix.
    """

    units: Mapping[UnitId, UnitParams]
    lines: tuple[Line, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "units", dict(self.units))
        object.__setattr__(self, "lines", tuple(self.lines))
        seen = set()
        for line in self.lines:
            for end in (line.a, line.b):
                if end not in self.units:
                    raise TopologyError(f"line {line.a}-{line.b} references unknown unit {end!r}")
            if line.key in seen:
                raise TopologyError(f"duplicate line between {line.a!r} and {line.b!r}")
            seen.add(line.key)

    @property
    def ids(self) -> list[UnitId]:
        return list(self.units)

    def kind(self) -> str:
        kinds = {unit_kind(p) for p in self.units.values()}
        if len(kinds) > 1:
            raise TopologyError("cannot mix cdgu and mg units in one cluster")
        return kinds.pop() if kinds else KIND_MG

    def neighbor_lines(self, unit: UnitId) -> list[Line]:
        return [ln for ln in self.lines if unit in (ln.a, ln.b)]

    def neighbors(self, unit: UnitId) -> list[UnitId]:
        return [ln.other(unit) for ln in self.neighbor_lines(unit)]

    def with_unit(self, unit: UnitId, params: UnitParams, lines: Iterable[Line] = ()) -> "ElectricalGraph":
        if unit in self.units:
            raise TopologyError(f"duplicate unit id {unit!r}")
        units = dict(self.units)
        units[unit] = params
        return ElectricalGraph(units, self.lines + tuple(lines))

    def with_lines(self, lines: Iterable[Line]) -> "ElectricalGraph":
        return ElectricalGraph(self.units, self.lines + tuple(lines))

    def without_lines_of(self, unit: UnitId) -> "ElectricalGraph":
        return ElectricalGraph(self.units, tuple(ln for ln in self.lines if unit not in (ln.a, ln.b)))

    def without_unit(self, unit: UnitId) -> "ElectricalGraph":
        if unit not in self.units:
            raise TopologyError(f"unknown unit {unit!r}")
        units = {k: v for k, v in self.units.items() if k != unit}
        return ElectricalGraph(units, tuple(ln for ln in self.lines if unit not in (ln.a, ln.b)))

    def subgraph(self, ids: Iterable[UnitId]) -> "ElectricalGraph":
        keep = set(ids)
        units = {k: v for k, v in self.units.items() if k in keep}
        return ElectricalGraph(units, tuple(ln for ln in self.lines if ln.a in keep and ln.b in keep))


@dataclass
class LocalBlocks:
    """Per-unit matrices: dynamics, load, one coupling block per neighbor, B, M, H."""

    kind: str
    A_ii: np.ndarray
    A_load: np.ndarray
    A_ij: list[np.ndarray]
    B: np.ndarray
    M: np.ndarray
    H: np.ndarray
    augmented: bool = False


@dataclass
class StateSpace:
    A: np.ndarray
    B: np.ndarray
    M: np.ndarray
    H: np.ndarray
    state_labels: list[str] = field(default_factory=list)
    input_labels: list[str] = field(default_factory=list)
    disturbance_labels: list[str] = field(default_factory=list)
    output_labels: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != n or self.M.shape[0] != n:
            raise ValueError("B and M must share the row count of A")
        if self.H.shape[1] != n:
            raise ValueError("H column count must equal the state dimension")


def _coupling_block(C_t: float, R_ij: float, n: int) -> np.ndarray:
    blk = np.zeros((n, n))
    blk[0, 0] = 1.0 / (R_ij * C_t)
    return blk


def _load_block(p: CdguParams, n: int) -> np.ndarray:
    blk = np.zeros((n, n))
    if p.R_L is not None:
        blk[0, 0] = -1.0 / (p.R_L * p.C_t)
    return blk


def build_cdgu_local(params: CdguParams, neighbor_lines: Sequence[float] = ()) -> LocalBlocks:
    """Local matrices of a current-controlled unit for the given neighbor line resistances."""
    for R in neighbor_lines:
        _require_positive(R_ij=R)
    C, L, R = params.C_t, params.L_tC, params.R_tC
    A_ii = np.array([[0.0, 1.0 / C], [-1.0 / L, -R / L]])
    return LocalBlocks(
        kind=KIND_CDGU,
        A_ii=A_ii,
        A_load=_load_block(params, 2),
        A_ij=[_coupling_block(C, r, 2) for r in neighbor_lines],
        B=np.array([[0.0], [1.0 / L]]),
        M=np.array([[-1.0 / C], [0.0]]),
        H=np.array([[0.0, 1.0]]),
    )


def build_mg_local(params: MgParams, neighbor_lines: Sequence[float] = ()) -> LocalBlocks:
    """Local matrices of a microgrid (bus + feeding branch + forming branch)."""
    for R in neighbor_lines:
        _require_positive(R_ij=R)
    p = params.cdgu
    C, LC, RC, LV, RV = p.C_t, p.L_tC, p.R_tC, params.L_tV, params.R_tV
    A_ii = np.array([
        [0.0, 1.0 / C, 1.0 / C],
        [-1.0 / LC, -RC / LC, 0.0],
        [-1.0 / LV, 0.0, -RV / LV],
    ])
    return LocalBlocks(
        kind=KIND_MG,
        A_ii=A_ii,
        A_load=_load_block(p, 3),
        A_ij=[_coupling_block(C, r, 3) for r in neighbor_lines],
        B=np.array([[0.0, 0.0], [1.0 / LC, 0.0], [0.0, 1.0 / LV]]),
        M=np.array([[-1.0 / C], [0.0], [0.0]]),
        H=np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]),
    )


def build_local(params: UnitParams, neighbor_lines: Sequence[float] = ()) -> LocalBlocks:
    if isinstance(params, MgParams):
        return build_mg_local(params, neighbor_lines)
    return build_cdgu_local(params, neighbor_lines)


def assemble_global(graph: ElectricalGraph, kind: str | None = None) -> StateSpace:
    """Global (non-augmented) model ``x' = A x + B u + M d``, ``z = H x``.

    The V-row of each unit gets ``+1/(R_ij C_i)`` towards every neighbor and
    the matching drain ``-sum_j 1/(R_ij C_i)`` on its own diagonal entry.
    """
    if not graph.units:
        raise TopologyError("cannot assemble an empty graph")
    graph_kind = graph.kind()
    if kind is not None and kind != graph_kind:
        raise TopologyError(f"graph holds {graph_kind} units, not {kind}")
    n = 3 if graph_kind == KIND_MG else 2
    m = 2 if graph_kind == KIND_MG else 1
    ids = graph.ids
    index = {u: k for k, u in enumerate(ids)}
    N = len(ids)
    A = np.zeros((n * N, n * N))
    B = np.zeros((n * N, m * N))
    M = np.zeros((n * N, N))
    H = np.zeros((m * N, n * N))
    for u in ids:
        k = index[u]
        lines = graph.neighbor_lines(u)
        blocks = build_local(graph.units[u], [ln.R for ln in lines])
        s = slice(n * k, n * (k + 1))
        A[s, s] = blocks.A_ii + blocks.A_load
        for ln, blk in zip(lines, blocks.A_ij):
            j = index[ln.other(u)]
            A[s, n * j:n * (j + 1)] += blk
            A[s, s] -= blk
        B[s, m * k:m * (k + 1)] = blocks.B
        M[s, k:k + 1] = blocks.M
        H[m * k:m * (k + 1), s] = blocks.H
    states = ["V", "IC", "IV"][:n]
    inputs = ["VtC", "VtV"][:m]
    outputs = ["IC", "V"][:m]
    return StateSpace(
        A, B, M, H,
        state_labels=[f"{u}.{s}" for u in ids for s in states],
        input_labels=[f"{u}.{s}" for u in ids for s in inputs],
        disturbance_labels=[f"{u}.IL" for u in ids],
        output_labels=[f"{u}.{s}" for u in ids for s in outputs],
    )


def validate_connectivity(graph: ElectricalGraph) -> list[list[UnitId]]:
    """Connected components of the electrical graph, each in unit order.

    A single component means the graph is connected.
    """
    ids = graph.ids
    if not ids:
        return []
    index = {u: k for k, u in enumerate(ids)}
    adj = np.zeros((len(ids), len(ids)))
    for ln in graph.lines:
        adj[index[ln.a], index[ln.b]] = adj[index[ln.b], index[ln.a]] = 1.0
    _, labels = connected_components(adj, directed=False)
    groups: dict[int, list[UnitId]] = {}
    for u, lab in zip(ids, labels):
        groups.setdefault(int(lab), []).append(u)
    return list(groups.values())


def is_connected(graph: ElectricalGraph) -> bool:
    return len(validate_connectivity(graph)) <= 1
