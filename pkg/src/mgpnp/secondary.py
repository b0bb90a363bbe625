"""Leader-based distributed secondary regulation of bus voltages and per-unit currents.

Each node ``i`` sees the neighbor-weighted disagreement plus, if pinned, its
distance to the leader:

    e = (L + G) (x - x_ref 1)

and a PI filter turns ``e`` into a shift of the primary reference. The voltage
and current channels share one implementation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components, laplacian

from .errors import ConfigurationError, TopologyError


@dataclass(frozen=True, eq=False)
class CommGraph:
    """Binary symmetric adjacency over the units plus binary pinning to the leader."""

    ids: tuple[str, ...]
    adjacency: np.ndarray
    pinning: np.ndarray

    def __post_init__(self) -> None:
        A = np.asarray(self.adjacency, dtype=float)
        g = np.asarray(self.pinning, dtype=float)
        n = len(self.ids)
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "adjacency", A)
        object.__setattr__(self, "pinning", g)
        if A.shape != (n, n) or g.shape != (n,):
            raise TopologyError("adjacency/pinning dimensions do not match the id list")
        if not np.array_equal(A, A.T):
            raise TopologyError("communication adjacency must be symmetric")
        if np.any(np.diag(A) != 0):
            raise TopologyError("communication adjacency must have a zero diagonal")
        if not np.all(np.isin(A, (0.0, 1.0))) or not np.all(np.isin(g, (0.0, 1.0))):
            raise TopologyError("adjacency and pinning entries must be 0 or 1")

    def __eq__(self, other) -> bool:
        if not isinstance(other, CommGraph):
            return NotImplemented
        return (self.ids == other.ids and np.array_equal(self.adjacency, other.adjacency)
                and np.array_equal(self.pinning, other.pinning))

    __hash__ = None

    @classmethod
    def from_edges(cls, ids, edges, pinned) -> "CommGraph":
        ids = tuple(ids)
        index = {u: k for k, u in enumerate(ids)}
        A = np.zeros((len(ids), len(ids)))
        for a, b in edges:
            if a not in index or b not in index:
                raise TopologyError(f"communication link {a}-{b} references an unknown unit")
            A[index[a], index[b]] = A[index[b], index[a]] = 1.0
        g = np.zeros(len(ids))
        for u in pinned:
            if u not in index:
                raise TopologyError(f"pinned unit {u!r} is unknown")
            g[index[u]] = 1.0
        return cls(ids, A, g)

    @property
    def n(self) -> int:
        return len(self.ids)

    def edges(self) -> list[tuple[str, str]]:
        out = []
        for i in range(self.n):
            for j in range(i + 1, self.n):
                if self.adjacency[i, j]:
                    out.append((self.ids[i], self.ids[j]))
        return out

    def pinned(self) -> list[str]:
        return [u for u, gi in zip(self.ids, self.pinning) if gi]

    def laplacian(self) -> np.ndarray:
        return laplacian(self.adjacency)

    def L_plus_G(self) -> np.ndarray:
        return self.laplacian() + np.diag(self.pinning)

    def is_connected(self) -> bool:
        if self.n == 0:
            return True
        return connected_components(self.adjacency, directed=False)[0] == 1

    def subgraph(self, ids) -> "CommGraph":
        keep = [k for k, u in enumerate(self.ids) if u in set(ids)]
        return CommGraph(tuple(self.ids[k] for k in keep),
                         self.adjacency[np.ix_(keep, keep)], self.pinning[keep])

    def without_node(self, unit: str) -> "CommGraph":
        return self.subgraph([u for u in self.ids if u != unit])

    def validate(self) -> None:
        """Raise unless the graph is connected and at least one node is pinned."""
        if not self.pinning.any():
            raise TopologyError("no unit receives the leader reference")
        if not self.is_connected():
            raise TopologyError("communication graph is not connected")


@dataclass(frozen=True)
class SecondaryGains:
    kpV: float = 4.0
    kiV: float = 22.0
    kpC: float = 3.0
    kiC: float = 20.0

    def __post_init__(self) -> None:
        for name in ("kpV", "kiV", "kpC", "kiC"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ConfigurationError(f"{name} must be positive, got {v!r}")


@dataclass(frozen=True)
class LeaderReference:
    V_ref_sec: float = 48.0
    I_ref_sec_pu: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.V_ref_sec) and math.isfinite(self.I_ref_sec_pu)):
            raise ConfigurationError("leader references must be finite")


@dataclass
class ChannelState:
    """PI memory of one channel: integral, last error, last output."""

    integral: np.ndarray
    e_prev: np.ndarray
    output: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "ChannelState":
        return cls(np.zeros(n), np.zeros(n), np.zeros(n))

    def copy(self) -> "ChannelState":
        return ChannelState(self.integral.copy(), self.e_prev.copy(), self.output.copy())


@dataclass
class SecondaryState:
    voltage: ChannelState
    current: ChannelState
    e_V: np.ndarray = field(default_factory=lambda: np.zeros(0))
    e_C: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def zeros(cls, n: int) -> "SecondaryState":
        return cls(ChannelState.zeros(n), ChannelState.zeros(n), np.zeros(n), np.zeros(n))

    @property
    def dV(self) -> np.ndarray:
        return self.voltage.output

    @property
    def dI_pu(self) -> np.ndarray:
        return self.current.output


def channel_error(LG: np.ndarray, x: np.ndarray, ref: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (LG.shape[0],):
        raise ValueError(f"expected {LG.shape[0]} values, got shape {x.shape}")
    return LG @ (x - ref)


def consensus_errors(graph: CommGraph, V, I_pu, leader: LeaderReference) -> tuple[np.ndarray, np.ndarray]:
    LG = graph.L_plus_G()
    return channel_error(LG, V, leader.V_ref_sec), channel_error(LG, I_pu, leader.I_ref_sec_pu)


def pi_channel(state: ChannelState, e: np.ndarray, kp: float, ki: float, dt: float) -> ChannelState:
    """``out = -kp e - ki * integral(e)``; the integral advances by the trapezoid rule."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    e = np.asarray(e, dtype=float)
    integral = state.integral + 0.5 * dt * (state.e_prev + e)
    return ChannelState(integral, e.copy(), -kp * e - ki * integral)


def pi_update(state: SecondaryState, e_V, e_C, gains: SecondaryGains, dt: float) -> tuple[np.ndarray, np.ndarray, SecondaryState]:
    v = pi_channel(state.voltage, e_V, gains.kpV, gains.kiV, dt)
    c = pi_channel(state.current, e_C, gains.kpC, gains.kiC, dt)
    new = SecondaryState(v, c, np.asarray(e_V, dtype=float).copy(), np.asarray(e_C, dtype=float).copy())
    return v.output.copy(), c.output.copy(), new


# -- algebraic checks -------------------------------------------------------------

@dataclass
class PdCheck:
    positive_definite: bool
    lambda_min: float
    reason: str = ""


def check_LG_pd(graph: CommGraph, tol: float = 1e-12) -> PdCheck:
    if graph.n == 0:
        return PdCheck(False, math.nan, "empty graph")
    lam = float(np.linalg.eigvalsh(graph.L_plus_G())[0])
    if lam > tol:
        return PdCheck(True, lam)
    if not graph.pinning.any():
        reason = "no node is pinned to the leader"
    else:
        _, labels = connected_components(graph.adjacency, directed=False)
        unpinned = [c for c in set(labels) if not graph.pinning[labels == c].any()]
        reason = "a connected component has no pinned node" if unpinned else "singular L+G"
    return PdCheck(False, lam, reason)


@dataclass
class CommutationCheck:
    commutation_residual: float
    relative_residual: float
    lambda_min_product: float
    lambda_min_symmetrized: float


def check_commutation_identity(A: np.ndarray, alpha: float) -> CommutationCheck:
    """``A`` and ``B = (I + alpha A)^-1`` commute and ``A B`` is positive definite.

    Accepts either a PD matrix or a :class:`CommGraph` (``A = L + G``).
    """
    if isinstance(A, CommGraph):
        A = A.L_plus_G()
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    n = A.shape[0]
    B = np.linalg.inv(np.eye(n) + alpha * A)
    AB = A @ B
    res = float(np.linalg.norm(AB - B @ A, 2))
    rel = res / (np.linalg.norm(A, 2) * np.linalg.norm(B, 2))
    lam = np.linalg.eigvals(AB)
    sym = float(np.linalg.eigvalsh(0.5 * (AB + AB.T))[0])
    return CommutationCheck(res, rel, float(np.min(lam.real)), sym)


def woodbury_residual(A: np.ndarray, alpha: float) -> float:
    """Relative residual of the two expansions of ``(I + alpha A)^-1 A``.

    Both sides equal ``alpha^-1 I - alpha^-2 (alpha^-1 I + A)^-1``.
    """
    n = A.shape[0]
    I = np.eye(n)
    lhs = np.linalg.solve(I + alpha * A, A)
    rhs = I / alpha - np.linalg.inv(I / alpha + A) / alpha ** 2
    return float(np.linalg.norm(lhs - rhs, 2) / max(np.linalg.norm(lhs, 2), np.finfo(float).tiny))


# -- reduced unit-gain model ---------------------------------------------------------

def reduced_rate_matrix(LG: np.ndarray, kp: float, ki: float) -> np.ndarray:
    """``-ki [I + kp (L+G)]^-1 (L+G)``: the state matrix of the unit-gain loop."""
    n = LG.shape[0]
    M = np.eye(n) + kp * LG
    try:
        return -ki * np.linalg.solve(M, LG)
    except np.linalg.LinAlgError as exc:  # cannot happen when L+G is PD
        raise ArithmeticError("I + kp(L+G) is singular") from exc


def reduced_dynamics_step(graph: CommGraph, gains: SecondaryGains, V, I_pu, leader: LeaderReference,
                          dt: float) -> tuple[np.ndarray, np.ndarray]:
    """One RK4 step of the voltage and current channels under unit-gain primaries."""
    from .integrate import rk4_step

    LG = graph.L_plus_G()
    AV = reduced_rate_matrix(LG, gains.kpV, gains.kiV)
    AC = reduced_rate_matrix(LG, gains.kpC, gains.kiC)
    V = np.asarray(V, dtype=float)
    I_pu = np.asarray(I_pu, dtype=float)
    V1 = leader.V_ref_sec + rk4_step(lambda t, x: AV @ x, 0.0, V - leader.V_ref_sec, dt)
    I1 = leader.I_ref_sec_pu + rk4_step(lambda t, x: AC @ x, 0.0, I_pu - leader.I_ref_sec_pu, dt)
    return V1, I1


def ring(ids, pinned=None) -> CommGraph:
    """Cycle over ``ids`` in order, pinned at ``pinned`` (default: first id)."""
    ids = list(ids)
    if len(ids) == 1:
        edges = []
    elif len(ids) == 2:
        edges = [(ids[0], ids[1])]
    else:
        edges = [(ids[k], ids[(k + 1) % len(ids)]) for k in range(len(ids))]
    return CommGraph.from_edges(ids, edges, [ids[0] if pinned is None else pinned])
