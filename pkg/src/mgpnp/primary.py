"""Integrator augmentation and decentralized state-feedback PI control.

Augmented local states:

* cdgu: ``[V, I^C, v^C]``
* mg:   ``[V, I^C, v^C, I^V, v^V]``

where ``v^C`` integrates the current tracking error and ``v^V`` the voltage
tracking error. The control input is ``u = K x_hat`` with a structured ``K``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .electrical import (
    KIND_CDGU,
    KIND_MG,
    ElectricalGraph,
    LocalBlocks,
    MgParams,
    StateSpace,
    UnitId,
    UnitParams,
    build_local,
    bus_params,
)
from .errors import ConfigurationError, GainError

# positions of the physical states inside the augmented vector
_PHYS_INDEX = {KIND_CDGU: [0, 1], KIND_MG: [0, 1, 3]}
AUG_SIZE = {KIND_CDGU: 3, KIND_MG: 5}
AUG_LABELS = {KIND_CDGU: ["V", "IC", "vC"], KIND_MG: ["V", "IC", "vC", "IV", "vV"]}


@dataclass(frozen=True)
class CdguGains:
    k1C: float
    k2C: float
    k3C: float

    def __post_init__(self) -> None:
        for name in ("k1C", "k2C", "k3C"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    def as_row(self) -> np.ndarray:
        return np.array([[self.k1C, self.k2C, self.k3C]])


@dataclass(frozen=True)
class MgGains:
    current: CdguGains
    k1V: float
    k2V: float
    k3V: float

    def __post_init__(self) -> None:
        for name in ("k1V", "k2V", "k3V"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    def as_matrix(self) -> np.ndarray:
        c = self.current
        return np.array([
            [c.k1C, c.k2C, c.k3C, 0.0, 0.0],
            [self.k1V, 0.0, 0.0, self.k2V, self.k3V],
        ])


UnitGains = CdguGains | MgGains


@dataclass(frozen=True)
class References:
    """Primary references of one unit.

    The current reference is per-unit; it becomes amps only at the integrator
    input (``I_ref_pri_pu * I_cap``).
    """

    V_ref_pri: float = 48.0
    I_ref_pri_pu: float = 0.0

    def current_ref_amps(self, I_cap: float) -> float:
        return self.I_ref_pri_pu * I_cap


def gain_matrix(g: UnitGains) -> np.ndarray:
    return g.as_matrix() if isinstance(g, MgGains) else g.as_row()


# -- augmentation -----------------------------------------------------------

def _embed(kind: str) -> np.ndarray:
    n_phys = len(_PHYS_INDEX[kind])
    E = np.zeros((AUG_SIZE[kind], n_phys))
    for col, row in enumerate(_PHYS_INDEX[kind]):
        E[row, col] = 1.0
    return E


def _augment(local: LocalBlocks, kind: str) -> LocalBlocks:
    if local.augmented:
        raise ValueError("blocks are already augmented")
    if local.kind != kind:
        raise ValueError(f"expected {kind} blocks, got {local.kind}")
    E = _embed(kind)
    lift = lambda X: E @ X @ E.T  # noqa: E731
    A_ii = lift(local.A_ii)
    n_aug = AUG_SIZE[kind]
    if kind == KIND_CDGU:
        A_ii[2, :] = -(local.H @ E.T)[0]
        M = np.zeros((n_aug, 2))
        M[:, :1] = E @ local.M
        M[2, 1] = 1.0
        H = local.H @ E.T
    else:
        # v^C integrates z_ref^C - I^C, v^V integrates z_ref^V - V
        A_ii[2, 1] = -1.0
        A_ii[4, 0] = -1.0
        M = np.zeros((n_aug, 3))
        M[:, :1] = E @ local.M
        M[2, 1] = 1.0
        M[4, 2] = 1.0
        H = local.H @ E.T
    return LocalBlocks(
        kind=kind,
        A_ii=A_ii,
        A_load=lift(local.A_load),
        A_ij=[lift(a) for a in local.A_ij],
        B=E @ local.B,
        M=M,
        H=H,
        augmented=True,
    )


def augment_cdgu(local: LocalBlocks) -> LocalBlocks:
    """Extend current-controlled unit blocks with the current-error integrator."""
    return _augment(local, KIND_CDGU)


def augment_mg(local: LocalBlocks) -> LocalBlocks:
    """Extend microgrid blocks with current- and voltage-error integrators."""
    return _augment(local, KIND_MG)


def augment(local: LocalBlocks) -> LocalBlocks:
    return _augment(local, local.kind)


def local_closed_loop(params: UnitParams, gains: UnitGains) -> np.ndarray:
    """``F = A_hat_ii + B_hat K`` (no load, no coupling)."""
    _check_pairing(params, gains)
    aug = augment(build_local(params))
    return aug.A_ii + aug.B @ gain_matrix(gains)


def control_input(gains: UnitGains, x_hat: np.ndarray) -> np.ndarray:
    K = gain_matrix(gains)
    x_hat = np.asarray(x_hat, dtype=float)
    if x_hat.shape != (K.shape[1],):
        raise ValueError(f"state must have shape ({K.shape[1]},), got {x_hat.shape}")
    return K @ x_hat


# -- gain sets --------------------------------------------------------------

@dataclass
class GainCheck:
    """Verdict of the local inequality test plus distances to each boundary."""

    valid: bool
    violations: list[str] = field(default_factory=list)
    margins: dict[str, float] = field(default_factory=dict)

    def __bool__(self) -> bool:
        return self.valid


def _cdgu_conditions(g: CdguGains, R_tC: float) -> list[tuple[str, float]]:
    # (description, signed distance; > 0 means satisfied)
    return [
        ("k1C < 1", 1.0 - g.k1C),
        ("k2C < R_tC", R_tC - g.k2C),
        ("k3C > 0", g.k3C),
    ]


def k3v_upper_bound(k1V: float, k2V: float, R_tV: float, L_tV: float) -> float:
    return (k1V - 1.0) * (k2V - R_tV) / L_tV


def _mg_conditions(g: MgGains, R_tC: float, R_tV: float, L_tV: float) -> list[tuple[str, float]]:
    bound = k3v_upper_bound(g.k1V, g.k2V, R_tV, L_tV)
    return _cdgu_conditions(g.current, R_tC) + [
        ("k1V < 1", 1.0 - g.k1V),
        ("k2V < R_tV", R_tV - g.k2V),
        ("k3V > 0", g.k3V),
        ("k3V < (k1V-1)(k2V-R_tV)/L_tV", bound - g.k3V),
    ]


def _verdict(conds: list[tuple[str, float]]) -> GainCheck:
    violations = [name for name, dist in conds if not dist > 0]
    return GainCheck(not violations, violations, {name: dist for name, dist in conds})


def check_gains_cdgu(g: CdguGains, R_tC: float) -> GainCheck:
    """Strict test of ``k1C < 1``, ``k2C < R_tC``, ``k3C > 0``."""
    return _verdict(_cdgu_conditions(g, R_tC))


def check_gains_mg(g: MgGains, R_tC: float, R_tV: float, L_tV: float) -> GainCheck:
    return _verdict(_mg_conditions(g, R_tC, R_tV, L_tV))


def check_unit_gains(params: UnitParams, gains: UnitGains) -> GainCheck:
    _check_pairing(params, gains)
    if isinstance(params, MgParams):
        return check_gains_mg(gains, params.cdgu.R_tC, params.R_tV, params.L_tV)
    return check_gains_cdgu(gains, params.R_tC)


def relative_margins(params: UnitParams, gains: UnitGains) -> dict[str, float]:
    """Distances to each boundary in the scale used by the samplers.

    ``k1`` distances are absolute, ``k2`` distances are divided by the branch
    resistance, the ``k3C``/``k3V > 0`` distances are absolute and the ``k3V``
    interval distances are divided by half the interval width.
    """
    check = check_unit_gains(params, gains)
    m = dict(check.margins)
    if isinstance(params, MgParams):
        m["k2C < R_tC"] /= params.cdgu.R_tC
        m["k2V < R_tV"] /= params.R_tV
        half = k3v_upper_bound(gains.k1V, gains.k2V, params.R_tV, params.L_tV) / 2.0
        m["k3V > 0"] /= half
        m["k3V < (k1V-1)(k2V-R_tV)/L_tV"] /= half
    else:
        m["k2C < R_tC"] /= params.R_tC
    return m


def _check_pairing(params: UnitParams, gains: UnitGains) -> None:
    if isinstance(params, MgParams) != isinstance(gains, MgGains):
        raise ConfigurationError("unit parameters and gains are of different kinds")


def _sample_cdgu(rng: np.random.Generator, R_tC: float, margin: float) -> CdguGains:
    k1 = 1.0 - margin - 2.0 * rng.random()
    k2 = R_tC - R_tC * (margin + 20.0 * rng.random())
    k3 = math.exp(rng.uniform(math.log(margin), math.log(100.0)))
    return CdguGains(k1, k2, k3)


def sample_gains_cdgu(R_tC: float, seed: int, margin: float = 0.1) -> CdguGains:
    """Random stabilizing coefficients at least ``margin`` inside the set.

    Distances are measured as in :func:`relative_margins`.
    """
    if not 0.0 < margin < 1.0:
        raise ValueError("margin must lie in (0, 1)")
    return _sample_cdgu(np.random.default_rng(seed), R_tC, margin)


def sample_gains_mg(R_tC: float, R_tV: float, L_tV: float, seed: int, margin: float = 0.1) -> MgGains:
    if not 0.0 < margin < 1.0:
        raise ValueError("margin must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    current = _sample_cdgu(rng, R_tC, margin)
    k1V = 1.0 - margin - 2.0 * rng.random()
    k2V = R_tV - R_tV * (margin + 5.0 * rng.random())
    bound = k3v_upper_bound(k1V, k2V, R_tV, L_tV)
    frac = margin / 2.0 + (1.0 - margin) * rng.random()
    return MgGains(current, k1V, k2V, bound * frac)


def sample_unit_gains(params: UnitParams, seed: int, margin: float = 0.1) -> UnitGains:
    if isinstance(params, MgParams):
        return sample_gains_mg(params.cdgu.R_tC, params.R_tV, params.L_tV, seed, margin)
    return sample_gains_cdgu(params.R_tC, seed, margin)


# -- global closed loop -----------------------------------------------------

@dataclass
class ClosedLoop:
    """Global augmented closed loop ``x' = A x + M d`` for a fixed topology."""

    ids: list[UnitId]
    kind: str
    A: np.ndarray
    M: np.ndarray
    K: np.ndarray
    augmented: StateSpace

    @property
    def n_local(self) -> int:
        return AUG_SIZE[self.kind]

    def unit_slice(self, unit: UnitId) -> slice:
        k = self.ids.index(unit)
        return slice(self.n_local * k, self.n_local * (k + 1))


def assemble_augmented(graph: ElectricalGraph) -> StateSpace:
    """Global integrator-augmented open loop including loads and line coupling."""
    kind = graph.kind()
    n = AUG_SIZE[kind]
    m = 2 if kind == KIND_MG else 1
    d = 3 if kind == KIND_MG else 2
    ids = graph.ids
    index = {u: k for k, u in enumerate(ids)}
    N = len(ids)
    A = np.zeros((n * N, n * N))
    B = np.zeros((n * N, m * N))
    M = np.zeros((n * N, d * N))
    H = np.zeros((m * N, n * N))
    for u in ids:
        k = index[u]
        lines = graph.neighbor_lines(u)
        aug = augment(build_local(graph.units[u], [ln.R for ln in lines]))
        s = slice(n * k, n * (k + 1))
        A[s, s] = aug.A_ii + aug.A_load
        for ln, blk in zip(lines, aug.A_ij):
            j = index[ln.other(u)]
            A[s, n * j:n * (j + 1)] += blk
            A[s, s] -= blk
        B[s, m * k:m * (k + 1)] = aug.B
        M[s, d * k:d * (k + 1)] = aug.M
        H[m * k:m * (k + 1), s] = aug.H
    labels = AUG_LABELS[kind]
    dist = ["IL", "zrefC", "zrefV"][:d]
    return StateSpace(
        A, B, M, H,
        state_labels=[f"{u}.{s}" for u in ids for s in labels],
        input_labels=[f"{u}.{s}" for u in ids for s in ["VtC", "VtV"][:m]],
        disturbance_labels=[f"{u}.{s}" for u in ids for s in dist],
        output_labels=[f"{u}.{s}" for u in ids for s in ["IC", "V"][:m]],
    )


def closed_loop(graph: ElectricalGraph, gains: Mapping[UnitId, UnitGains]) -> ClosedLoop:
    """Close every unit's local loop; raises :class:`GainError` naming the first invalid unit."""
    for u in graph.ids:
        if u not in gains:
            raise ConfigurationError(f"no gains for unit {u!r}")
        check = check_unit_gains(graph.units[u], gains[u])
        if not check.valid:
            raise GainError(u, check.violations)
    aug = assemble_augmented(graph)
    kind = graph.kind()
    blocks = [gain_matrix(gains[u]) for u in graph.ids]
    K = np.zeros((aug.B.shape[1], aug.A.shape[0]))
    r = c = 0
    for blk in blocks:
        K[r:r + blk.shape[0], c:c + blk.shape[1]] = blk
        r += blk.shape[0]
        c += blk.shape[1]
    return ClosedLoop(graph.ids, kind, aug.A + aug.B @ K, aug.M, K, aug)


def exogenous_vector(graph: ElectricalGraph, refs: Mapping[UnitId, References]) -> np.ndarray:
    """Stack ``[I_L, z_ref^C(, z_ref^V)]`` per unit in graph order."""
    kind = graph.kind()
    out = []
    for u in graph.ids:
        p = bus_params(graph.units[u])
        r = refs[u]
        out.append(p.I_L)
        out.append(r.current_ref_amps(p.I_cap))
        if kind == KIND_MG:
            out.append(r.V_ref_pri)
    return np.array(out, dtype=float)


__all__ = [
    "AUG_LABELS",
    "AUG_SIZE",
    "CdguGains",
    "ClosedLoop",
    "GainCheck",
    "MgGains",
    "References",
    "UnitGains",
    "assemble_augmented",
    "augment",
    "augment_cdgu",
    "augment_mg",
    "check_gains_cdgu",
    "check_gains_mg",
    "check_unit_gains",
    "closed_loop",
    "control_input",
    "exogenous_vector",
    "gain_matrix",
    "k3v_upper_bound",
    "local_closed_loop",
    "relative_margins",
    "sample_gains_cdgu",
    "sample_gains_mg",
    "sample_unit_gains",
]
