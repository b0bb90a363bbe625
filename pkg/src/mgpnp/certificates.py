"""Structured Lyapunov certificates and cluster-level stability checks.

Each unit gets a block-diagonal quadratic certificate ``x^T P x`` whose
derivative along the local closed loop ``F`` is ``x^T Q x`` with ``Q`` known in
closed form. The V-entry of every ``P`` is ``eta_i = sigma_bar * C_ti``; sharing
``sigma_bar`` makes the line-coupling contributions assemble into a symmetric
matrix (``cluster matrix``) that is a negated Laplacian plus load terms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.linalg import block_diag, null_space, subspace_angles

from .electrical import (
    CdguParams,
    ElectricalGraph,
    MgParams,
    UnitId,
    UnitParams,
    bus_params,
    validate_connectivity,
)
from .errors import ConfigurationError, GainError
from .primary import (
    CdguGains,
    MgGains,
    UnitGains,
    check_gains_cdgu,
    check_gains_mg,
    check_unit_gains,
    closed_loop,
    local_closed_loop,
)


@dataclass(frozen=True)
class CertificateConfig:
    sigma_bar: float = 1.0
    p22C: float | str = "auto"
    psd_tol: float = 1e-9  # relative to the matrix 2-norm
    stability_margin: float = 1e-9  # absolute, on Re(lambda)
    residual_tol: float = 1e-10  # relative to |P| |F|

    def __post_init__(self) -> None:
        if not (math.isfinite(self.sigma_bar) and self.sigma_bar > 0):
            raise ConfigurationError("sigma_bar must be positive")
        if not self.psd_tol > 0:
            raise ConfigurationError("psd_tol must be positive")
        if self.p22C != "auto":
            if isinstance(self.p22C, str) or not (math.isfinite(self.p22C) and self.p22C > 0):
                raise ConfigurationError("p22C must be 'auto' or a positive number")


@dataclass
class Certificate:
    kind: str
    P: np.ndarray
    Q: np.ndarray
    F: np.ndarray
    eig_P_min: float
    eig_Q_max: float
    residual: float
    certified: bool
    reasons: list[str] = field(default_factory=list)
    delta: float | None = None  # voltage-branch kernel slope (mg only)

    @property
    def verdict(self) -> str:
        return "certified" if self.certified else "failed(" + "; ".join(self.reasons) + ")"


def _finish(kind: str, P: np.ndarray, Q: np.ndarray, F: np.ndarray, cfg: CertificateConfig,
            relation_msgs: list[str], delta: float | None = None) -> Certificate:
    eig_P = np.linalg.eigvalsh(P)
    eig_Q = np.linalg.eigvalsh(Q)
    nP = np.linalg.norm(P, 2)
    nQ = np.linalg.norm(Q, 2)
    resid = np.linalg.norm(F.T @ P + P @ F - Q, 2)
    reasons = []
    if not eig_P[0] > cfg.psd_tol * nP:
        reasons.append(f"P not positive definite (min eig {eig_P[0]:.3e})")
    if eig_Q[-1] > cfg.psd_tol * nQ:
        reasons.append(f"Q not negative semidefinite (max eig {eig_Q[-1]:.3e})")
    if resid > cfg.residual_tol * nP * np.linalg.norm(F, 2):
        reasons.append(f"Lyapunov residual {resid:.3e} too large")
        reasons.extend(relation_msgs)
    return Certificate(kind, P, Q, F, float(eig_P[0]), float(eig_Q[-1]), float(resid),
                       not reasons, reasons, delta)


def _p22(g: CdguGains, p: CdguParams, eta: float, cfg: CertificateConfig) -> tuple[float, list[str]]:
    auto = eta * p.L_tC / (p.C_t * (1.0 - g.k1C))
    if cfg.p22C == "auto":
        return auto, []
    p22 = float(cfg.p22C)
    msgs = []
    if not math.isclose(p22, auto, rel_tol=1e-12):
        msgs.append("relation (k1C-1)/L_tC * p22C = -eta/C_t does not hold "
                    f"(p22C={p22:.6g}, required {auto:.6g})")
    return p22, msgs


def build_PQ_cdgu(g: CdguGains, p: CdguParams, cfg: CertificateConfig = CertificateConfig()) -> Certificate:
    """``P = diag(eta, p22, k3C/L_tC * p22)``, ``Q`` nonzero only at (2,2)."""
    check = check_gains_cdgu(g, p.R_tC)
    if not check.valid:
        raise GainError(None, check.violations)
    eta = cfg.sigma_bar * p.C_t
    p22, msgs = _p22(g, p, eta, cfg)
    P = np.diag([eta, p22, g.k3C / p.L_tC * p22])
    Q = np.zeros((3, 3))
    Q[1, 1] = 2.0 * (g.k2C - p.R_tC) / p.L_tC * p22
    return _finish("cdgu", P, Q, local_closed_loop(p, g), cfg, msgs)


def voltage_h(g: MgGains, p: MgParams) -> float:
    """``h = L_tV k3V - (k1V - 1)(k2V - R_tV)``; negative for valid gains."""
    return p.L_tV * g.k3V - (g.k1V - 1.0) * (g.k2V - p.R_tV)


def build_PQ_mg(g: MgGains, p: MgParams, cfg: CertificateConfig = CertificateConfig()) -> Certificate:
    """Block-diagonal ``P = diag(eta, P_C, P_V)`` over ``[V | I^C, v^C | I^V, v^V]``.

    The voltage block is rank-one in ``Q``; its entries follow from zeroing the
    V/I^V and V/v^V cross terms of ``F^T P + P F``.
    """
    check = check_gains_mg(g, p.cdgu.R_tC, p.R_tV, p.L_tV)
    if not check.valid:
        raise GainError(None, check.violations)
    c = p.cdgu
    eta = cfg.sigma_bar * c.C_t
    p22, msgs = _p22(g.current, c, eta, cfg)
    h = voltage_h(g, p)
    a = g.k2V - p.R_tV
    s = eta / (c.C_t * h)
    PV = s * np.array([
        [p.L_tV * a, p.L_tV * g.k3V],
        [p.L_tV * g.k3V, g.k3V * (g.k1V - 1.0)],
    ])
    P = block_diag([[eta]], np.diag([p22, g.current.k3C / c.L_tC * p22]), PV)
    Q = np.zeros((5, 5))
    Q[1, 1] = 2.0 * (g.current.k2C - c.R_tC) / c.L_tC * p22
    Q[3:, 3:] = 2.0 * s * np.array([[a * a, a * g.k3V], [a * g.k3V, g.k3V ** 2]])
    return _finish("mg", P, Q, local_closed_loop(p, g), cfg, msgs, delta=-a / g.k3V)


def build_certificate(params: UnitParams, gains: UnitGains, cfg: CertificateConfig = CertificateConfig()) -> Certificate:
    if isinstance(params, MgParams):
        if not isinstance(gains, MgGains):
            raise ConfigurationError("mg parameters need MgGains")
        return build_PQ_mg(gains, params, cfg)
    if not isinstance(gains, CdguGains):
        raise ConfigurationError("cdgu parameters need CdguGains")
    return build_PQ_cdgu(gains, params, cfg)


# -- kernels of the quadratic form ---------------------------------------------

def numeric_kernel(Q: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis of the null space of symmetric ``Q`` (columns).

    For semidefinite ``Q`` this is exactly ``{w : w^T Q w = 0}``.
    """
    return null_space(Q, rcond=rtol)


def predicted_kernel_cdgu() -> np.ndarray:
    return np.eye(3)[:, [0, 2]]


def predicted_kernel_mg(delta: float) -> np.ndarray:
    basis = np.zeros((5, 3))
    basis[0, 0] = 1.0
    basis[2, 1] = 1.0
    basis[3, 2] = 1.0
    basis[4, 2] = delta
    return np.linalg.qr(basis)[0]


def quadratic_kernel_cdgu(cert: Certificate) -> np.ndarray:
    if cert.kind != "cdgu":
        raise ValueError("expected a cdgu certificate")
    return numeric_kernel(cert.Q)


def quadratic_kernel_mg(cert: Certificate, g: MgGains | None = None, p: MgParams | None = None) -> np.ndarray:
    """Numeric kernel basis; with gains and params also checks the slope ``delta``."""
    if cert.kind != "mg":
        raise ValueError("expected an mg certificate")
    if g is not None and p is not None:
        delta = -(g.k2V - p.R_tV) / g.k3V
        if not math.isclose(delta, cert.delta, rel_tol=1e-12):
            raise ValueError(f"certificate slope {cert.delta} does not match gains ({delta})")
    return numeric_kernel(cert.Q)


def kernel_angle(numeric: np.ndarray, predicted: np.ndarray) -> float:
    """Largest principal angle between two subspaces (inf if dimensions differ)."""
    if numeric.shape[1] != predicted.shape[1]:
        return math.inf
    return float(np.max(subspace_angles(numeric, predicted)))


# -- cluster level ---------------------------------------------------------------

def _shared_sigma(graph: ElectricalGraph, cfg) -> float:
    if isinstance(cfg, CertificateConfig):
        return cfg.sigma_bar
    sigmas = {cfg[u].sigma_bar for u in graph.ids}
    if len(sigmas) > 1:
        raise ConfigurationError(f"units must share sigma_bar, got {sorted(sigmas)}")
    return sigmas.pop() if sigmas else CertificateConfig().sigma_bar


def build_cluster_matrix(graph: ElectricalGraph,
                         cfg: CertificateConfig | Mapping[UnitId, CertificateConfig] = CertificateConfig()) -> np.ndarray:
    """V-coordinate part of the global ``Q``: ``-2 sigma (G_lines + G_loads)``.

    Off-diagonal ``2 sigma / R_ij``; diagonal ``-2 sigma / R_L - sum_j 2 sigma / R_ij``.
    """
    sigma = _shared_sigma(graph, cfg)
    ids = graph.ids
    index = {u: k for k, u in enumerate(ids)}
    Lc = np.zeros((len(ids), len(ids)))
    for ln in graph.lines:
        i, j = index[ln.a], index[ln.b]
        w = 2.0 * sigma / ln.R
        Lc[i, j] += w
        Lc[j, i] += w
        Lc[i, i] -= w
        Lc[j, j] -= w
    for u in ids:
        bp = bus_params(graph.units[u])
        if bp.R_L is not None:
            Lc[index[u], index[u]] -= 2.0 * sigma / bp.R_L
    return Lc


@dataclass
class ComponentReport:
    ids: list[UnitId]
    eigenvalues: np.ndarray
    max_real: float
    lambda_max_L: float
    eig_Q_max: float
    certified: bool
    reasons: list[str] = field(default_factory=list)


@dataclass
class StabilityReport:
    units: dict[UnitId, Certificate]
    components: list[ComponentReport]

    @property
    def certified(self) -> bool:
        return all(c.certified for c in self.units.values()) and all(c.certified for c in self.components)

    @property
    def max_real(self) -> float:
        return max(c.max_real for c in self.components)


def verify_global_stability(graph: ElectricalGraph, gains: Mapping[UnitId, UnitGains],
                            cfg: CertificateConfig = CertificateConfig()) -> StabilityReport:
    """Local certificates, cluster matrix and closed-loop eigenvalues per component.

    Raises :class:`GainError` naming the first unit whose gains fail the local test.
    """
    for u in graph.ids:
        if u not in gains:
            raise ConfigurationError(f"no gains for unit {u!r}")
        check = check_unit_gains(graph.units[u], gains[u])
        if not check.valid:
            raise GainError(u, check.violations)
    certs = {u: build_certificate(graph.units[u], gains[u], cfg) for u in graph.ids}
    components = []
    for ids in validate_connectivity(graph):
        sub = graph.subgraph(ids)
        cl = closed_loop(sub, gains)
        eig = np.linalg.eigvals(cl.A)
        max_real = float(np.max(eig.real))
        P = block_diag(*[certs[u].P for u in ids])
        Qg = cl.A.T @ P + P @ cl.A
        Qg = 0.5 * (Qg + Qg.T)
        eig_Q = float(np.linalg.eigvalsh(Qg)[-1])
        Lc = build_cluster_matrix(sub, cfg)
        lam_L = float(np.linalg.eigvalsh(Lc)[-1])
        reasons = []
        if not max_real < -cfg.stability_margin:
            reasons.append(f"closed-loop max Re(lambda) = {max_real:.3e}")
        if eig_Q > cfg.psd_tol * np.linalg.norm(Qg, 2):
            reasons.append(f"global Q not negative semidefinite (max eig {eig_Q:.3e})")
        if not lam_L < -cfg.psd_tol * max(np.linalg.norm(Lc, 2), 1.0):
            reasons.append(f"cluster matrix not negative definite (max eig {lam_L:.3e})")
        components.append(ComponentReport(ids, eig, max_real, lam_L, eig_Q, not reasons, reasons))
    return StabilityReport(certs, components)


# -- flat text report -------------------------------------------------------

def format_report(report: StabilityReport | None = None,
                  violations: Mapping[UnitId, list[str]] | None = None) -> str:
    """``key = value`` lines; violations are listed for units that failed the gain test."""
    lines = []
    for u, v in (violations or {}).items():
        lines.append(f"unit.{u}.verdict = invalid_gains")
        lines.append(f"unit.{u}.violations = {'; '.join(v)}")
    if report is not None:
        for u, c in report.units.items():
            lines.append(f"unit.{u}.verdict = {'certified' if c.certified else 'failed'}")
            lines.append(f"unit.{u}.eig_P_min = {c.eig_P_min!r}")
            lines.append(f"unit.{u}.eig_Q_max = {c.eig_Q_max!r}")
            lines.append(f"unit.{u}.residual = {c.residual!r}")
            if c.reasons:
                lines.append(f"unit.{u}.reasons = {'; '.join(c.reasons)}")
        for k, comp in enumerate(report.components):
            pre = f"component.{k}"
            lines.append(f"{pre}.units = {','.join(comp.ids)}")
            lines.append(f"{pre}.max_real_eig = {comp.max_real!r}")
            lines.append(f"{pre}.lambda_max_L = {comp.lambda_max_L!r}")
            lines.append(f"{pre}.global_Q_max_eig = {comp.eig_Q_max!r}")
            lines.append(f"{pre}.verdict = {'certified' if comp.certified else 'failed'}")
            if comp.reasons:
                lines.append(f"{pre}.reasons = {'; '.join(comp.reasons)}")
        lines.append(f"cluster.max_real_eig = {report.max_real!r}")
    ok = report is not None and report.certified and not violations
    lines.append(f"cluster.verdict = {'certified' if ok else 'failed'}")
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, sep, value = line.partition(" = ")
        if not sep:
            raise ValueError(f"malformed report line: {line!r}")
        out[key.strip()] = value
    return out
