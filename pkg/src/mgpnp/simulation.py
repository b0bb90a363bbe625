"""Closed-loop simulation of a cluster over a timeline of plug-in/out and reference events.

The augmented closed loop ``x' = (A + B K) x + M d`` is linear with inputs that
only change at events and at secondary-layer ticks, so the fixed-step RK4
recursion is carried out with the exact one-step RK4 matrices (see
:class:`~mgpnp.integrate.LinearRK4Propagator`). Units that are not attached
keep running on their own primary loop; lines are active only while both of
their ends are attached.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence, Union

import numpy as np
from scipy.sparse.csgraph import connected_components

from .certificates import CertificateConfig, StabilityReport, verify_global_stability
from .electrical import (
    KIND_MG,
    ElectricalGraph,
    Line,
    MgParams,
    UnitId,
    UnitParams,
    bus_params,
    unit_kind,
)
from .errors import ConfigurationError, DivergenceError, GainError, ScenarioError, SimulationError
from .integrate import LinearRK4Propagator
from .primary import (
    AUG_SIZE,
    ClosedLoop,
    References,
    UnitGains,
    check_unit_gains,
    closed_loop,
    exogenous_vector,
    gain_matrix,
)
from .secondary import ChannelState, CommGraph, LeaderReference, SecondaryGains, pi_channel

VOLTAGE = "voltage"
CURRENT = "current"
CHANNELS = (VOLTAGE, CURRENT)


# -- scenario description -----------------------------------------------------

@dataclass(frozen=True)
class UnitSpec:
    id: UnitId
    params: UnitParams
    gains: UnitGains
    refs: References = References()
    attached: bool = True


@dataclass(frozen=True)
class SolverSettings:
    dt: float = 1e-5
    output_dt: float = 1e-3
    duration: float = 1.0
    divergence_limit: float = 1e6

    def __post_init__(self) -> None:
        if not self.dt > 0 or not self.output_dt > 0:
            raise ScenarioError(["dt and output_dt must be positive"])
        if not self.duration >= 0:
            raise ScenarioError(["duration must be non-negative"])


@dataclass(frozen=True)
class SecondaryConfig:
    comm: CommGraph | None = None
    gains: SecondaryGains = SecondaryGains()
    leader: LeaderReference = LeaderReference()
    voltage: bool = False
    current: bool = False
    period: float = 0.01

    def __post_init__(self) -> None:
        if not self.period > 0:
            raise ScenarioError(["secondary period must be positive"])


@dataclass(frozen=True)
class ConnectUnit:
    """Attach a unit. Unknown ids need ``params`` and ``gains`` and start at
    their standalone equilibrium; known detached ids keep their state."""

    t: float
    id: UnitId
    params: UnitParams | None = None
    gains: UnitGains | None = None
    refs: References | None = None
    lines: tuple[Line, ...] = ()


@dataclass(frozen=True)
class DisconnectUnit:
    """Open every line of a unit and drop its communication links.

    With ``remove`` the unit leaves the simulation; otherwise it keeps
    running stand-alone on its primary references.
    """

    t: float
    id: UnitId
    remove: bool = False


@dataclass(frozen=True)
class SetPrimaryRef:
    t: float
    id: UnitId
    V_ref: float | None = None
    I_ref_pu: float | None = None


@dataclass(frozen=True)
class SetLeaderRef:
    t: float
    V: float | None = None
    I_pu: float | None = None


@dataclass(frozen=True)
class EnableSecondary:
    t: float
    channel: str


@dataclass(frozen=True)
class DisableSecondary:
    t: float
    channel: str


@dataclass(frozen=True)
class SetLoad:
    t: float
    id: UnitId
    I_L: float | None = None
    R_L: float | None = None


Event = Union[ConnectUnit, DisconnectUnit, SetPrimaryRef, SetLeaderRef, EnableSecondary, DisableSecondary, SetLoad]


@dataclass(frozen=True)
class Scenario:
    units: tuple[UnitSpec, ...]
    lines: tuple[Line, ...] = ()
    events: tuple = ()
    solver: SolverSettings = SolverSettings()
    secondary: SecondaryConfig = SecondaryConfig()
    name: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "units", tuple(self.units))
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(self, "events", tuple(self.events))
        validate_scenario(self)


def validate_scenario(sc: Scenario) -> None:
    """Check ids, event order and channel names by replaying the event list."""
    errors = []
    present: dict[UnitId, bool] = {}
    for spec in sc.units:
        if spec.id in present:
            errors.append(f"duplicate unit id {spec.id!r}")
        present[spec.id] = spec.attached
    known = set(present)
    for ln in sc.lines:
        for end in (ln.a, ln.b):
            if end not in known and not any(isinstance(e, ConnectUnit) and e.id == end for e in sc.events):
                errors.append(f"line {ln.a}-{ln.b} references unknown unit {end!r}")
    last = 0.0
    for ev in sc.events:
        if ev.t < last:
            errors.append(f"events are not time-sorted at t={ev.t}")
        if ev.t < 0:
            errors.append(f"event time {ev.t} is negative")
        last = max(last, ev.t)
        uid = getattr(ev, "id", None)
        if isinstance(ev, ConnectUnit):
            if uid in present and present[uid]:
                errors.append(f"t={ev.t}: unit {uid!r} is already connected")
            elif uid not in present and (ev.params is None or ev.gains is None):
                errors.append(f"t={ev.t}: new unit {uid!r} needs params and gains")
            present[uid] = True
        elif isinstance(ev, DisconnectUnit):
            if uid not in present:
                errors.append(f"t={ev.t}: unknown unit {uid!r}")
            elif not present[uid]:
                errors.append(f"t={ev.t}: unit {uid!r} is not connected")
            if ev.remove:
                present.pop(uid, None)
            else:
                present[uid] = False
        elif isinstance(ev, (SetPrimaryRef, SetLoad)):
            if uid not in present:
                errors.append(f"t={ev.t}: unknown unit {uid!r}")
        elif isinstance(ev, (EnableSecondary, DisableSecondary)):
            if ev.channel not in CHANNELS:
                errors.append(f"t={ev.t}: unknown secondary channel {ev.channel!r}")
            elif sc.secondary.comm is None:
                errors.append(f"t={ev.t}: secondary channel enabled without a communication graph")
    if sc.events and sc.solver.duration < sc.events[-1].t:
        errors.append("duration is shorter than the last event time")
    if (sc.secondary.voltage or sc.secondary.current) and sc.secondary.comm is None:
        errors.append("secondary channel enabled without a communication graph")
    kinds = {unit_kind(s.params) for s in sc.units}
    kinds |= {unit_kind(e.params) for e in sc.events if isinstance(e, ConnectUnit) and e.params is not None}
    if len(kinds) > 1:
        errors.append("cannot mix cdgu and mg units in one scenario")
    if errors:
        raise ScenarioError(errors)


# -- cluster model, equilibria, plug-in/out --------------------------------------

@dataclass
class ClusterModel:
    """Units present in the simulation, their states and the line set.

    ``states`` hold augmented per-unit vectors. ``lines`` is every line known
    to the cluster; a line is energized only if both ends are ``attached``.
    """

    params: dict[UnitId, UnitParams]
    gains: dict[UnitId, UnitGains]
    refs: dict[UnitId, References]
    attached: set[UnitId]
    lines: list[Line]
    states: dict[UnitId, np.ndarray] = field(default_factory=dict)

    @property
    def ids(self) -> list[UnitId]:
        return list(self.params)

    def active_lines(self) -> tuple[Line, ...]:
        return tuple(ln for ln in self.lines if ln.a in self.attached and ln.b in self.attached
                     and ln.a in self.params and ln.b in self.params)

    def graph(self) -> ElectricalGraph:
        return ElectricalGraph(self.params, self.active_lines())

    def copy(self) -> "ClusterModel":
        return ClusterModel(dict(self.params), dict(self.gains), dict(self.refs), set(self.attached),
                            list(self.lines), {u: x.copy() for u, x in self.states.items()})

    def stacked_state(self) -> np.ndarray:
        return np.concatenate([self.states[u] for u in self.ids]) if self.params else np.zeros(0)

    def set_stacked_state(self, x: np.ndarray) -> None:
        n = AUG_SIZE[self.graph().kind()]
        for k, u in enumerate(self.ids):
            self.states[u] = x[n * k:n * (k + 1)].copy()


def steady_state(graph: ElectricalGraph, gains: Mapping[UnitId, UnitGains],
                 refs: Mapping[UnitId, References]) -> tuple[np.ndarray, np.ndarray]:
    """Equilibrium ``x_bar`` of the augmented closed loop and ``u_bar = K x_bar``.

    Raises :class:`SimulationError` if the closed loop is singular (for
    instance a current-controlled component without any resistive load).
    """
    cl = closed_loop(graph, gains)
    d = exogenous_vector(graph, refs)
    try:
        x = np.linalg.solve(cl.A, -cl.M @ d)
    except np.linalg.LinAlgError as exc:
        raise SimulationError("closed-loop matrix is singular; no unique equilibrium") from exc
    if np.linalg.cond(cl.A) > 1e14:
        raise SimulationError("closed-loop matrix is numerically singular; no unique equilibrium")
    return x, cl.K @ x


def plug_in(cluster: ClusterModel, unit: UnitId, params: UnitParams, gains: UnitGains,
            refs: References = References(), lines: Sequence[Line] = ()) -> ClusterModel:
    """Add a unit initialized at its stand-alone equilibrium and energize its lines."""
    if unit in cluster.params:
        raise SimulationError(f"duplicate unit id {unit!r}")
    check = check_unit_gains(params, gains)
    if not check.valid:
        raise GainError(unit, check.violations)
    if cluster.params and unit_kind(params) != cluster.graph().kind():
        raise ConfigurationError("cannot mix cdgu and mg units in one cluster")
    out = cluster.copy()
    x0, _ = steady_state(ElectricalGraph({unit: params}), {unit: gains}, {unit: refs})
    out.params[unit] = params
    out.gains[unit] = gains
    out.refs[unit] = refs
    out.states[unit] = x0
    out.attached.add(unit)
    known = {ln.key for ln in out.lines}
    for ln in lines:
        if ln.key not in known:
            out.lines.append(ln)
    out.graph()  # validates line endpoints
    return out


def plug_out(cluster: ClusterModel, unit: UnitId, remove: bool = True) -> ClusterModel:
    """Open a unit's lines; with ``remove`` also drop it and its state."""
    if unit not in cluster.params:
        raise SimulationError(f"unknown unit {unit!r}")
    out = cluster.copy()
    out.attached.discard(unit)
    if remove:
        for d in (out.params, out.gains, out.refs, out.states):
            d.pop(unit, None)
        out.lines = [ln for ln in out.lines if unit not in (ln.a, ln.b)]
    return out


# -- traces -----------------------------------------------------------------------

@dataclass
class TraceRecord:
    t: float
    values: dict[str, float]


@dataclass
class TraceEpoch:
    """Samples sharing one column layout (one topology)."""

    columns: list[str]
    times: list[float] = field(default_factory=list)
    rows: list[np.ndarray] = field(default_factory=list)

    def data(self) -> np.ndarray:
        if not self.rows:
            return np.zeros((0, len(self.columns)))
        return np.vstack(self.rows)

    def records(self):
        for t, row in zip(self.times, self.rows):
            yield TraceRecord(t, dict(zip(self.columns, row.tolist())))


@dataclass
class Trace:
    epochs: list[TraceEpoch] = field(default_factory=list)

    def series(self, column: str) -> tuple[np.ndarray, np.ndarray]:
        """Times and values of ``column`` over every epoch that carries it."""
        ts, vs = [], []
        for ep in self.epochs:
            if column in ep.columns and ep.rows:
                j = ep.columns.index(column)
                ts.append(np.asarray(ep.times))
                vs.append(ep.data()[:, j])
        if not ts:
            return np.zeros(0), np.zeros(0)
        return np.concatenate(ts), np.concatenate(vs)

    def final(self) -> dict[str, float]:
        for ep in reversed(self.epochs):
            if ep.rows:
                return dict(zip(ep.columns, ep.rows[-1].tolist()))
        return {}

    def __len__(self) -> int:
        return sum(len(ep.times) for ep in self.epochs)


def unit_columns(unit: UnitId, kind: str) -> list[str]:
    sig = ["V", "IC", "IC_pu"] + (["IV"] if kind == KIND_MG else []) + ["uC"] + (["uV"] if kind == KIND_MG else [])
    sig += ["dV", "dI_pu", "eV", "eC"]
    return [f"{unit}.{s}" for s in sig]


# -- settling summary ------------------------------------------------------------

@dataclass(frozen=True)
class SettleTolerances:
    primary_V: float = 1e-3  # volts
    primary_I: float = 1e-3  # amps
    secondary_V: float = 0.05  # volts
    secondary_I_pu: float = 0.005


@dataclass
class Target:
    """What a unit's voltage and per-unit current should converge to."""

    V: float | None
    I_pu: float
    V_source: str  # "primary" | "leader"
    I_source: str


@dataclass
class SettleMetric:
    event_t: float
    label: str
    unit: UnitId
    channel: str  # "V" or "I_pu"
    target: float
    tolerance: float
    settle_time: float | None  # seconds after the event, None if never within tolerance
    peak_deviation: float


@dataclass
class RunResult:
    trace: Trace
    report: StabilityReport | None
    cluster: ClusterModel
    targets: list[tuple[float, str, dict[UnitId, Target]]]
    metrics: list[SettleMetric] = field(default_factory=list)

    def channel_settling(self) -> list[tuple[float, str, str, float | None]]:
        """Slowest unit per event and channel: ``(event_t, label, channel, seconds)``."""
        out = {}
        for m in self.metrics:
            key = (m.event_t, m.label, m.channel)
            prev = out.get(key, 0.0)
            if prev is None or m.settle_time is None:
                out[key] = None
            else:
                out[key] = max(prev, m.settle_time)
        return [(t, lab, ch, v) for (t, lab, ch), v in out.items()]

    def summary_lines(self) -> list[str]:
        lines = []
        for t, lab, ch, v in self.channel_settling():
            st = "never" if v is None else f"{v:.4f} s"
            lines.append(f"settling t={t:g} {lab} channel={ch}: {st}")
        for m in self.metrics:
            st = "never" if m.settle_time is None else f"{m.settle_time:.4f}"
            lines.append(f"t={m.event_t:g} {m.label} unit={m.unit} {m.channel}->{m.target:.6g} "
                         f"(+-{m.tolerance:g}) settle={st} peak_dev={m.peak_deviation:.4g}")
        return lines


def settling_time(t: np.ndarray, v: np.ndarray, target: float, tol: float, t0: float, t1: float) -> float | None:
    """Time after ``t0`` from which ``|v - target| <= tol`` holds on ``[., t1]``."""
    mask = (t >= t0 - 1e-12) & (t <= t1 + 1e-12)
    tw, vw = t[mask], v[mask]
    if tw.size == 0:
        return None
    bad = np.nonzero(np.abs(vw - target) > tol)[0]
    if bad.size == 0:
        return 0.0
    if bad[-1] == tw.size - 1:
        return None
    return float(tw[bad[-1] + 1] - t0)


def settle_metrics(trace: Trace, targets, duration: float,
                   tol: SettleTolerances = SettleTolerances(),
                   I_caps: Mapping[UnitId, float] | None = None) -> list[SettleMetric]:
    out = []
    for k, (t0, label, tg) in enumerate(targets):
        t1 = targets[k + 1][0] if k + 1 < len(targets) else duration
        if t1 <= t0:
            continue
        for u, target in tg.items():
            chans = [("I_pu", f"{u}.IC_pu", target.I_pu, target.I_source)]
            if target.V is not None:
                chans.insert(0, ("V", f"{u}.V", target.V, target.V_source))
            for ch, col, value, source in chans:
                if ch == "V":
                    tl = tol.secondary_V if source == "leader" else tol.primary_V
                elif source == "leader":
                    tl = tol.secondary_I_pu
                else:
                    tl = tol.primary_I / (I_caps or {}).get(u, 1.0)
                t, v = trace.series(col)
                mask = (t >= t0 - 1e-12) & (t <= t1 + 1e-12)
                peak = float(np.max(np.abs(v[mask] - value))) if mask.any() else math.nan
                out.append(SettleMetric(t0, label, u, ch, value, tl,
                                        settling_time(t, v, value, tl, t0, t1), peak))
    return out


# -- simulator ---------------------------------------------------------------------

def _event_label(ev) -> str:
    name = type(ev).__name__
    if hasattr(ev, "id"):
        return f"{name}({ev.id})"
    if hasattr(ev, "channel"):
        return f"{name}({ev.channel})"
    return name


class _Simulator:
    def __init__(self, sc: Scenario):
        self.sc = sc
        s = sc.solver
        self.dt = s.dt
        self.n_total = int(round(s.duration / s.dt))
        self.out_every = max(1, int(round(s.output_dt / s.dt)))
        self.tick_every = max(1, int(round(sc.secondary.period / s.dt)))
        self.sec_dt = self.tick_every * s.dt
        self.cluster = ClusterModel(
            params={u.id: u.params for u in sc.units},
            gains={u.id: u.gains for u in sc.units},
            refs={u.id: u.refs for u in sc.units},
            attached={u.id for u in sc.units if u.attached},
            lines=list(sc.lines),
        )
        self.kind = self._kind()
        self.comm = sc.secondary.comm
        self.sgains = sc.secondary.gains
        self.leader = sc.secondary.leader
        self.enabled = {VOLTAGE: sc.secondary.voltage, CURRENT: sc.secondary.current}
        if self.enabled[VOLTAGE] and self.kind != KIND_MG:
            raise ConfigurationError("the voltage channel needs grid-forming (mg) units")
        zero = lambda: {u: 0.0 for u in (self.comm.ids if self.comm else ())}  # noqa: E731
        # per channel: integral, last error, output, last recorded error
        self.sec = {ch: {"int": zero(), "eprev": zero(), "out": zero(), "err": zero()} for ch in CHANNELS}
        self._cache: dict = {}
        self.trace = Trace()
        self.targets: list = []

    def _kind(self) -> str:
        kinds = {unit_kind(u.params) for u in self.sc.units}
        kinds |= {unit_kind(e.params) for e in self.sc.events if isinstance(e, ConnectUnit) and e.params is not None}
        return kinds.pop() if kinds else KIND_MG

    # -- references ------------------------------------------------------------
    def effective_refs(self) -> dict[UnitId, References]:
        out = {}
        for u, r in self.cluster.refs.items():
            dV = self.sec[VOLTAGE]["out"].get(u, 0.0)
            dI = self.sec[CURRENT]["out"].get(u, 0.0)
            out[u] = References(r.V_ref_pri + dV, r.I_ref_pri_pu + dI)
        return out

    def _led_units(self) -> set[UnitId]:
        """Attached comm nodes whose communication component contains a pinned node."""
        if self.comm is None:
            return set()
        active = [u for u in self.comm.ids if u in self.cluster.attached and u in self.cluster.params]
        if not active:
            return set()
        sub = self.comm.subgraph(active)
        _, labels = connected_components(sub.adjacency, directed=False)
        led = set()
        for c in set(labels):
            members = [sub.ids[k] for k in np.nonzero(labels == c)[0]]
            if sub.pinning[labels == c].any():
                led.update(members)
        return led

    def current_targets(self) -> dict[UnitId, Target]:
        led = self._led_units()
        out = {}
        for u, r in self.cluster.refs.items():
            lv = self.enabled[VOLTAGE] and u in led
            li = self.enabled[CURRENT] and u in led
            V = (self.leader.V_ref_sec if lv else r.V_ref_pri) if self.kind == KIND_MG else None
            I = self.leader.I_ref_sec_pu if li else r.I_ref_pri_pu
            out[u] = Target(V, I, "leader" if lv else "primary", "leader" if li else "primary")
        return out

    # -- linear algebra cache --------------------------------------------------------
    def _model(self) -> tuple[ClosedLoop, LinearRK4Propagator]:
        c = self.cluster
        key = (tuple(c.ids), tuple(sorted(tuple(sorted(ln.key)) for ln in c.active_lines())),
               tuple(c.params[u] for u in c.ids), tuple(c.gains[u] for u in c.ids))
        if key not in self._cache:
            cl = closed_loop(c.graph(), c.gains)
            self._cache[key] = (cl, LinearRK4Propagator(cl.A, self.dt))
        return self._cache[key]

    # -- events ------------------------------------------------------------------
    def _reset_unit_secondary(self, u: UnitId) -> None:
        for ch in CHANNELS:
            for key in ("int", "eprev", "out", "err"):
                if u in self.sec[ch][key]:
                    self.sec[ch][key][u] = 0.0

    def _reset_channel(self, ch: str) -> None:
        for key in ("int", "eprev", "out", "err"):
            for u in self.sec[ch][key]:
                self.sec[ch][key][u] = 0.0

    def apply(self, ev) -> bool:
        """Apply one event; returns True if the electrical topology changed."""
        c = self.cluster
        if isinstance(ev, ConnectUnit):
            if ev.id in c.params:
                if ev.id in c.attached:
                    raise SimulationError(f"unit {ev.id!r} is already connected")
                if ev.refs is not None:
                    c.refs[ev.id] = ev.refs
                c.attached.add(ev.id)
                known = {ln.key for ln in c.lines}
                c.lines.extend(ln for ln in ev.lines if ln.key not in known)
                c.graph()
                return True
            refs = ev.refs or References()
            self.cluster = plug_in(c, ev.id, ev.params, ev.gains, refs, ev.lines)
            return True
        if isinstance(ev, DisconnectUnit):
            if ev.id not in c.params:
                raise SimulationError(f"unknown unit {ev.id!r}")
            self._reset_unit_secondary(ev.id)
            self.cluster = plug_out(c, ev.id, remove=ev.remove)
            return True
        if isinstance(ev, SetPrimaryRef):
            r = c.refs[ev.id]
            c.refs[ev.id] = References(r.V_ref_pri if ev.V_ref is None else ev.V_ref,
                                       r.I_ref_pri_pu if ev.I_ref_pu is None else ev.I_ref_pu)
            return False
        if isinstance(ev, SetLeaderRef):
            self.leader = LeaderReference(self.leader.V_ref_sec if ev.V is None else ev.V,
                                          self.leader.I_ref_sec_pu if ev.I_pu is None else ev.I_pu)
            return False
        if isinstance(ev, EnableSecondary):
            if ev.channel == VOLTAGE and self.kind != KIND_MG:
                raise ConfigurationError("the voltage channel needs grid-forming (mg) units")
            if not self.enabled[ev.channel]:
                self._reset_channel(ev.channel)
            self.enabled[ev.channel] = True
            return False
        if isinstance(ev, DisableSecondary):
            self.enabled[ev.channel] = False
            self._reset_channel(ev.channel)
            return False
        if isinstance(ev, SetLoad):
            p = c.params[ev.id]
            bp = bus_params(p)
            nb = replace(bp, I_L=bp.I_L if ev.I_L is None else ev.I_L, R_L=bp.R_L if ev.R_L is None else ev.R_L)
            c.params[ev.id] = replace(p, cdgu=nb) if isinstance(p, MgParams) else nb
            return False
        raise ScenarioError([f"unsupported event {ev!r}"])

    # -- secondary tick --------------------------------------------------------------
    def tick(self) -> None:
        if self.comm is None or not any(self.enabled.values()):
            return
        active = [u for u in self.comm.ids if u in self.cluster.attached and u in self.cluster.params]
        if not active:
            return
        LG = self.comm.subgraph(active).L_plus_G()
        measured = {VOLTAGE: [], CURRENT: []}
        for u in active:
            x = self.cluster.states[u]
            measured[VOLTAGE].append(x[0])
            measured[CURRENT].append(x[1] / bus_params(self.cluster.params[u]).I_cap)
        refs = {VOLTAGE: self.leader.V_ref_sec, CURRENT: self.leader.I_ref_sec_pu}
        kp = {VOLTAGE: self.sgains.kpV, CURRENT: self.sgains.kpC}
        ki = {VOLTAGE: self.sgains.kiV, CURRENT: self.sgains.kiC}
        for ch in CHANNELS:
            if not self.enabled[ch]:
                continue
            st = self.sec[ch]
            e = LG @ (np.asarray(measured[ch]) - refs[ch])
            prev = ChannelState(np.array([st["int"][u] for u in active]),
                                np.array([st["eprev"][u] for u in active]),
                                np.array([st["out"][u] for u in active]))
            new = pi_channel(prev, e, kp[ch], ki[ch], self.sec_dt)
            for k, u in enumerate(active):
                st["int"][u] = float(new.integral[k])
                st["eprev"][u] = float(new.e_prev[k])
                st["out"][u] = float(new.output[k])
                st["err"][u] = float(e[k])

    # -- recording -------------------------------------------------------------------
    def _columns(self) -> list[str]:
        cols = ["t"]
        for u in self.cluster.ids:
            cols += unit_columns(u, self.kind)
        return cols

    def new_epoch(self) -> None:
        self.trace.epochs.append(TraceEpoch(self._columns()))

    def record(self, t: float) -> None:
        row = [t]
        for u in self.cluster.ids:
            x = self.cluster.states[u]
            p = self.cluster.params[u]
            uu = gain_matrix(self.cluster.gains[u]) @ x
            row += [x[0], x[1], x[1] / bus_params(p).I_cap]
            if self.kind == KIND_MG:
                row += [x[3]]
            row += list(uu)
            row += [self.sec[VOLTAGE]["out"].get(u, 0.0), self.sec[CURRENT]["out"].get(u, 0.0),
                    self.sec[VOLTAGE]["err"].get(u, 0.0), self.sec[CURRENT]["err"].get(u, 0.0)]
        self.trace.epochs[-1].times.append(t)
        self.trace.epochs[-1].rows.append(np.array(row))

    def check_divergence(self, t: float) -> None:
        lim = self.sc.solver.divergence_limit
        for u, x in self.cluster.states.items():
            m = float(np.max(np.abs(x))) if x.size else 0.0
            if not math.isfinite(m) or m > lim:
                raise DivergenceError(u, t, m)

    # -- main loop ---------------------------------------------------------------------
    def run(self) -> None:
        c = self.cluster
        if c.params:
            x0, _ = steady_state(c.graph(), c.gains, self.effective_refs())
            c.set_stacked_state(x0)
        events = list(self.sc.events)
        ev_steps = [int(round(ev.t / self.dt)) for ev in events]
        self.new_epoch()
        if self.n_total == 0:
            return
        k = 0
        ei = 0
        self.targets.append((0.0, "initial", self.current_targets()))
        while True:
            labels = []
            layout_changed = False
            while ei < len(events) and ev_steps[ei] == k:
                layout_changed |= self.apply(events[ei])
                labels.append(_event_label(events[ei]))
                ei += 1
            if layout_changed:
                self.new_epoch()
            if k % self.tick_every == 0:
                self.tick()
            if labels:
                self.targets.append((k * self.dt, "+".join(labels), self.current_targets()))
            if k % self.out_every == 0 or k == self.n_total:
                self.check_divergence(k * self.dt)
                self.record(k * self.dt)
            if k >= self.n_total:
                break
            nxt = min(self.n_total, (k // self.out_every + 1) * self.out_every,
                      (k // self.tick_every + 1) * self.tick_every)
            if ei < len(events):
                nxt = min(nxt, ev_steps[ei])
            if self.cluster.params:
                cl, prop = self._model()
                b = cl.M @ exogenous_vector(self.cluster.graph(), self.effective_refs())
                x = prop.advance(self.cluster.stacked_state(), b, nxt - k)
                self.cluster.set_stacked_state(x)
            k = nxt


def check_scenario_gains(sc: Scenario) -> None:
    """Raise :class:`GainError` naming the first unit whose gains fail the local test."""
    for spec in sc.units:
        check = check_unit_gains(spec.params, spec.gains)
        if not check.valid:
            raise GainError(spec.id, check.violations)
    for ev in sc.events:
        if isinstance(ev, ConnectUnit) and ev.params is not None and ev.gains is not None:
            check = check_unit_gains(ev.params, ev.gains)
            if not check.valid:
                raise GainError(ev.id, check.violations)


def run(scenario: Scenario, cert_cfg: CertificateConfig = CertificateConfig(),
        tolerances: SettleTolerances = SettleTolerances()) -> RunResult:
    """Integrate ``scenario`` and return the trace, a final certificate report and settling metrics.

    Every unit's gains are checked before integration starts.
    """
    check_scenario_gains(scenario)
    sim = _Simulator(scenario)
    sim.run()
    report = None
    if sim.cluster.params:
        try:
            report = verify_global_stability(sim.cluster.graph(), sim.cluster.gains, cert_cfg)
        except (GainError, ConfigurationError):
            report = None
    I_caps = {u: bus_params(p).I_cap for u, p in sim.cluster.params.items()}
    for ev in scenario.events:
        if isinstance(ev, ConnectUnit) and ev.params is not None:
            I_caps.setdefault(ev.id, bus_params(ev.params).I_cap)
    metrics = settle_metrics(sim.trace, sim.targets, scenario.solver.duration, tolerances, I_caps)
    return RunResult(sim.trace, report, sim.cluster, sim.targets, metrics)


def final_equilibrium_error(result: RunResult) -> float:
    """Relative distance of the final state from the equilibrium for the final targets.

    The oracle equilibrium is solved with each unit's references replaced by
    the value its outputs must reach (leader value for secondary-led units).
    """
    c = result.cluster
    if not c.params:
        return 0.0
    _, _, tg = result.targets[-1]
    refs = {}
    for u in c.ids:
        target = tg.get(u)
        r = c.refs[u]
        if target is None:
            refs[u] = r
            continue
        refs[u] = References(target.V if target.V is not None else r.V_ref_pri, target.I_pu)
    x_bar, _ = steady_state(c.graph(), c.gains, refs)
    x = c.stacked_state()
    return float(np.linalg.norm(x - x_bar) / max(np.linalg.norm(x_bar), 1.0))


__all__ = [
    "ClusterModel",
    "ConnectUnit",
    "DisableSecondary",
    "DisconnectUnit",
    "EnableSecondary",
    "RunResult",
    "Scenario",
    "SecondaryConfig",
    "SetLeaderRef",
    "SetLoad",
    "SetPrimaryRef",
    "SettleMetric",
    "SettleTolerances",
    "SolverSettings",
    "Trace",
    "TraceEpoch",
    "TraceRecord",
    "UnitSpec",
    "final_equilibrium_error",
    "plug_in",
    "plug_out",
    "run",
    "settling_time",
    "steady_state",
    "unit_columns",
]
