"""Built-in four-microgrid scenarios.

All presets share the ring ``1-2-3-4-1`` for lines and communication, with
unit 1 the only node pinned to the leader, capacities in the ratio 1:2:3:4 and
a nominal 48 V bus. Absolute capacities (5, 10, 15, 20 A), the 20 ohm bus
loads and the pre-connection voltage references are configurable choices.
"""
from __future__ import annotations

from .electrical import CdguParams, Line, MgParams
from .primary import CdguGains, MgGains, References
from .secondary import CommGraph, LeaderReference, SecondaryGains
from .simulation import (
    ConnectUnit,
    DisconnectUnit,
    EnableSecondary,
    Scenario,
    SecondaryConfig,
    SetLeaderRef,
    SetPrimaryRef,
    SolverSettings,
    UnitSpec,
)

IDS = ("1", "2", "3", "4")
I_CAP = {"1": 5.0, "2": 10.0, "3": 15.0, "4": 20.0}
R_LOAD = 20.0
V_NOMINAL = 48.0

C_T = 2.2e-3
L_TC, R_TC = 0.018, 0.2
L_TV, R_TV = 0.0018, 0.1

REFERENCE_GAINS = MgGains(CdguGains(-0.01, -2.7015, 40.4018), -0.480, -0.108, 30.673)
SECONDARY_GAINS = SecondaryGains(kpV=4.0, kiV=22.0, kpC=3.0, kiC=20.0)

# (a, b, R ohm, L henry)
RING_LINES = (
    Line("1", "2", 0.3, 1.8e-3),
    Line("2", "3", 0.6, 5.4e-3),
    Line("3", "4", 0.8, 7.2e-3),
    Line("4", "1", 0.7, 3.6e-3),
)


def mg_params(I_cap: float, R_L: float | None = R_LOAD, I_L: float = 0.0) -> MgParams:
    return MgParams(CdguParams(C_T, L_TC, R_TC, R_L=R_L, I_L=I_L, I_cap=I_cap), L_TV, R_TV)


def ring_comm() -> CommGraph:
    return CommGraph.from_edges(IDS, [(ln.a, ln.b) for ln in RING_LINES], ["1"])


def _units(refs: dict[str, References], attached: bool) -> tuple[UnitSpec, ...]:
    return tuple(UnitSpec(u, mg_params(I_CAP[u]), REFERENCE_GAINS, refs[u], attached) for u in IDS)


def case1(dt: float = 1e-5, duration: float = 13.0) -> Scenario:
    """Stand-alone start, plug-in of units 1-3 then 4, then one current step per unit.

    Initial current references are 1, 2, 3, 4 A (0.2 p.u. each); the steps go
    to 2.5, 3.5, 1.5 and 5.5 A.
    """
    v0 = {"1": 48.0, "2": 47.9, "3": 48.1, "4": 47.95}
    refs = {u: References(v0[u], 0.2) for u in IDS}
    events = [
        ConnectUnit(1.0, "1"),
        ConnectUnit(1.0, "2"),
        ConnectUnit(1.0, "3"),
        ConnectUnit(3.0, "4"),
        SetPrimaryRef(5.0, "1", I_ref_pu=2.5 / I_CAP["1"]),
        SetPrimaryRef(7.0, "2", I_ref_pu=3.5 / I_CAP["2"]),
        SetPrimaryRef(9.0, "3", I_ref_pu=1.5 / I_CAP["3"]),
        SetPrimaryRef(11.0, "4", I_ref_pu=5.5 / I_CAP["4"]),
    ]
    return Scenario(_units(refs, attached=False), RING_LINES, tuple(events),
                    SolverSettings(dt=dt, duration=duration),
                    SecondaryConfig(ring_comm(), SECONDARY_GAINS, LeaderReference(V_NOMINAL, 0.3)),
                    name="case1")


def _secondary_refs() -> dict[str, References]:
    return {u: References(47.8, 0.25) for u in IDS}


def case2(dt: float = 1e-5, duration: float = 11.0) -> Scenario:
    """Connected ring; voltage channel at 1 s, current channel at 3 s, leader steps at 6 s and 8 s."""
    events = [
        EnableSecondary(1.0, "voltage"),
        EnableSecondary(3.0, "current"),
        SetLeaderRef(6.0, V=49.0),
        SetLeaderRef(8.0, I_pu=0.4),
    ]
    return Scenario(_units(_secondary_refs(), attached=True), RING_LINES, tuple(events),
                    SolverSettings(dt=dt, duration=duration),
                    SecondaryConfig(ring_comm(), SECONDARY_GAINS, LeaderReference(V_NOMINAL, 0.3)),
                    name="case2")


def case3(dt: float = 1e-5, duration: float = 10.0) -> Scenario:
    """Both channels enabled, then unit 2 is plugged out at 4 s and back in at 7 s."""
    events = [
        EnableSecondary(1.0, "voltage"),
        EnableSecondary(2.0, "current"),
        DisconnectUnit(4.0, "2"),
        ConnectUnit(7.0, "2"),
    ]
    return Scenario(_units(_secondary_refs(), attached=True), RING_LINES, tuple(events),
                    SolverSettings(dt=dt, duration=duration),
                    SecondaryConfig(ring_comm(), SECONDARY_GAINS, LeaderReference(V_NOMINAL, 0.3)),
                    name="case3")


PRESETS = {"case1": case1, "case2": case2, "case3": case3}


def preset(name: str, **kw) -> Scenario:
    try:
        return PRESETS[name](**kw)
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
