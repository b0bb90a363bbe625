import math

import numpy as np
import pytest
from scipy.linalg import block_diag

from mgpnp.certificates import build_PQ_mg, verify_global_stability
from mgpnp.electrical import ElectricalGraph, Line
from mgpnp.errors import DivergenceError, GainError, ScenarioError, SimulationError
from mgpnp.integrate import LinearRK4Propagator
from mgpnp.primary import CdguGains, MgGains, References, closed_loop, exogenous_vector
from mgpnp.secondary import CommGraph, LeaderReference
from mgpnp.simulation import (
    ClusterModel,
    ConnectUnit,
    DisableSecondary,
    DisconnectUnit,
    EnableSecondary,
    Scenario,
    SecondaryConfig,
    SetLoad,
    SetPrimaryRef,
    SolverSettings,
    UnitSpec,
    plug_in,
    plug_out,
    run,
    settling_time,
    steady_state,
)

from conftest import RING, ring_graph

REFS = {"1": References(48.0, 0.2), "2": References(47.9, 0.2), "3": References(48.1, 0.1),
        "4": References(47.95, 0.3)}


def single(mg_params, mg_gains, duration=1.0, dt=1e-5, **kw):
    return Scenario((UnitSpec("1", mg_params, mg_gains, References(48.0, 0.2)),),
                    solver=SolverSettings(dt=dt, duration=duration), **kw)


def test_single_unit_stays_at_equilibrium(mg_params, mg_gains):
    res = run(single(mg_params, mg_gains))
    t, V = res.trace.series("1.V")
    _, I = res.trace.series("1.IC")
    assert t[0] == 0.0 and t[-1] == pytest.approx(1.0)
    assert np.max(np.abs(V - 48.0)) <= 1e-9
    assert np.max(np.abs(I - 1.0)) <= 1e-9


def test_steady_state_single_unit(mg_params, mg_gains):
    g = ElectricalGraph({"1": mg_params})
    x, u = steady_state(g, {"1": mg_gains}, {"1": References(48.0, 0.2)})
    V, IC, IV = x[0], x[1], x[3]
    assert V == pytest.approx(48.0, rel=1e-12)
    assert IC == pytest.approx(1.0, rel=1e-12)
    assert IC + IV == pytest.approx(48.0 / 20.0, rel=1e-12)


def test_steady_state_ring_kcl(mg_gains):
    g = ring_graph()
    x, _ = steady_state(g, {u: mg_gains for u in g.ids}, REFS)
    X = x.reshape(4, 5)
    V = X[:, 0]
    assert np.allclose(V, [48.0, 47.9, 48.1, 47.95], rtol=1e-12)
    # independent Ohm's law and KCL at every bus
    inj = np.zeros(4)
    for a, b, R in RING:
        i, j = int(a) - 1, int(b) - 1
        flow = (V[i] - V[j]) / R
        inj[i] += flow
        inj[j] -= flow
    for k, u in enumerate("1234"):
        I_cap = 5.0 * (k + 1)
        assert X[k, 1] == pytest.approx(REFS[u].I_ref_pri_pu * I_cap, rel=1e-10)
        assert X[k, 1] + X[k, 3] == pytest.approx(V[k] / 20.0 + inj[k], rel=1e-10)


def test_steady_state_singular_without_loads(cdgu_gains):
    from mgpnp.electrical import CdguParams
    p = CdguParams(2.2e-3, 0.018, 0.2)
    g = ElectricalGraph({"1": p, "2": p}, [Line("1", "2", 0.3)])
    with pytest.raises(SimulationError):
        steady_state(g, {"1": cdgu_gains, "2": cdgu_gains}, {"1": References(), "2": References()})


def cluster_of(mg_gains, units=("1", "2", "3")):
    g = ring_graph()
    c = ClusterModel({}, {}, {}, set(), [])
    for u in units:
        lines = [Line(a, b, R) for a, b, R in RING if a in units and b in units and u in (a, b)]
        c = plug_in(c, u, g.units[u], mg_gains, REFS[u], lines)
    return c


def test_plug_in_keeps_existing_states(mg_gains):
    c = cluster_of(mg_gains)
    c.states["1"] = c.states["1"] + 0.1
    before = {u: x.copy() for u, x in c.states.items()}
    g = ring_graph()
    c2 = plug_in(c, "4", g.units["4"], mg_gains, REFS["4"], [Line("3", "4", 0.8), Line("4", "1", 0.7)])
    for u in before:
        assert np.array_equal(c2.states[u], before[u])
    x4, _ = steady_state(ElectricalGraph({"4": g.units["4"]}), {"4": mg_gains}, {"4": REFS["4"]})
    assert np.allclose(c2.states["4"], x4)
    assert len(c2.active_lines()) == 4
    # the original cluster is left untouched
    assert "4" not in c.params


def test_plug_in_errors(mg_gains):
    c = cluster_of(mg_gains)
    g = ring_graph()
    with pytest.raises(SimulationError):
        plug_in(c, "1", g.units["1"], mg_gains)
    bad = MgGains(CdguGains(-0.01, -2.7015, 0.0), -0.48, -0.108, 30.673)
    with pytest.raises(GainError) as exc:
        plug_in(c, "4", g.units["4"], bad)
    assert exc.value.unit == "4"


def test_plug_out(mg_gains):
    c = cluster_of(mg_gains)
    kept = plug_out(c, "2", remove=False)
    assert "2" in kept.params and "2" not in kept.attached
    assert all("2" not in (ln.a, ln.b) for ln in kept.active_lines())
    gone = plug_out(c, "2")
    assert "2" not in gone.params and "2" not in gone.states
    assert np.array_equal(gone.states["1"], c.states["1"])
    with pytest.raises(SimulationError):
        plug_out(c, "9")


def test_plug_in_converges_to_merged_equilibrium(mg_gains):
    g = ring_graph()
    units = tuple(UnitSpec(u, g.units[u], mg_gains, REFS[u], attached=(u != "4")) for u in "1234")
    lines = tuple(Line(a, b, R) for a, b, R in RING)
    sc = Scenario(units, lines, (ConnectUnit(0.1, "4"),), SolverSettings(dt=1e-5, duration=2.0))
    res = run(sc)
    x_bar, _ = steady_state(g, {u: mg_gains for u in g.ids}, REFS)
    x = res.cluster.stacked_state()
    assert np.linalg.norm(x - x_bar) / np.linalg.norm(x_bar) <= 1e-6
    assert res.report.certified


def test_lyapunov_non_increasing(mg_gains):
    g = ring_graph()
    gains = {u: mg_gains for u in g.ids}
    assert verify_global_stability(g, gains).certified
    cl = closed_loop(g, gains)
    P = block_diag(*[build_PQ_mg(mg_gains, g.units[u]).P for u in g.ids])
    x_bar, _ = steady_state(g, gains, REFS)
    rng = np.random.default_rng(5)
    x = x_bar + rng.normal(size=x_bar.size) * np.tile([0.5, 0.5, 0.01, 0.5, 0.01], 4)
    b = cl.M @ exogenous_vector(g, REFS)
    prop = LinearRK4Propagator(cl.A, 1e-5)
    prev = first = (x - x_bar) @ P @ (x - x_bar)
    for _ in range(200):
        x = prop.advance(x, b, 10)
        cur = (x - x_bar) @ P @ (x - x_bar)
        assert cur <= prev * (1 + 1e-9)
        prev = cur
    assert prev < first


def test_rk4_observed_order(mg_params, mg_gains):
    finals = []
    for dt in (2e-4, 1e-4, 5e-5):
        sc = single(mg_params, mg_gains, duration=0.02, dt=dt,
                    events=(SetPrimaryRef(0.0, "1", V_ref=49.0, I_ref_pu=0.5),))
        sc = Scenario(sc.units, events=sc.events, solver=SolverSettings(dt=dt, output_dt=0.02, duration=0.02))
        finals.append(run(sc).cluster.stacked_state())
    e1 = np.linalg.norm(finals[0] - finals[1])
    e2 = np.linalg.norm(finals[1] - finals[2])
    assert math.log2(e1 / e2) >= 3.5


def test_deterministic(mg_gains):
    g = ring_graph()
    units = tuple(UnitSpec(u, g.units[u], mg_gains, REFS[u]) for u in "1234")
    lines = tuple(Line(a, b, R) for a, b, R in RING)
    sc = Scenario(units, lines, (SetPrimaryRef(0.05, "2", I_ref_pu=0.4),), SolverSettings(duration=0.2))
    a, b = run(sc), run(sc)
    assert np.array_equal(a.trace.epochs[0].data(), b.trace.epochs[0].data())


def test_divergence_guard(mg_params, mg_gains):
    sc = Scenario((UnitSpec("1", mg_params, mg_gains, References(48.0, 0.2)),),
                  events=(SetPrimaryRef(0.0, "1", V_ref=49.0),),
                  solver=SolverSettings(dt=5e-3, output_dt=5e-3, duration=2.0))
    with pytest.raises(DivergenceError) as exc:
        run(sc)
    assert exc.value.unit == "1"


def test_gain_check_before_run(mg_params):
    bad = MgGains(CdguGains(-0.01, -2.7015, 40.4018), -0.48, -0.108, 500.0)
    with pytest.raises(GainError) as exc:
        run(Scenario((UnitSpec("7", mg_params, bad),), solver=SolverSettings(duration=1e6)))
    assert exc.value.unit == "7"


def test_scenario_validation(mg_params, mg_gains):
    u = (UnitSpec("1", mg_params, mg_gains),)
    with pytest.raises(ScenarioError, match="unknown unit 'Z'"):
        Scenario(u, events=(DisconnectUnit(0.1, "Z"),))
    with pytest.raises(ScenarioError, match="already connected"):
        Scenario(u, events=(ConnectUnit(0.1, "1"),))
    with pytest.raises(ScenarioError, match="time-sorted"):
        Scenario(u, events=(SetLoad(0.5, "1", I_L=1.0), SetLoad(0.2, "1", I_L=0.0)))
    with pytest.raises(ScenarioError, match="communication graph"):
        Scenario(u, events=(EnableSecondary(0.1, "voltage"),))
    with pytest.raises(ScenarioError, match="duplicate"):
        Scenario(u + u)
    with pytest.raises(ScenarioError, match="needs params"):
        Scenario(u, events=(ConnectUnit(0.1, "2"),))


def test_zero_duration_has_no_rows(mg_params, mg_gains):
    res = run(single(mg_params, mg_gains, duration=0.0))
    assert len(res.trace) == 0
    assert res.trace.epochs[0].columns[0] == "t"


def test_disable_secondary_resets_outputs(mg_gains):
    g = ring_graph()
    units = tuple(UnitSpec(u, g.units[u], mg_gains, References(47.8, 0.25)) for u in "1234")
    lines = tuple(Line(a, b, R) for a, b, R in RING)
    comm = CommGraph.from_edges(tuple("1234"), [(a, b) for a, b, _ in RING], ["1"])
    sec = SecondaryConfig(comm, leader=LeaderReference(48.0, 0.3))
    sc = Scenario(units, lines, (EnableSecondary(0.0, "voltage"), DisableSecondary(0.5, "voltage")),
                  SolverSettings(duration=1.5), sec)
    res = run(sc)
    t, dV = res.trace.series("1.dV")
    assert np.any(np.abs(dV[t < 0.5]) > 0.05)
    assert np.all(dV[t >= 0.5] == 0.0)
    _, V = res.trace.series("1.V")
    assert V[-1] == pytest.approx(47.8, abs=1e-3)


def test_voltage_channel_reaches_leader(mg_gains):
    g = ring_graph()
    units = tuple(UnitSpec(u, g.units[u], mg_gains, References(47.8, 0.25)) for u in "1234")
    lines = tuple(Line(a, b, R) for a, b, R in RING)
    comm = CommGraph.from_edges(tuple("1234"), [(a, b) for a, b, _ in RING], ["1"])
    sc = Scenario(units, lines, (EnableSecondary(0.0, "voltage"),), SolverSettings(duration=3.0),
                  SecondaryConfig(comm, leader=LeaderReference(48.0, 0.3)))
    res = run(sc)
    for u in "1234":
        assert res.trace.final()[f"{u}.V"] == pytest.approx(48.0, abs=1e-3)


def test_settling_time_oracle():
    t = np.linspace(0, 1, 11)
    v = np.array([5, 4, 3, 2, 1.05, 1.2, 1.01, 1.0, 1.0, 1.0, 1.0])
    assert settling_time(t, v, 1.0, 0.05, 0.0, 1.0) == pytest.approx(0.6)
    assert settling_time(t, v, 1.0, 0.001, 0.0, 0.6) is None
    assert settling_time(t, np.ones(11), 1.0, 0.1, 0.0, 1.0) == 0.0
