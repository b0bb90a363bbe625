import numpy as np
import pytest

from mgpnp.electrical import (
    CdguParams,
    ElectricalGraph,
    Line,
    MgParams,
    assemble_global,
    build_cdgu_local,
    build_mg_local,
    is_connected,
    validate_connectivity,
)
from mgpnp.errors import ParameterError, TopologyError

from conftest import C_T, L_TC, R_TC, L_TV, R_TV, ring_graph


def test_cdgu_local_matrix_reference_values(cdgu_params):
    blk = build_cdgu_local(cdgu_params)
    expected = np.array([[0.0, 1 / 2.2e-3], [-1 / 0.018, -0.2 / 0.018]])
    assert np.allclose(blk.A_ii, expected, rtol=1e-14)
    assert blk.A_ii[0, 1] == pytest.approx(454.5454545, abs=1e-7)
    assert blk.A_ii[1, 0] == pytest.approx(-55.5555556, abs=1e-7)
    assert blk.A_ii[1, 1] == pytest.approx(-11.1111111, abs=1e-7)
    assert np.array_equal(blk.H, [[0.0, 1.0]])
    assert blk.B[1, 0] == pytest.approx(1 / 0.018)
    assert blk.A_load[0, 0] == pytest.approx(-1 / (20.0 * 2.2e-3))


def test_mg_local_matrix(mg_params):
    blk = build_mg_local(mg_params)
    assert blk.A_ii.shape == (3, 3)
    assert blk.A_ii[0, 2] == pytest.approx(1 / C_T)
    assert blk.A_ii[2, 0] == pytest.approx(-1 / L_TV)
    assert blk.A_ii[2, 2] == pytest.approx(-R_TV / L_TV)
    assert blk.A_ii[1, 2] == 0.0 and blk.A_ii[2, 1] == 0.0
    assert np.array_equal(blk.H, [[0, 1, 0], [1, 0, 0]])


def test_no_load_gives_zero_load_block():
    blk = build_cdgu_local(CdguParams(C_T, L_TC, R_TC))
    assert not blk.A_load.any()


def test_two_unit_coupling_conserves_current(cdgu_params):
    g = ElectricalGraph({"a": cdgu_params, "b": cdgu_params}, [Line("a", "b", 0.5)])
    ss = assemble_global(g)
    w = 1 / (0.5 * C_T)
    assert ss.A[0, 2] == pytest.approx(w)
    assert ss.A[2, 0] == pytest.approx(w)
    # load drain plus line drain on the diagonal
    assert ss.A[0, 0] == pytest.approx(-w - 1 / (20.0 * C_T))
    # equal capacitors: line current leaving one bus enters the other
    coupling = ss.A[[0, 2]][:, [0, 2]] + np.eye(2) / (20.0 * C_T)
    assert np.allclose(coupling.sum(axis=1), 0.0)


def test_global_labels_and_shapes():
    ss = assemble_global(ring_graph())
    assert ss.A.shape == (12, 12)
    assert ss.B.shape == (12, 8)
    assert ss.state_labels[:3] == ["1.V", "1.IC", "1.IV"]


@pytest.mark.parametrize("kw", [dict(C_t=0.0), dict(L_tC=-1.0), dict(R_tC=float("nan")), dict(R_L=0.0)])
def test_invalid_params_rejected(kw):
    base = dict(C_t=C_T, L_tC=L_TC, R_tC=R_TC)
    base.update(kw)
    with pytest.raises(ParameterError):
        CdguParams(**base)


def test_invalid_mg_params_rejected(cdgu_params):
    with pytest.raises(ParameterError):
        MgParams(cdgu_params, 0.0, R_TV)


def test_line_validation():
    with pytest.raises(TopologyError):
        Line("1", "1", 0.3)
    with pytest.raises(ParameterError):
        Line("1", "2", 0.0)


def test_graph_validation(cdgu_params):
    with pytest.raises(TopologyError):
        ElectricalGraph({"1": cdgu_params}, [Line("1", "9", 0.3)])
    with pytest.raises(TopologyError):
        ElectricalGraph({"1": cdgu_params, "2": cdgu_params}, [Line("1", "2", 0.3), Line("2", "1", 0.4)])
    g = ElectricalGraph({"1": cdgu_params})
    with pytest.raises(TopologyError):
        g.with_unit("1", cdgu_params)


def test_mixed_kinds_rejected(cdgu_params, mg_params):
    g = ElectricalGraph({"1": cdgu_params, "2": mg_params})
    with pytest.raises(TopologyError):
        assemble_global(g)


def test_empty_graph_rejected():
    with pytest.raises(TopologyError):
        assemble_global(ElectricalGraph({}))


def test_connectivity(cdgu_params):
    g = ElectricalGraph({"1": cdgu_params, "2": cdgu_params})
    assert validate_connectivity(g) == [["1"], ["2"]]
    assert not is_connected(g)
    assert is_connected(g.with_lines([Line("1", "2", 0.1)]))
    ring = ring_graph()
    assert validate_connectivity(ring) == [["1", "2", "3", "4"]]
    assert validate_connectivity(ring.without_unit("2")) == [["1", "3", "4"]]
    split = ring.without_lines_of("1").without_lines_of("3")
    assert sorted(map(sorted, validate_connectivity(split))) == [["1"], ["2"], ["3"], ["4"]]
