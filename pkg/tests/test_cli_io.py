import io
import textwrap

import numpy as np
import pytest
import yaml

from mgpnp.cli import main
from mgpnp.errors import ScenarioError
from mgpnp.presets import PRESETS, preset
from mgpnp.scenario_io import emit_scenario, parse_scenario, parse_scenario_text, scenario_to_dict
from mgpnp.simulation import run
from mgpnp.trace_csv import read_trace, trace_to_text, write_trace

MINIMAL = textwrap.dedent("""\
    units:
      - id: a
        kind: mg
        params: {C_t: 2.2e-3, L_tC: 0.018, R_tC: 0.2, L_tV: 0.0018, R_tV: 0.1, R_L: 20, I_cap: 5}
        gains: {k1C: -0.01, k2C: -2.7015, k3C: 40.4018, k1V: -0.48, k2V: -0.108, k3V: 30.673}
        refs: {V_ref_pri: 48.0, I_ref_pri_pu: 0.2}
    solver: {dt: 1.0e-5, duration: 0.05}
    """)


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_preset_round_trip(name):
    sc = preset(name)
    assert parse_scenario_text(emit_scenario(sc, "header")) == sc


def test_file_equals_programmatic(tmp_path):
    p = tmp_path / "case2.yaml"
    p.write_text(emit_scenario(preset("case2")))
    sc = parse_scenario(p)
    sc_short = type(sc)(sc.units, sc.lines, (), type(sc.solver)(duration=0.3), sc.secondary)
    ref = preset("case2")
    ref_short = type(ref)(ref.units, ref.lines, (), type(ref.solver)(duration=0.3), ref.secondary)
    a, b = run(sc_short), run(ref_short)
    assert np.array_equal(a.trace.epochs[0].data(), b.trace.epochs[0].data())


def test_unknown_unit_in_event_has_line_number():
    doc = scenario_to_dict(preset("case3"))
    doc["events"][2]["unit"] = "Z"
    text = yaml.safe_dump(doc, sort_keys=False)
    with pytest.raises(ScenarioError) as exc:
        parse_scenario_text(text)
    msg = str(exc.value)
    assert "unknown unit 'Z'" in msg
    target = [k + 1 for k, ln in enumerate(text.splitlines()) if "type: disconnect" in ln][0]
    assert f"line {target}" in msg or f"line {target - 1}" in msg


def test_unknown_key_rejected():
    with pytest.raises(ScenarioError, match="line 7: solver: Additional properties"):
        parse_scenario_text(MINIMAL.replace("duration: 0.05}", "duration: 0.05, steps: 3}"))


def test_yaml_syntax_error():
    with pytest.raises(ScenarioError, match="YAML syntax"):
        parse_scenario_text("units: [\n")


def test_minimal_file_runs():
    sc = parse_scenario_text(MINIMAL)
    res = run(sc)
    assert res.trace.final()["a.V"] == pytest.approx(48.0, abs=1e-9)


def test_csv_fidelity(tmp_path):
    sc = preset("case3")
    sc = type(sc)(sc.units, sc.lines, sc.events[:3], type(sc.solver)(duration=4.2), sc.secondary)
    res = run(sc)
    path = tmp_path / "t.csv"
    write_trace(res.trace, path)
    back = read_trace(path)
    assert len(back.epochs) == len(res.trace.epochs) == 2
    for a, b in zip(res.trace.epochs, back.epochs):
        assert a.columns == b.columns
        assert np.max(np.abs(a.data() - b.data())) <= 1e-12
    text = path.read_text()
    assert text.count("# epoch") == 2


def test_zero_duration_csv_is_header_only():
    sc = parse_scenario_text(MINIMAL.replace("duration: 0.05", "duration: 0.0"))
    text = trace_to_text(run(sc).trace)
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    assert lines == ["t,a.V,a.IC,a.IC_pu,a.IV,a.uC,a.uV,a.dV,a.dI_pu,a.eV,a.eC"]


def test_read_trace_rejects_ragged():
    with pytest.raises(ValueError):
        read_trace(io.StringIO("# epoch 0\nt,x\n1.0\n"))


def test_cli_check_preset(capsys):
    assert main(["check", "case1"]) == 0
    out = capsys.readouterr().out
    assert "cluster.max_real_eig" in out
    assert "cluster.verdict = certified" in out


def test_cli_check_bad_gain(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text(MINIMAL.replace("k3C: 40.4018", "k3C: 0.0"))
    assert main(["check", str(p)]) == 1
    out = capsys.readouterr().out
    assert "unit.a" in out and "k3C > 0" in out


def test_cli_run_case1(tmp_path, capsys):
    out = tmp_path / "c1.csv"
    assert main(["run", "case1", "--out", str(out)]) == 0
    final = read_trace(out).final()
    for u, amps in {"1": 2.5, "2": 3.5, "3": 1.5, "4": 5.5}.items():
        assert final[f"{u}.IC"] == pytest.approx(amps, abs=1e-3)
    assert "settling" in capsys.readouterr().out


def test_cli_run_case2_summary(tmp_path, capsys):
    assert main(["run", "case2", "--out", str(tmp_path / "c2.csv"), "--duration", "3"]) == 0
    out = capsys.readouterr().out
    assert "EnableSecondary(voltage) channel=V" in out


def test_cli_presets(tmp_path, capsys):
    assert main(["presets", "list"]) == 0
    assert capsys.readouterr().out.count("\n") == 3
    p = tmp_path / "c1.yaml"
    assert main(["presets", "emit", "case1", "--out", str(p)]) == 0
    assert parse_scenario(p) == preset("case1")
    assert p.read_text().startswith("#")


def test_cli_bad_file_exit_2(tmp_path, capsys):
    p = tmp_path / "x.yaml"
    p.write_text("units: 3\n")
    assert main(["check", str(p)]) == 2
    assert main(["check", str(tmp_path / "missing.yaml")]) == 2


def test_cli_sampled_gains(tmp_path, capsys):
    text = MINIMAL.replace(
        "gains: {k1C: -0.01, k2C: -2.7015, k3C: 40.4018, k1V: -0.48, k2V: -0.108, k3V: 30.673}",
        "gains: sample")
    p = tmp_path / "s.yaml"
    p.write_text(text)
    assert main(["check", str(p), "--seed", "4"]) == 0
    assert parse_scenario(p, seed=4) == parse_scenario(p, seed=4)
    assert parse_scenario(p, seed=4) != parse_scenario(p, seed=5)
    assert main(["check", str(p)]) == 2
