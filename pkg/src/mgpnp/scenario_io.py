"""YAML scenario files: schema, parsing with line-numbered errors, and emission."""
from __future__ import annotations

import io
from pathlib import Path

import jsonschema
import yaml

from .electrical import CdguParams, Line, MgParams
from .errors import ScenarioError
from .primary import CdguGains, MgGains, References, sample_unit_gains
from .secondary import CommGraph, LeaderReference, SecondaryGains
from .simulation import (
    ConnectUnit,
    DisableSecondary,
    DisconnectUnit,
    EnableSecondary,
    Scenario,
    SecondaryConfig,
    SetLeaderRef,
    SetLoad,
    SetPrimaryRef,
    SolverSettings,
    UnitSpec,
)

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_id = {"type": ["string", "integer"]}
_nullable_num = {"type": ["number", "null"]}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


PARAMS_SCHEMA = _obj({
    "C_t": _pos, "L_tC": _pos, "R_tC": _pos,
    "R_L": {"anyOf": [_pos, {"type": "null"}]},
    "I_L": _num, "I_cap": _pos,
    "L_tV": _pos, "R_tV": _pos,
}, ["C_t", "L_tC", "R_tC"])

GAINS_SCHEMA = {"anyOf": [
    {"const": "sample"},
    _obj({"k1C": _num, "k2C": _num, "k3C": _num, "k1V": _num, "k2V": _num, "k3V": _num},
         ["k1C", "k2C", "k3C"]),
]}

REFS_SCHEMA = _obj({"V_ref_pri": _num, "I_ref_pri_pu": _num})
LINE_SCHEMA = _obj({"a": _id, "b": _id, "R": _pos, "L": {"type": "number", "minimum": 0}}, ["a", "b", "R"])

_EVENT_BASE = {"t": {"type": "number", "minimum": 0}}
EVENT_SCHEMA = {"oneOf": [
    _obj({**_EVENT_BASE, "type": {"const": "connect"}, "unit": _id, "params": PARAMS_SCHEMA,
          "gains": GAINS_SCHEMA, "refs": REFS_SCHEMA, "lines": {"type": "array", "items": LINE_SCHEMA}},
         ["t", "type", "unit"]),
    _obj({**_EVENT_BASE, "type": {"const": "disconnect"}, "unit": _id, "remove": {"type": "boolean"}},
         ["t", "type", "unit"]),
    _obj({**_EVENT_BASE, "type": {"const": "set_primary_ref"}, "unit": _id, "V_ref": _nullable_num,
          "I_ref_pu": _nullable_num}, ["t", "type", "unit"]),
    _obj({**_EVENT_BASE, "type": {"const": "set_leader_ref"}, "V": _nullable_num, "I_pu": _nullable_num},
         ["t", "type"]),
    _obj({**_EVENT_BASE, "type": {"const": "enable_secondary"}, "channel": {"enum": ["voltage", "current"]}},
         ["t", "type", "channel"]),
    _obj({**_EVENT_BASE, "type": {"const": "disable_secondary"}, "channel": {"enum": ["voltage", "current"]}},
         ["t", "type", "channel"]),
    _obj({**_EVENT_BASE, "type": {"const": "set_load"}, "unit": _id, "I_L": _nullable_num,
          "R_L": {"anyOf": [_pos, {"type": "null"}]}}, ["t", "type", "unit"]),
]}

SCENARIO_SCHEMA = _obj({
    "name": {"type": "string"},
    "solver": _obj({"dt": _pos, "output_dt": _pos, "duration": {"type": "number", "minimum": 0}}),
    "units": {"type": "array", "items": _obj({
        "id": _id, "kind": {"enum": ["cdgu", "mg"]}, "attached": {"type": "boolean"},
        "params": PARAMS_SCHEMA, "gains": GAINS_SCHEMA, "refs": REFS_SCHEMA,
    }, ["id", "params", "gains"])},
    "lines": {"type": "array", "items": LINE_SCHEMA},
    "secondary": _obj({
        "comm": _obj({"edges": {"type": "array", "items": {"type": "array", "items": _id,
                                                            "minItems": 2, "maxItems": 2}},
                      "pinned": {"type": "array", "items": _id}}, ["edges", "pinned"]),
        "gains": _obj({"kpV": _pos, "kiV": _pos, "kpC": _pos, "kiC": _pos}),
        "leader": _obj({"V": _num, "I_pu": _num}),
        "voltage": {"type": "boolean"},
        "current": {"type": "boolean"},
        "period": _pos,
    }),
    "events": {"type": "array", "items": EVENT_SCHEMA},
}, ["units"])

_EVENT_TYPES = {
    "connect": ConnectUnit, "disconnect": DisconnectUnit, "set_primary_ref": SetPrimaryRef,
    "set_leader_ref": SetLeaderRef, "enable_secondary": EnableSecondary,
    "disable_secondary": DisableSecondary, "set_load": SetLoad,
}
_EVENT_NAMES = {cls: name for name, cls in _EVENT_TYPES.items()}


# -- parsing -------------------------------------------------------------------

def _node_at(node, path):
    """Walk a composed YAML node along a jsonschema error path."""
    for key in path:
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == key:
                    nxt = v
                    break
            if nxt is None:
                return node
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
        else:
            return node
    return node


def _line_of(root, path) -> int | None:
    if root is None:
        return None
    return _node_at(root, list(path)).start_mark.line + 1


def _fmt(line: int | None, msg: str) -> str:
    return f"line {line}: {msg}" if line is not None else msg


def _params(d: dict, kind: str):
    c = CdguParams(d["C_t"], d["L_tC"], d["R_tC"], R_L=d.get("R_L"), I_L=d.get("I_L", 0.0),
                   I_cap=d.get("I_cap", 1.0))
    if kind == "mg":
        if "L_tV" not in d or "R_tV" not in d:
            raise ValueError("mg units need L_tV and R_tV")
        return MgParams(c, d["L_tV"], d["R_tV"])
    if "L_tV" in d or "R_tV" in d:
        raise ValueError("cdgu units take no L_tV/R_tV")
    return c


def _gains(g, params, seed: int | None):
    if g == "sample":
        if seed is None:
            raise ValueError("gains: sample needs a seed (--seed)")
        return sample_unit_gains(params, seed)
    cur = CdguGains(g["k1C"], g["k2C"], g["k3C"])
    if isinstance(params, MgParams):
        if not all(k in g for k in ("k1V", "k2V", "k3V")):
            raise ValueError("mg units need k1V, k2V and k3V")
        return MgGains(cur, g["k1V"], g["k2V"], g["k3V"])
    return cur


def _refs(d: dict | None) -> References:
    d = d or {}
    return References(d.get("V_ref_pri", 48.0), d.get("I_ref_pri_pu", 0.0))


def _line(d: dict) -> Line:
    return Line(str(d["a"]), str(d["b"]), d["R"], d.get("L", 0.0))


def _kind_of(d: dict) -> str:
    if "kind" in d:
        return d["kind"]
    return "mg" if "L_tV" in d.get("params", {}) else "cdgu"


def scenario_from_dict(doc, root=None, seed: int | None = None) -> Scenario:
    """Validate a loaded document and build the :class:`Scenario`."""
    validator = jsonschema.Draft202012Validator(SCENARIO_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        msgs = []
        for e in errors:
            where = "/".join(map(str, e.absolute_path)) or "<root>"
            msgs.append(_fmt(_line_of(root, e.absolute_path), f"{where}: {_short(e)}"))
        raise ScenarioError(msgs)

    msgs: list[str] = []
    units = []
    seed_k = 0
    kind = None
    for k, u in enumerate(doc["units"]):
        try:
            kind = _kind_of(u)
            p = _params(u["params"], kind)
            g = _gains(u["gains"], p, None if seed is None else seed + seed_k)
            seed_k += 1
            units.append(UnitSpec(str(u["id"]), p, g, _refs(u.get("refs")), u.get("attached", True)))
        except (ValueError, TypeError) as exc:
            msgs.append(_fmt(_line_of(root, ["units", k]), f"unit {u['id']}: {exc}"))

    known = {s.id for s in units}
    events = []
    for k, e in enumerate(doc.get("events", [])):
        try:
            typ = e["type"]
            uid = str(e["unit"]) if "unit" in e else None
            if typ == "connect":
                p = g = r = None
                if "params" in e:
                    kd = "mg" if "L_tV" in e["params"] else "cdgu"
                    p = _params(e["params"], kd)
                    if "gains" in e:
                        g = _gains(e["gains"], p, None if seed is None else seed + seed_k)
                        seed_k += 1
                elif uid not in known:
                    raise ValueError(f"unknown unit {uid!r}")
                if "refs" in e:
                    r = _refs(e["refs"])
                events.append(ConnectUnit(e["t"], uid, p, g, r, tuple(_line(x) for x in e.get("lines", []))))
                known.add(uid)
            elif uid is not None and uid not in known:
                raise ValueError(f"unknown unit {uid!r}")
            elif typ == "disconnect":
                events.append(DisconnectUnit(e["t"], uid, e.get("remove", False)))
            elif typ == "set_primary_ref":
                events.append(SetPrimaryRef(e["t"], uid, e.get("V_ref"), e.get("I_ref_pu")))
            elif typ == "set_leader_ref":
                events.append(SetLeaderRef(e["t"], e.get("V"), e.get("I_pu")))
            elif typ == "enable_secondary":
                events.append(EnableSecondary(e["t"], e["channel"]))
            elif typ == "disable_secondary":
                events.append(DisableSecondary(e["t"], e["channel"]))
            elif typ == "set_load":
                events.append(SetLoad(e["t"], uid, e.get("I_L"), e.get("R_L")))
        except (ValueError, TypeError) as exc:
            msgs.append(_fmt(_line_of(root, ["events", k]), f"event {k} ({e.get('type')}): {exc}"))

    lines = []
    for k, ln in enumerate(doc.get("lines", [])):
        try:
            lines.append(_line(ln))
        except ValueError as exc:
            msgs.append(_fmt(_line_of(root, ["lines", k]), str(exc)))

    sec = doc.get("secondary", {})
    comm = None
    if "comm" in sec:
        comm_ids = [s.id for s in units] + [ev.id for ev in events
                                            if isinstance(ev, ConnectUnit) and ev.params is not None]
        try:
            comm = CommGraph.from_edges(comm_ids, [(str(a), str(b)) for a, b in sec["comm"]["edges"]],
                                        [str(u) for u in sec["comm"]["pinned"]])
        except ValueError as exc:
            msgs.append(_fmt(_line_of(root, ["secondary", "comm"]), str(exc)))
    if msgs:
        raise ScenarioError(msgs)

    sg = sec.get("gains", {})
    leader = sec.get("leader", {})
    defaults = SecondaryGains()
    secondary = SecondaryConfig(
        comm=comm,
        gains=SecondaryGains(sg.get("kpV", defaults.kpV), sg.get("kiV", defaults.kiV),
                             sg.get("kpC", defaults.kpC), sg.get("kiC", defaults.kiC)),
        leader=LeaderReference(leader.get("V", 48.0), leader.get("I_pu", 0.0)),
        voltage=sec.get("voltage", False),
        current=sec.get("current", False),
        period=sec.get("period", 0.01),
    )
    sv = doc.get("solver", {})
    solver = SolverSettings(sv.get("dt", 1e-5), sv.get("output_dt", 1e-3), sv.get("duration", 1.0))
    return Scenario(tuple(units), tuple(lines), tuple(events), solver, secondary, doc.get("name", ""))


def _short(err: jsonschema.ValidationError) -> str:
    if err.validator == "additionalProperties":
        return err.message
    if err.validator in ("oneOf", "anyOf") and err.context:
        best = jsonschema.exceptions.best_match(err.context)
        return best.message
    return err.message


def parse_scenario_text(text: str, seed: int | None = None) -> Scenario:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioError([_fmt(mark.line + 1 if mark else None, f"YAML syntax error: {exc}")]) from exc
    if doc is None:
        raise ScenarioError(["empty scenario document"])
    return scenario_from_dict(doc, root, seed)


def parse_scenario(path, seed: int | None = None) -> Scenario:
    """Read and validate a scenario file; raises :class:`ScenarioError` or ``OSError``."""
    text = Path(path).read_text()
    try:
        return parse_scenario_text(text, seed)
    except ScenarioError as exc:
        raise ScenarioError([f"{path}: {m}" for m in exc.errors]) from None


# -- emission ---------------------------------------------------------------------

def _params_dict(p) -> dict:
    c = p.cdgu if isinstance(p, MgParams) else p
    d = {"C_t": c.C_t, "L_tC": c.L_tC, "R_tC": c.R_tC, "R_L": c.R_L, "I_L": c.I_L, "I_cap": c.I_cap}
    if isinstance(p, MgParams):
        d.update(L_tV=p.L_tV, R_tV=p.R_tV)
    return d


def _gains_dict(g) -> dict:
    cur = g.current if isinstance(g, MgGains) else g
    d = {"k1C": cur.k1C, "k2C": cur.k2C, "k3C": cur.k3C}
    if isinstance(g, MgGains):
        d.update(k1V=g.k1V, k2V=g.k2V, k3V=g.k3V)
    return d


def _refs_dict(r: References) -> dict:
    return {"V_ref_pri": r.V_ref_pri, "I_ref_pri_pu": r.I_ref_pri_pu}


def _line_dict(ln: Line) -> dict:
    return {"a": ln.a, "b": ln.b, "R": ln.R, "L": ln.L}


def _event_dict(ev) -> dict:
    d = {"t": ev.t, "type": _EVENT_NAMES[type(ev)]}
    if isinstance(ev, ConnectUnit):
        d["unit"] = ev.id
        if ev.params is not None:
            d["params"] = _params_dict(ev.params)
        if ev.gains is not None:
            d["gains"] = _gains_dict(ev.gains)
        if ev.refs is not None:
            d["refs"] = _refs_dict(ev.refs)
        if ev.lines:
            d["lines"] = [_line_dict(x) for x in ev.lines]
    elif isinstance(ev, DisconnectUnit):
        d.update(unit=ev.id, remove=ev.remove)
    elif isinstance(ev, SetPrimaryRef):
        d.update(unit=ev.id, V_ref=ev.V_ref, I_ref_pu=ev.I_ref_pu)
    elif isinstance(ev, SetLeaderRef):
        d.update(V=ev.V, I_pu=ev.I_pu)
    elif isinstance(ev, (EnableSecondary, DisableSecondary)):
        d["channel"] = ev.channel
    elif isinstance(ev, SetLoad):
        d.update(unit=ev.id, I_L=ev.I_L, R_L=ev.R_L)
    return d


def scenario_to_dict(sc: Scenario) -> dict:
    doc = {
        "name": sc.name,
        "solver": {"dt": sc.solver.dt, "output_dt": sc.solver.output_dt, "duration": sc.solver.duration},
        "units": [{
            "id": u.id,
            "kind": "mg" if isinstance(u.params, MgParams) else "cdgu",
            "attached": u.attached,
            "params": _params_dict(u.params),
            "gains": _gains_dict(u.gains),
            "refs": _refs_dict(u.refs),
        } for u in sc.units],
        "lines": [_line_dict(ln) for ln in sc.lines],
    }
    s = sc.secondary
    sec = {
        "gains": {"kpV": s.gains.kpV, "kiV": s.gains.kiV, "kpC": s.gains.kpC, "kiC": s.gains.kiC},
        "leader": {"V": s.leader.V_ref_sec, "I_pu": s.leader.I_ref_sec_pu},
        "voltage": s.voltage,
        "current": s.current,
        "period": s.period,
    }
    if s.comm is not None:
        sec["comm"] = {"edges": [list(e) for e in s.comm.edges()], "pinned": s.comm.pinned()}
    doc["secondary"] = sec
    doc["events"] = [_event_dict(ev) for ev in sc.events]
    return doc


def emit_scenario(sc: Scenario, header: str = "") -> str:
    buf = io.StringIO()
    for line in header.splitlines():
        buf.write(f"# {line}\n" if line else "#\n")
    yaml.safe_dump(scenario_to_dict(sc), buf, sort_keys=False, default_flow_style=None)
    return buf.getvalue()
