"""Command-line front end.

    mgpnp check SCENARIO            gain checks, certificates and global eigenvalues
    mgpnp run SCENARIO --out F.csv  simulate and write the trace
    mgpnp presets list | emit NAME  built-in scenarios

``SCENARIO`` is a YAML file or the name of a preset. Exit codes: 0 success,
1 verification failure, 2 usage or I/O error.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .certificates import format_report, verify_global_stability
from .electrical import ElectricalGraph
from .errors import GainError, MgpnpError, ScenarioError, SimulationError
from .presets import PRESETS, preset
from .primary import check_unit_gains
from .scenario_io import emit_scenario, parse_scenario
from .simulation import ConnectUnit, Scenario, run
from .trace_csv import write_trace

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

PRESET_HEADER = """\
Preset scenario {name}.
Electrical constants, gains and the ring line set are the reference design values.
Artifact choices (edit freely): I_cap 5/10/15/20 A (ratio 1:2:3:4), bus
loads R_L = 20 ohm and I_L = 0 A, pre-connection voltage references, event times."""


def load_scenario(spec: str, seed: int | None = None) -> Scenario:
    path = Path(spec)
    if path.exists():
        return parse_scenario(path, seed)
    if spec in PRESETS:
        return preset(spec)
    raise FileNotFoundError(f"no scenario file or preset named {spec!r}")


def _all_units(sc: Scenario):
    units = {u.id: (u.params, u.gains) for u in sc.units}
    for ev in sc.events:
        if isinstance(ev, ConnectUnit) and ev.params is not None:
            units[ev.id] = (ev.params, ev.gains)
    lines = list(sc.lines) + [ln for ev in sc.events if isinstance(ev, ConnectUnit) for ln in ev.lines]
    seen, uniq = set(), []
    for ln in lines:
        if ln.key not in seen:
            seen.add(ln.key)
            uniq.append(ln)
    return units, uniq


def cmd_check(sc: Scenario, out=None) -> int:
    """Check the cluster with every unit of the scenario attached."""
    out = out or sys.stdout
    units, lines = _all_units(sc)
    violations = {}
    for u, (p, g) in units.items():
        chk = check_unit_gains(p, g)
        if not chk.valid:
            violations[u] = chk.violations
    if violations:
        out.write(format_report(None, violations))
        return EXIT_FAIL
    graph = ElectricalGraph({u: p for u, (p, _) in units.items()}, lines)
    report = verify_global_stability(graph, {u: g for u, (_, g) in units.items()})
    out.write(format_report(report))
    return EXIT_OK if report.certified else EXIT_FAIL


def cmd_run(sc: Scenario, out_path: str | None, out=None) -> int:
    out = out or sys.stdout
    result = run(sc)
    if out_path:
        write_trace(result.trace, out_path)
    else:
        write_trace(result.trace, out)
        return EXIT_OK
    for line in result.summary_lines():
        out.write(line + "\n")
    if result.report is not None:
        out.write(format_report(result.report))
    return EXIT_OK


def cmd_presets(action: str, name: str | None, out_path: str | None, out=None) -> int:
    out = out or sys.stdout
    if action == "list":
        for k, fn in PRESETS.items():
            out.write(f"{k}\t{(fn.__doc__ or '').strip().splitlines()[0]}\n")
        return EXIT_OK
    if name is None:
        raise ValueError("presets emit needs a preset name")
    text = emit_scenario(preset(name), PRESET_HEADER.format(name=name))
    if out_path:
        Path(out_path).write_text(text)
    else:
        out.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mgpnp", description="DC microgrid cluster checks and simulation")
    sub = ap.add_subparsers(dest="command", required=True)

    pc = sub.add_parser("check", help="verify gains, certificates and closed-loop stability")
    pc.add_argument("scenario")
    pc.add_argument("--seed", type=int, default=None, help="seed for units with 'gains: sample'")

    pr = sub.add_parser("run", help="simulate a scenario and write a CSV trace")
    pr.add_argument("scenario")
    pr.add_argument("--out", default=None, help="CSV path (default: stdout, no summary)")
    pr.add_argument("--dt", type=float, default=None)
    pr.add_argument("--duration", type=float, default=None, help="override duration; later events are dropped")
    pr.add_argument("--seed", type=int, default=None)

    pp = sub.add_parser("presets", help="list or emit built-in scenarios")
    pp.add_argument("action", choices=["list", "emit"])
    pp.add_argument("name", nargs="?")
    pp.add_argument("--out", default=None)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "presets":
            return cmd_presets(args.action, args.name, args.out)
        sc = load_scenario(args.scenario, args.seed)
        if args.command == "check":
            return cmd_check(sc)
        solver = sc.solver
        if args.dt is not None:
            solver = replace(solver, dt=args.dt)
        events = sc.events
        if args.duration is not None:
            solver = replace(solver, duration=args.duration)
            # a shortened run drops the events it never reaches
            events = tuple(ev for ev in events if ev.t <= args.duration)
        sc = replace(sc, solver=solver, events=events)
        return cmd_run(sc, args.out)
    except GainError as exc:
        print(f"gain check failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except SimulationError as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except ScenarioError as exc:
        print(f"invalid scenario:\n{exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, KeyError, ValueError, MgpnpError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
