"""Command line front end.

    otrange run scenario1.yaml --trace out.trace --flows out.csv
    otrange replay out.trace
    otrange timeline out.trace --step 1000
    otrange detect learn flows.csv -o baseline.json
    otrange detect scan flows.csv --baseline baseline.json -o alerts.csv
    otrange deploy-check fleet3.yaml --password plant-2024
    otrange serve --port 8000

Scenario and project arguments are first resolved as paths, then against the
bundled fixtures, so `otrange run scenario1` works out of the box.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .audit import audit_trace
from .detection import (
    detect,
    learn_baseline,
    load_baseline,
    save_baseline,
    write_alerts_csv,
)
from .deployer import DeployError, derive_covert_topology
from .netfabric import read_flows_csv
from .project import ProjectError, load_project
from .scenario import ScenarioError, emit_timeline, load_scenario, run_scenario
from .trace import TraceError, load_trace

FIXTURES = Path(__file__).parent / "fixtures"


def resolve_input(name: str) -> Path:
    """Accept a real path, a fixture name, or a fixture name sans suffix."""
    path = Path(name)
    if path.exists():
        return path
    for candidate in (FIXTURES / name, FIXTURES / f"{name}.yaml"):
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"no such file or bundled fixture: {name}")


def cmd_run(args) -> int:
    script = load_scenario(resolve_input(args.scenario))
    result = run_scenario(script, record_flows=args.flows is not None)
    if args.trace:
        result.fleet.trace.dump(args.trace)
    if args.flows:
        result.fleet.fabric.write_flows(args.flows)
    if result.arm_failures:
        print(f"arming failed: {result.arm_failures}")
    for check in result.checks:
        status = "PASS" if check.passed else "FAIL"
        print(f"{status} {check.description} ({check.detail})")
    failed = sum(1 for c in result.checks if not c.passed)
    print(f"{script.name}: {len(result.checks) - failed}/{len(result.checks)} assertions passed")
    if args.timeline:
        for line in emit_timeline(result.fleet.trace.records, script.horizon_ms):
            print(line)
    return 0 if result.passed else 1


def cmd_replay(args) -> int:
    try:
        records = load_trace(args.trace)
    except TraceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    from .scenario import summarize_records

    summary = summarize_records(records)
    print(f"records: {summary['records']}  duration: {summary['duration_ms']} ms")
    print(f"devices: {', '.join(summary['devices'])}")
    for kind, count in summary["kinds"].items():
        print(f"  {kind}: {count}")
    for t_ms, device, cause in summary["alerts"]:
        print(f"alert at {t_ms} ms: {device} ({cause})")
    findings = audit_trace(records, scan_ms=args.scan_ms)
    for finding in findings:
        print(f"AUDIT {finding}")
    print("audit: clean" if not findings else f"audit: {len(findings)} violation(s)")
    return 0 if not findings else 1


def cmd_timeline(args) -> int:
    records = load_trace(args.trace)
    horizon = args.horizon if args.horizon is not None else (records[-1].t_ms if records else 0)
    for line in emit_timeline(records, horizon, step_ms=args.step):
        print(line)
    return 0


def cmd_detect(args) -> int:
    flows = read_flows_csv(args.flows)
    if args.mode == "learn":
        baseline = learn_baseline(flows, window_end_ms=args.window_end)
        save_baseline(baseline, args.output)
        print(f"baseline: {len(baseline.flows)} flow(s) from {len(flows)} record(s) -> {args.output}")
        return 0
    baseline = load_baseline(args.baseline)
    alerts = detect(flows, baseline, factor=args.factor, until_ms=args.until)
    for alert in alerts:
        print(f"{alert.t_ms},{alert.kind},{alert.subject},{alert.detail}")
    if args.output:
        write_alerts_csv(alerts, args.output)
    print(f"scan: {len(alerts)} alert(s) from {len(flows)} record(s)")
    return 0 if not alerts else 1


def cmd_deploy_check(args) -> int:
    try:
        project = load_project(resolve_input(args.project), password=args.password)
        topology = derive_covert_topology(project, strategy=args.strategy)
    except (ProjectError, DeployError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"workstation {project.ew().id} watches: {', '.join(topology.ew_targets)}")
    for a in topology.assignments:
        db, byte, bit = a.write_bit
        print(f"{a.poller} -> {a.target}  slot DB{db}.{byte}.{bit}"
              f"  watch_alert={'yes' if a.watch_alert else 'no'}")
    print(f"deploy-check: ok ({len(topology.assignments)} covert edge(s))")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .control import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="otrange",
                                     description="deterministic fleet extortion range")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario and check its assertions")
    p.add_argument("scenario")
    p.add_argument("--trace", help="write the run trace to this file")
    p.add_argument("--flows", help="write the traffic log CSV to this file")
    p.add_argument("--timeline", action="store_true", help="print a status grid after the run")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("replay", help="summarize and audit a recorded trace")
    p.add_argument("trace")
    p.add_argument("--scan-ms", type=int, default=100, help="scan interval for audit tolerances")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("timeline", help="render a status grid from a trace")
    p.add_argument("trace")
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--step", type=int, default=1000)
    p.set_defaults(func=cmd_timeline)

    p = sub.add_parser("detect", help="traffic baselining and anomaly scan")
    p.add_argument("mode", choices=["learn", "scan"])
    p.add_argument("flows", help="traffic log CSV")
    p.add_argument("--baseline", help="baseline JSON (scan mode)")
    p.add_argument("-o", "--output", help="output path (baseline or alerts CSV)")
    p.add_argument("--factor", type=float, default=3.0, help="allowed gap multiplier")
    p.add_argument("--window-end", type=int, default=None, help="learn only up to this time")
    p.add_argument("--until", type=int, default=None,
                   help="capture end for stopped-flow checks (scan mode)")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("deploy-check", help="validate a project and derive the covert topology")
    p.add_argument("project")
    p.add_argument("--password", default=None)
    p.add_argument("--strategy", choices=["all_neighbors", "spanning_tree"],
                   default="all_neighbors")
    p.set_defaults(func=cmd_deploy_check)

    p = sub.add_parser("serve", help="start the HTTP control surface")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "detect" and args.mode == "learn" and not args.output:
        print("error: detect learn needs -o/--output for the baseline", file=sys.stderr)
        return 2
    if args.command == "detect" and args.mode == "scan" and not args.baseline:
        print("error: detect scan needs --baseline", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ScenarioError, ProjectError, TraceError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
