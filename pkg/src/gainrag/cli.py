"""Command-line entry point.

Exit codes: 0 success, 1 validation findings or a failed command, 2 missing
file or other I/O problem, 3 bad usage (argparse).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .comms import Pipeline, PipelineServer
from .config import RunConfig, load_config
from .embedding import get_embedder
from .kinematics import load_model
from .perception import DescriptorError, MockVLMClient, VLMUnavailable, parse_descriptor
from .retrieval import build_index
from .scenario_db import ScenarioDBError, load_database, validate_database
from .sim import (ConfigurationError, RunLog, analyze, format_report, load_script, run_scenario,
                  write_report)

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_IO = 2

log = logging.getLogger("gainrag")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(3, f"{self.prog}: error: {message}\n")


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _pipeline(cfg: RunConfig) -> Pipeline:
    db = load_database(cfg.db)
    kwargs = {"url": cfg.embedder_url} if cfg.embedder == "remote" else {}
    embedder = get_embedder(cfg.embedder, **kwargs)
    return Pipeline(db, embedder, MockVLMClient(), cfg.retrieval, cfg.safety, cfg.ssm, build_index(db, embedder))


def _payload_line(payload) -> str:
    kp = " ".join(f"{x:g}" for x in payload.kp)
    kd = " ".join(f"{x:g}" for x in payload.kd)
    return f"kp: {kp}\nkd: {kd}\nv: {payload.nominal_v} ({payload.speed_mps:g} m/s)"


# ---------------------------------------------------------------- commands

def cmd_validate_db(args, cfg: RunConfig) -> int:
    path = Path(args.path) if args.path else cfg.db
    try:
        db = load_database(path, strict=False)
    except OSError as exc:
        _err(f"cannot read {path}: {exc.strerror or exc}")
        return EXIT_IO
    except ScenarioDBError as exc:
        print(f"{path}: {exc}")
        return EXIT_FAIL
    findings = validate_database(db)
    for row, f in findings:
        print(f"row {row} ({db[row].scenario_id}): {f.field}={f.value!r} outside {f.bound}")
    if findings:
        print(f"{len(findings)} finding(s) in {len(db)} records")
        return EXIT_FAIL
    print(f"{path}: {len(db)} records, no findings")
    return EXIT_OK


def cmd_query(args, cfg: RunConfig) -> int:
    pipe = _pipeline(cfg)
    try:
        if args.stub:
            descriptor = pipe.vlm.describe(args.stub)
        else:
            descriptor = parse_descriptor(Path(args.descriptor).read_text(encoding="utf-8"))
    except OSError as exc:
        _err(f"cannot read {args.descriptor}: {exc.strerror or exc}")
        return EXIT_IO
    except (VLMUnavailable, DescriptorError) as exc:
        _err(str(exc))
        return EXIT_FAIL
    out = pipe.run_descriptor(descriptor)
    res = out.result
    print(f"scenario: {out.payload.scenario_id}  reason: {out.payload.reason}  distance: {res.distance:.6g}")
    print(_payload_line(out.payload))
    if args.explain:
        for rank, (i, d) in enumerate(res.candidates, start=1):
            print(f"candidate {rank}: {pipe.db[i].scenario_id} distance={d:.6g}")
    return EXIT_OK


def cmd_describe(args, cfg: RunConfig) -> int:
    try:
        d = MockVLMClient().describe(args.stub)
    except VLMUnavailable as exc:
        _err(str(exc))
        return EXIT_FAIL
    from dataclasses import asdict

    print(json.dumps(asdict(d), indent=2))
    return EXIT_OK


def cmd_serve(args, cfg: RunConfig) -> int:
    pipe = _pipeline(cfg)
    c = cfg.comms
    with PipelineServer((c.host, c.port), pipe, c.latency) as srv:
        print(f"serving on {srv.server_address[0]}:{srv.port}", flush=True)
        try:
            srv.serve_forever(poll_interval=0.1)
        except KeyboardInterrupt:
            pass
        finally:
            srv.stopping.set()
    return EXIT_OK


def cmd_simulate(args, cfg: RunConfig) -> int:
    target = args.script
    if not Path(target).is_file():
        candidate = Path(cfg.scripts_dir) / f"{target}.json"
        if not candidate.is_file():
            _err(f"script not found: {target}")
            return EXIT_IO
        target = candidate
    script = load_script(target)
    remote = None
    pipe = None
    if args.remote:
        host, _, port = args.remote.rpartition(":")
        remote = (host or "127.0.0.1", int(port))
    else:
        pipe = _pipeline(cfg)
    try:
        run = run_scenario(script, cfg.sim_config(), pipe, load_model(cfg.model),
                           remote=remote, speedup=args.speedup)
    except ConfigurationError as exc:
        _err(str(exc))
        return EXIT_FAIL
    except OSError as exc:
        _err(f"connection failed: {exc}")
        return EXIT_IO
    out = Path(args.out or f"{script.name}.csv")
    run.to_csv(out)
    print(f"wrote {len(run)} ticks to {out}")
    print(format_report(analyze(run)))
    return EXIT_OK


def cmd_report(args, cfg: RunConfig) -> int:
    try:
        run = RunLog.from_csv(args.log)
    except OSError as exc:
        _err(f"cannot read {args.log}: {exc.strerror or exc}")
        return EXIT_IO
    except (ValueError, KeyError) as exc:
        _err(f"{args.log}: {exc}")
        return EXIT_FAIL
    report = analyze(run)
    print(format_report(report))
    if args.out:
        write_report(report, args.out)
        print(f"wrote {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gainrag", description="Scene-aware impedance gain retrieval and simulation.")
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int, help="random seed (overrides config)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("validate-db", help="check a scenario database for schema and range problems")
    s.add_argument("path", nargs="?", help="CSV file (default: configured database)")
    s.set_defaults(func=cmd_validate_db)

    s = sub.add_parser("query", help="retrieve the payload for one scene")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--stub", help="named scene from the mock VLM table")
    g.add_argument("--descriptor", help="JSON descriptor file")
    s.add_argument("--explain", action="store_true", help="also print the top-3 candidates")
    s.set_defaults(func=cmd_query)

    s = sub.add_parser("describe", help="print the descriptor the mock VLM returns for a stub")
    s.add_argument("--stub", required=True)
    s.set_defaults(func=cmd_describe)

    s = sub.add_parser("serve", help="run the offboard pipeline server until interrupted")
    s.add_argument("--host")
    s.add_argument("--port", type=int)
    s.add_argument("--latency", type=float, help="artificial reply delay in seconds")
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("simulate", help="replay a scenario script and write the run log")
    s.add_argument("script", help="script name (shipped) or path to a script file")
    s.add_argument("--out", help="run log CSV (default: <script name>.csv)")
    s.add_argument("--remote", help="host:port of a running server; paced against the wall clock")
    s.add_argument("--speedup", type=float, default=1.0, help="wall-clock speedup for remote runs")
    s.add_argument("--stream-rate", type=float, help="queries per second")
    s.add_argument("--staleness-timeout", type=float)
    s.add_argument("--latency", type=float, help="base reply latency in seconds")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("report", help="summarize a run log")
    s.add_argument("log", help="run log CSV")
    s.add_argument("--out", help="write the per-phase summary CSV here")
    s.set_defaults(func=cmd_report)
    return p


def _apply_flags(cfg: RunConfig, args) -> RunConfig:
    comms = {}
    for flag, key in (("host", "host"), ("port", "port"), ("latency", "latency"),
                      ("stream_rate", "stream_rate"), ("staleness_timeout", "staleness_timeout")):
        val = getattr(args, flag, None)
        if val is not None:
            comms[key] = val
    if comms:
        cfg = replace(cfg, comms=replace(cfg.comms, **comms))
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _apply_flags(load_config(args.config), args)
        if args.command != "validate-db":
            cfg.check_files()
    except FileNotFoundError as exc:
        _err(str(exc))
        return EXIT_IO
    except (ValueError, TypeError) as exc:
        _err(f"bad configuration: {exc}")
        return EXIT_FAIL
    try:
        return args.func(args, cfg)
    except ScenarioDBError as exc:
        _err(str(exc))
        return EXIT_FAIL
    except OSError as exc:
        _err(str(exc))
        return EXIT_IO
    except ValueError as exc:
        _err(str(exc))
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
