"""Command line entry point.

    clusterflow run <config>
    clusterflow check <config>
    clusterflow replay <ledger> [<snapshot_dir>]
    clusterflow version

Exit codes: 0 success, 1 usage/config error (also replay mismatch),
2 solver failure, 3 blow-up guard abort.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, load_config
from .evolution import initial_density, run
from .linalg import SolverError
from .monitor import Monitor
from .replay import replay
from .snapshot import SnapshotError, write_snapshot

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_ABORT = 0, 1, 2, 3

log = logging.getLogger("clusterflow")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="clusterflow", description="Individual-clustering model simulator with estimate monitor")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run a simulation from a config file")
    p.add_argument("config")
    p = sub.add_parser("check", help="validate a config file and echo the resolved values")
    p.add_argument("config")
    p = sub.add_parser("replay", help="recompute ledger margins offline")
    p.add_argument("ledger")
    p.add_argument("snapshots", nargs="?")
    sub.add_parser("version", help="print the version")
    return ap


def _cmd_run(cfg) -> int:
    grid, params, controls = cfg.grid(), cfg.params(), cfg.controls()
    u0 = initial_density(grid, cfg["init.kind"], **cfg.init_options())
    monitor = Monitor(grid, params, cfg.monitor_config())
    ledger_path = Path(cfg["output.ledger"])
    if ledger_path.parent != Path(""):
        ledger_path.parent.mkdir(parents=True, exist_ok=True)
    snap_dir = Path(cfg["output.snapshot_dir"]) if cfg["output.snapshot_dir"] else None
    if snap_dir is not None:
        snap_dir.mkdir(parents=True, exist_ok=True)
    period = cfg["output.snapshot_period"]
    last = {"path": None, "next": 0.0, "state": None}

    def observer(state, row):
        last["state"] = state
        if snap_dir is None:
            return
        if period == 0 or state.t >= last["next"] - 1e-9 * period:
            last["path"] = str(write_snapshot(state, grid, snap_dir))
            while period > 0 and last["next"] <= state.t + 1e-9 * period:
                last["next"] += period

    monitor.sink = monitor.ledger.open_stream(ledger_path)
    try:
        result = run(u0, params, grid, controls, monitor, cfg.guard(), observer)
    finally:
        monitor.sink.close()
    final = result.final
    if snap_dir is not None and last["state"] is not None and period > 0:
        path = snap_dir / f"u_{final.step:06d}.txt"
        if not path.exists():
            last["path"] = str(write_snapshot(final, grid, snap_dir))
    if result.abort is not None:
        print(result.abort._replace(snapshot=last["path"]).describe(), file=sys.stderr)
        return EXIT_ABORT
    print(
        f"completed {result.n_steps} steps to t={final.t:.6g}; "
        f"||u||_inf={float(abs(final.u).max()):.6g}; ledger {ledger_path}"
    )
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"clusterflow: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    if args.command == "version":
        print(f"clusterflow {__version__}")
        return EXIT_OK
    try:
        if args.command == "replay":
            report = replay(args.ledger, args.snapshots)
            print(report.summary())
            for line in report.failures[:20]:
                print("  " + line)
            return EXIT_OK if report.ok else EXIT_USAGE
        cfg = load_config(args.config)
        if args.command == "check":
            print(cfg.render(), end="")
            return EXIT_OK
        return _cmd_run(cfg)
    except (ConfigError, SnapshotError, OSError, ValueError) as exc:
        print(f"clusterflow: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SolverError as exc:
        print(f"clusterflow: solver failure: {exc} (last residual {exc.residual:.3e})", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
