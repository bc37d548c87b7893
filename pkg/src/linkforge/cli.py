"""Command-line entry point.

Exit codes: 0 success, 2 configuration or parse error, 3 I/O or environment error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import statistics
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

from .core import DOWN, UP, US_PER_S, Direction, mbps
from .harness import (
    Comparison, compare_direct_replay, format_completion_table, prepare_out, read_flow_logs, record_traces,
    resolve_scenario, run_scenario, save_run, saturator_ids, scenario_library, write_flow_index,
    write_flow_logs, write_metrics, write_traces,
)
from .loopback import LoopbackConfig, run_loopback
from .metrics import RunSummary
from .saturator import profile_params
from .scenario import ConfigError, parse_scenario
from .trace import TraceError, read_trace

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3

log = logging.getLogger("linkforge")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def resolve_seed(arg: Optional[int], default: int) -> int:
    """--seed wins, then LINKFORGE_SEED, then the scenario's own seed."""
    if arg is not None:
        return arg
    env = os.environ.get("LINKFORGE_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise CliError(EXIT_CONFIG, f"LINKFORGE_SEED must be an integer, got {env!r}") from None
    return default


def _load(ref: str, profile: Optional[str]):
    try:
        cfg, text = resolve_scenario(ref)
    except FileNotFoundError:
        raise CliError(EXIT_CONFIG, f"scenario not found: {ref}") from None
    except ConfigError as e:
        raise CliError(EXIT_CONFIG, "invalid scenario:\n  " + "\n  ".join(str(i) for i in e.issues)) from None
    if profile:
        cfg = cfg.with_profile(profile)
    return cfg, text


def _out_dir(args, cfg) -> Path:
    if args.out:
        return Path(args.out)
    return Path(cfg.output_dir or os.path.join("out", cfg.name))


def _seeds(args, cfg) -> list[int]:
    base = resolve_seed(args.seed, cfg.seed)
    if args.repeats < 1:
        raise CliError(EXIT_CONFIG, "--repeats must be >= 1")
    return [base + k for k in range(args.repeats)]


def _seed_dir(root: Path, seed: int, many: bool) -> Path:
    return root / f"seed_{seed}" if many else root


def write_aggregate(path: Path, per_seed: dict[int, RunSummary]) -> None:
    """Mean and standard deviation of each flow's throughput and loss across seeds."""
    keys = {}
    for seed, s in per_seed.items():
        for f in s.flows:
            keys.setdefault((f.flow_id, f.kind, f.dir.value), []).append(f)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("flow_id", "kind", "dir", "runs", "mean_bps", "std_bps", "mean_loss", "std_loss"))
        for (fid, kind, d), rows in sorted(keys.items()):
            bps = [r.mean_bps for r in rows]
            loss = [float(r.loss) for r in rows]
            sd = statistics.stdev if len(rows) > 1 else (lambda _: 0.0)
            w.writerow((fid, kind, d, len(rows), f"{statistics.mean(bps):.1f}", f"{sd(bps):.1f}",
                        f"{statistics.mean(loss):.6f}", f"{sd(loss):.6f}"))


def cmd_simulate(args) -> int:
    cfg, text = _load(args.config, args.profile)
    root = _out_dir(args, cfg)
    seeds = _seeds(args, cfg)
    summaries = {}
    for seed in seeds:
        run_cfg = cfg.with_seed(seed)
        result = run_scenario(run_cfg)
        summaries[seed] = save_run(result, run_cfg, _seed_dir(root, seed, len(seeds) > 1), text)
        print(f"seed {seed}: {result.events} events -> {_seed_dir(root, seed, len(seeds) > 1)}")
    if len(seeds) > 1:
        prepare_out(root)
        write_aggregate(root / "metrics" / "aggregate.csv", summaries)
    return EXIT_OK


def cmd_record(args) -> int:
    cfg, text = _load(args.config, args.profile)
    if not saturator_ids(cfg):
        raise CliError(EXIT_CONFIG, "record needs a saturator flow in the scenario")
    root = _out_dir(args, cfg)
    seeds = _seeds(args, cfg)
    for seed in seeds:
        run_cfg = cfg.with_seed(seed)
        out = _seed_dir(root, seed, len(seeds) > 1)
        result = run_scenario(run_cfg)
        save_run(result, run_cfg, out, text)
        try:
            traces = record_traces(result, run_cfg)
        except TraceError as e:
            raise CliError(EXIT_CONFIG, f"cannot build trace: {e}") from None
        paths = write_traces(traces, prepare_out(out)["traces"])
        for d, p in paths.items():
            print(f"seed {seed}: {d.value} trace, {len(traces[d])} opportunities -> {p}")
    return EXIT_OK


def _read_traces(args) -> dict[Direction, object]:
    paths = {}
    if args.traces:
        for d in (UP, DOWN):
            p = Path(args.traces) / f"{d.value}.trace"
            if p.exists():
                paths[d] = p
        if not paths:
            raise CliError(EXIT_CONFIG, f"no up.trace or down.trace in {args.traces}")
    if args.trace_up:
        paths[UP] = Path(args.trace_up)
    if args.trace_down:
        paths[DOWN] = Path(args.trace_down)
    if not paths:
        raise CliError(EXIT_CONFIG, "give --traces DIR or --trace-up/--trace-down")
    traces = {}
    for d, p in paths.items():
        try:
            traces[d] = read_trace(p)
        except FileNotFoundError:
            raise CliError(EXIT_CONFIG, f"trace file not found: {p}") from None
        except TraceError as e:
            raise CliError(EXIT_CONFIG, f"{p}: {e}") from None
        if len(traces[d]) == 0:
            raise CliError(EXIT_CONFIG, f"{p}: trace is empty")
    return traces


def write_replay_summary(path: Path, rows: list[Comparison]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("seed", "dir", "delivered", "queue_drops", "injected_losses", "wraps", "dark",
                    "network_s", "traces_s"))
        for r in rows:
            for d, delivered, drops, injected, wraps, dark in r.replay.summary_rows():
                w.writerow((r.seed, d, delivered, drops, injected, wraps, dark,
                            "" if r.direct_s is None else f"{r.direct_s:.6f}",
                            "" if r.replay_s is None else f"{r.replay_s:.6f}"))


def cmd_replay(args) -> int:
    cfg, text = _load(args.config, None)
    traces = _read_traces(args)
    if args.inject_loss is not None and not 0 <= args.inject_loss <= 1:
        raise CliError(EXIT_CONFIG, "--inject-loss must be in [0, 1]")
    if not (cfg.workload or any(f.type == "bulk" for f in cfg.flows)):
        raise CliError(EXIT_CONFIG, "replay needs a [workload ...] section or a bulk flow")
    root = _out_dir(args, cfg)
    seeds = _seeds(args, cfg)
    rows = []
    for seed in seeds:
        cmp = compare_direct_replay(cfg, traces, seed, args.inject_loss)
        rows.append(cmp)
        out = prepare_out(_seed_dir(root, seed, len(seeds) > 1))
        write_flow_logs(cmp.replay.flows, out["logs"])
        write_flow_index(cmp.replay.flows, out["logs"])
        (out["root"] / "scenario.cfg").write_text(text)
        write_metrics(cmp.replay.flows, replace(cfg.with_seed(seed), duration=cmp.replay.duration), out["metrics"],
                      {d: (s.queue_drops, s.injected_losses) for d, s in cmp.replay.stats.items()})
    prepare_out(root)
    write_replay_summary(root / "metrics" / "replay.csv", rows)
    print(format_completion_table(rows))
    return EXIT_OK


def cmd_analyze(args) -> int:
    run = Path(args.run_dir)
    try:
        text = (run / "scenario.cfg").read_text()
    except FileNotFoundError:
        raise CliError(EXIT_CONFIG, f"{run} has no scenario.cfg; not a run directory") from None
    try:
        cfg = parse_scenario(text, source=str(run / "scenario.cfg"))
        flows = read_flow_logs(run / "logs")
    except ConfigError as e:
        raise CliError(EXIT_CONFIG, str(e)) from None
    except (FileNotFoundError, ValueError) as e:
        raise CliError(EXIT_CONFIG, f"cannot read logs: {e}") from None
    out = prepare_out(Path(args.out) if args.out else run)
    summary = write_metrics(flows, cfg, out["metrics"], None, args.bin_ms)
    for f in summary.flows:
        print(f"flow {f.flow_id} {f.kind:9s} {f.dir.value:4s} {f.mean_bps / 1e6:8.2f} Mbps "
              f"loss {float(f.loss) * 100:6.2f}%")
    return EXIT_OK


def cmd_live_loopback(args) -> int:
    cfg, text = _load(args.config, args.profile)
    sats = [s for s in cfg.flows if s.type == "saturator"]
    if not sats:
        raise CliError(EXIT_CONFIG, "live-loopback needs a saturator flow in the scenario")
    spec = sats[0]
    duration = cfg.duration if args.duration is None else round(args.duration * US_PER_S)
    lcfg = LoopbackConfig(
        duration=duration,
        params=profile_params(spec.profile, cfg.medium.buffer(spec.direction)),
        packet_size=spec.packet_size,
        rate_bps=None if args.rate_mbps is None else mbps(args.rate_mbps),
        block_feedback=args.block_feedback,
        data_port=args.port,
        feedback_port=args.port + 1 if args.port else 0,
    )
    try:
        result = run_loopback(lcfg)
    except OSError as e:
        raise CliError(EXIT_IO, f"cannot bind loopback sockets: {e}") from None
    out = prepare_out(_out_dir(args, cfg))
    flows = {1: result.logs}
    write_flow_logs(flows, out["logs"])
    write_flow_index(flows, out["logs"])
    (out["root"] / "scenario.cfg").write_text(text)
    sent = sum(1 for r in result.logs.send_log if r.event == "DataSent")
    recv = sum(1 for r in result.logs.recv_log if r.event == "DataRecv")
    print(f"loopback: sent {sent}, received {recv}, watchdog resets {result.watchdog_resets}")
    return EXIT_OK


def cmd_scenario_list(args) -> int:
    try:
        lib = scenario_library()
    except ConfigError as e:
        raise CliError(EXIT_CONFIG, str(e)) from None
    for name, entry in lib.items():
        checks = ",".join(entry.expected_properties) or "-"
        print(f"{name:12s} {checks:40s} {entry.config.description}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="linkforge", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, profile=True, repeats=True):
        sp.add_argument("-o", "--out", help="output directory (default out/<scenario>)")
        sp.add_argument("--seed", type=int, help="overrides LINKFORGE_SEED and the scenario seed")
        if repeats:
            sp.add_argument("--repeats", type=int, default=1, help="run seeds seed..seed+N-1")
        if profile:
            sp.add_argument("--profile", choices=("cellular", "wifi"), help="saturator controller profile")

    sp = sub.add_parser("simulate", help="run a scenario on the simulated medium")
    sp.add_argument("config", help="scenario file or library name")
    common(sp)
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("record", help="simulate and convert saturator receiver logs to traces")
    sp.add_argument("config")
    common(sp)
    sp.set_defaults(fn=cmd_record)

    sp = sub.add_parser("replay", help="run a scenario's workload over recorded traces")
    sp.add_argument("config", help="scenario with a [workload ...] section")
    sp.add_argument("--traces", help="directory holding up.trace / down.trace")
    sp.add_argument("--trace-up")
    sp.add_argument("--trace-down")
    sp.add_argument("--inject-loss", type=float, help="drop probability per delivered packet")
    common(sp, profile=False)
    sp.set_defaults(fn=cmd_replay)

    sp = sub.add_parser("analyze", help="recompute metrics from a run directory's logs")
    sp.add_argument("run_dir")
    sp.add_argument("-o", "--out")
    sp.add_argument("--bin-ms", type=int, default=1000)
    sp.set_defaults(fn=cmd_analyze)

    sp = sub.add_parser("live-loopback", help="run the saturator over UDP sockets on localhost")
    sp.add_argument("config")
    sp.add_argument("--duration", type=float, help="seconds (default: scenario duration)")
    sp.add_argument("--rate-mbps", type=float, help="pace the sender")
    sp.add_argument("--block-feedback", action="store_true", help="receiver sends no ACKs")
    sp.add_argument("--port", type=int, default=0, help="data port; feedback uses port+1 (default: any)")
    common(sp, repeats=False)
    sp.set_defaults(fn=cmd_live_loopback)

    sp = sub.add_parser("scenario", help="scenario library")
    ssub = sp.add_subparsers(dest="action", required=True)
    lp = ssub.add_parser("list", help="list shipped scenarios")
    lp.set_defaults(fn=cmd_scenario_list)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
