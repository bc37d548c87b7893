"""Scenario runner: turns a ScenarioConfig into flow machines, runs it, and writes outputs.

Every pipeline writes the same layout under its output directory::

    logs/      flow<id>_send.csv, flow<id>_recv.csv
    traces/    up.trace, down.trace            (record)
    metrics/   drops.csv, series.csv, summary.csv, replay.csv
"""

from __future__ import annotations

import logging
import os
import random
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Optional

from .core import DOWN, UP, Direction, Flow, FlowLogs, Timestamp, US_PER_S, capacity_at
from .cross_traffic import AimdFlow, CbrFlow
from .logs import read_log, write_log
from .medium import RunResult, Simulator
from .metrics import (
    DEFAULT_BIN_MS, CompletionError, RunSummary, completion_time, series_rows, summarize, write_drops_csv,
    write_series_csv, write_summary_csv,
)
from .replay import ReplayConfig, ReplayResult, replay_run
from .saturator import FeedbackChannel, Mode, SaturatorFlow, profile_params
from .scenario import ConfigError, ConfigIssue, FlowSpec, ScenarioConfig, parse_scenario
from .trace import DeliveryTrace, log_to_trace, write_trace
from .workload import BulkTransferFlow

log = logging.getLogger(__name__)


def build_flows(specs, cfg: ScenarioConfig, first_id: int = 1) -> list[Flow]:
    """Instantiate flow machines; a spec with ``count = n`` yields n flows with consecutive ids."""
    flows: list[Flow] = []
    fid = first_id
    medium = cfg.medium
    for spec in specs:
        for _ in range(spec.count):
            flows.append(_build_one(spec, fid, cfg.seed, medium))
            fid += 1
    return flows


def _build_one(spec: FlowSpec, fid: int, seed: int, medium) -> Flow:
    feedback = FeedbackChannel(spec.feedback_delay, spec.feedback_loss, seed=seed * 1000 + fid)
    if spec.type == "saturator":
        mode = Mode(spec.mode)
        dirs = [spec.direction] if mode is Mode.ONE_WAY else [UP, DOWN]
        params = {d: profile_params(spec.profile, medium.buffer(d)) for d in dirs}
        return SaturatorFlow(fid, params, mode, spec.direction, spec.packet_size, feedback,
                             spec.feedback_via_link, spec.watchdog_timeout, spec.start,
                             spec.reverse_start, spec.stop)
    if spec.type == "cbr":
        # Independent streams do not start phase-locked; a seeded offset within one gap breaks ties.
        gap = spec.packet_size * 8 * US_PER_S // spec.rate_bps
        phase = random.Random(f"{seed}:cbr-phase:{fid}").randrange(max(1, gap))
        return CbrFlow(fid, spec.rate_bps, spec.packet_size, spec.direction, spec.start + phase, spec.stop)
    if spec.type == "aimd":
        return AimdFlow(fid, spec.rate_bps, spec.packet_size, spec.direction, spec.initial_cwnd,
                        spec.start, spec.stop, spec.rwnd_bytes)
    if spec.type == "bulk":
        return BulkTransferFlow(fid, spec.bytes, spec.window, spec.packet_size, spec.direction, feedback,
                                spec.start)
    raise ConfigError([ConfigIssue(f"flow.{spec.name}.type", f"unknown flow type {spec.type!r}")])


def flow_groups(cfg: ScenarioConfig, specs=None, first_id: int = 1) -> dict[str, list[int]]:
    """Flow ids belonging to each named spec."""
    out = {}
    fid = first_id
    for spec in (cfg.flows if specs is None else specs):
        out[spec.name] = list(range(fid, fid + spec.count))
        fid += spec.count
    return out


def run_scenario(cfg: ScenarioConfig, seed: Optional[int] = None, record_intervals: bool = False,
                 specs=None) -> RunResult:
    if seed is not None:
        cfg = cfg.with_seed(seed)
    sim = Simulator(cfg.medium, record_intervals=record_intervals)
    for flow in build_flows(cfg.flows if specs is None else specs, cfg):
        sim.attach(flow)
    return sim.run(cfg.duration)


def summarize_run(result: RunResult, cfg: ScenarioConfig, bin_ms: int = DEFAULT_BIN_MS) -> RunSummary:
    drops = {d: (result.medium[d].queue_drops, result.medium[d].wire_losses) for d in (UP, DOWN)}
    return summarize(result.flows, cfg.medium.capacity, cfg.duration, bin_ms, drops)


# --- output layout ---------------------------------------------------------------

def prepare_out(out_dir) -> dict[str, Path]:
    root = Path(out_dir)
    dirs = {name: root / name for name in ("logs", "traces", "metrics")}
    for p in dirs.values():
        p.mkdir(parents=True, exist_ok=True)
    dirs["root"] = root
    return dirs


def write_flow_logs(flows: dict[int, FlowLogs], logs_dir: Path) -> None:
    for fid, fl in flows.items():
        write_log(logs_dir / f"flow{fid}_send.csv", fl.send_log)
        write_log(logs_dir / f"flow{fid}_recv.csv", fl.recv_log)


def write_flow_index(flows: dict[int, FlowLogs], logs_dir: Path) -> None:
    with open(logs_dir / "flows.csv", "w") as f:
        f.write("flow_id,kind,dirs,start_us,total_bytes\n")
        for fid, fl in flows.items():
            dirs = "+".join(d.value for d in fl.directions)
            f.write(f"{fid},{fl.kind},{dirs},{fl.start},{fl.extra.get('total_bytes', '')}\n")


def read_flow_logs(logs_dir) -> dict[int, FlowLogs]:
    logs_dir = Path(logs_dir)
    out = {}
    with open(logs_dir / "flows.csv") as f:
        next(f)
        for line in f:
            fid, kind, dirs, start, total = line.rstrip("\n").split(",")
            fid = int(fid)
            extra = {"total_bytes": int(total)} if total else {}
            out[fid] = FlowLogs(fid, kind, read_log(logs_dir / f"flow{fid}_send.csv"),
                                read_log(logs_dir / f"flow{fid}_recv.csv"),
                                tuple(Direction(d) for d in dirs.split("+")), int(start), extra)
    return out


def write_metrics(flows: dict[int, FlowLogs], cfg: ScenarioConfig, metrics_dir: Path,
                  drops: Optional[dict] = None, bin_ms: int = DEFAULT_BIN_MS) -> RunSummary:
    summary = summarize(flows, cfg.medium.capacity, cfg.duration, bin_ms, drops)
    write_series_csv(metrics_dir / "series.csv", series_rows(flows, cfg.medium.capacity, cfg.duration, bin_ms))
    write_summary_csv(metrics_dir / "summary.csv", summary)
    if drops is not None:
        write_drops_csv(metrics_dir / "drops.csv", drops)
    return summary


def save_run(result: RunResult, cfg: ScenarioConfig, out_dir, scenario_text: Optional[str] = None) -> RunSummary:
    dirs = prepare_out(out_dir)
    write_flow_logs(result.flows, dirs["logs"])
    write_flow_index(result.flows, dirs["logs"])
    if scenario_text is not None:
        (dirs["root"] / "scenario.cfg").write_text(scenario_text)
    drops = {d: (result.medium[d].queue_drops, result.medium[d].wire_losses) for d in (UP, DOWN)}
    return write_metrics(result.flows, cfg, dirs["metrics"], drops)


# --- record / replay -------------------------------------------------------------

def saturator_ids(cfg: ScenarioConfig) -> list[int]:
    groups = flow_groups(cfg)
    return [fid for spec in cfg.flows if spec.type == "saturator" for fid in groups[spec.name]]


def record_traces(result: RunResult, cfg: ScenarioConfig) -> dict[Direction, DeliveryTrace]:
    """Per-direction traces from the receiver logs of every saturator flow in the run."""
    ids = saturator_ids(cfg)
    if not ids:
        raise ConfigError([ConfigIssue("flows", "recording needs a saturator flow")])
    traces = {}
    for d in (UP, DOWN):
        recs = [r for fid in ids if d in result.flows[fid].directions for r in result.flows[fid].recv_log]
        if any(d in result.flows[fid].directions for fid in ids):
            traces[d] = log_to_trace(sorted(recs, key=lambda r: r.t), d)
    return traces


def write_traces(traces: dict[Direction, DeliveryTrace], traces_dir: Path) -> dict[Direction, Path]:
    paths = {}
    for d, t in traces.items():
        paths[d] = traces_dir / f"{d.value}.trace"
        write_trace(t, paths[d])
    return paths


def replay_config(cfg: ScenarioConfig, traces: dict[Direction, DeliveryTrace], seed: Optional[int] = None,
                  inject_loss: Optional[float] = None) -> ReplayConfig:
    r = cfg.replay
    return ReplayConfig(trace_up=traces.get(UP), trace_down=traces.get(DOWN), prop_delay=r.prop_delay,
                        queue_limit=r.queue_limit,
                        inject_loss=r.inject_loss if inject_loss is None else inject_loss,
                        seed=cfg.seed if seed is None else seed, wrap=r.wrap)


def workload_specs(cfg: ScenarioConfig):
    specs = cfg.workload or tuple(s for s in cfg.flows if s.type == "bulk")
    if not specs:
        raise ConfigError([ConfigIssue("workload", "no bulk workload to replay")])
    return specs


@dataclass
class Comparison:
    """One row of the Network-vs-Traces completion table."""

    seed: int
    direct_s: Optional[float]
    replay_s: Optional[float]
    direct: RunResult
    replay: ReplayResult


def _completion_s(flows: dict[int, FlowLogs]) -> Optional[float]:
    worst = None
    for fl in flows.values():
        if fl.kind != "bulk":
            continue
        try:
            t = completion_time(fl.recv_log, fl.extra["total_bytes"], fl.start)
        except CompletionError:
            return None
        worst = t if worst is None else max(worst, t)
    return None if worst is None else worst / US_PER_S


def compare_direct_replay(cfg: ScenarioConfig, traces: dict[Direction, DeliveryTrace], seed: Optional[int] = None,
                          inject_loss: Optional[float] = None) -> Comparison:
    """Run the workload once alone on the simulated medium and once over the replayed traces.

    Both runs last ``cfg.replay.horizon``. The direct run leaves out cross traffic: a
    windowed transfer facing the scenario's UDP flood can starve outright, which would leave
    nothing to compare against.
    """
    seed = cfg.seed if seed is None else seed
    horizon = cfg.replay.horizon
    live = replace(cfg.with_seed(seed), duration=horizon)
    specs = workload_specs(cfg)
    direct = run_scenario(live, specs=specs)
    rcfg = replay_config(cfg, traces, seed, inject_loss)
    replayed = replay_run(rcfg, build_flows(specs, live), horizon)
    return Comparison(seed, _completion_s(direct.flows), _completion_s(replayed.flows), direct, replayed)


def format_completion_table(rows: list[Comparison]) -> str:
    lines = ["Network (s)  Traces (s)"]
    for r in rows:
        a = "n/a" if r.direct_s is None else f"{r.direct_s:.2f}"
        b = "n/a" if r.replay_s is None else f"{r.replay_s:.2f}"
        lines.append(f"{a:>11}  {b:>10}")
    return "\n".join(lines)


def size_transfer_for(cfg: ScenarioConfig, seconds_target: float = 0.4, start: Timestamp = 0) -> int:
    """Bytes a transfer needs to take about ``seconds_target`` at the capacity in force at ``start``."""
    return int(capacity_at(cfg.medium.capacity, start) * seconds_target / 8)


# --- shipped scenario library ------------------------------------------------------

@dataclass(frozen=True)
class ScenarioLibraryEntry:
    name: str
    config: ScenarioConfig
    expected_properties: tuple[str, ...]
    path: Path


def _library_dir():
    return resources.files("linkforge") / "scenarios"


def scenario_library() -> dict[str, ScenarioLibraryEntry]:
    out = {}
    for res in sorted(_library_dir().iterdir(), key=lambda p: p.name):
        if not res.name.endswith(".cfg"):
            continue
        text = res.read_text()
        cfg = parse_scenario(text, source=res.name)
        if cfg.name in out:
            raise ValueError(f"duplicate scenario name {cfg.name}")
        out[cfg.name] = ScenarioLibraryEntry(cfg.name, cfg, cfg.checks, Path(str(res)))
    return out


def resolve_scenario(ref: str) -> tuple[ScenarioConfig, str]:
    """Load a scenario from a file path or a library name. Returns (config, source text)."""
    if os.path.exists(ref):
        text = Path(ref).read_text()
        return parse_scenario(text, source=ref), text
    lib = _library_dir() / f"{ref}.cfg"
    if lib.is_file():
        text = lib.read_text()
        return parse_scenario(text, source=lib.name), text
    raise FileNotFoundError(ref)
