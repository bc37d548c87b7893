"""Scenario files and validation.

Scenario files are INI-style (``configparser``)::

    [scenario]
    name = fig2
    duration_s = 60
    seed = 1
    checks = solo_saturation          ; named acceptance checks, comma-separated

    [medium]
    profile = symmetric              ; symmetric | asymmetric-ap
    capacity_mbps = 0:15 12:40 24:10 36:30 48:15
    loss_pct = 0:0.3 12:0.5          ; optional, default lossless
    prop_delay_ms = 1
    buffer_up = 1000                 ; packets, overrides the profile
    buffer_down = 64
    weight_up = 1
    weight_down = 1
    switch_overhead_us = 0

    [flow sat]                       ; one section per flow group, in order
    type = saturator                 ; saturator | cbr | aimd | bulk
    mode = one-way                   ; saturator: one-way | two-way
    profile = cellular               ; saturator: cellular | wifi

    [workload file]                  ; flows used only by `replay` and its direct run
    type = bulk
    bytes = 1500000

    [replay]
    prop_delay_ms = 20
    queue_limit = 1000
    inject_loss_pct = 0
    wrap = true
    horizon_s = 60                   ; workload run length for replay and its direct run

Schedules are whitespace-separated ``start_s:value`` pairs.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Optional

from .core import (
    DEFAULT_PACKET_BYTES, MAX_PACKET_BYTES, UP, CapacitySchedule, Direction, LossSchedule, ScheduleError,
    Timestamp, US_PER_S, mbps, millis, schedule_problems, seconds,
)
from .medium import MEDIUM_PROFILES, MediumConfig

FLOW_TYPES = ("saturator", "cbr", "aimd", "bulk")
SATURATOR_PROFILES = ("cellular", "wifi")


@dataclass(frozen=True)
class ConfigIssue:
    path: str
    message: str

    def __str__(self):
        return f"{self.path}: {self.message}"


class ConfigError(ValueError):
    def __init__(self, issues: list[ConfigIssue]):
        self.issues = list(issues)
        super().__init__("; ".join(str(i) for i in self.issues))


@dataclass(frozen=True)
class FlowSpec:
    name: str
    type: str
    count: int = 1
    mode: str = "one-way"
    direction: Direction = UP
    profile: str = "cellular"
    rate_bps: Optional[int] = None  # cbr rate, aimd cap
    packet_size: int = DEFAULT_PACKET_BYTES
    start: Timestamp = 0
    stop: Optional[Timestamp] = None
    reverse_start: Optional[Timestamp] = None
    bytes: int = 0
    window: int = 256
    initial_cwnd: int = 2
    rwnd_bytes: int = 65_535
    feedback_delay: Timestamp = 1000
    feedback_loss: float = 0.0
    feedback_via_link: bool = False
    watchdog_timeout: Timestamp = US_PER_S


@dataclass(frozen=True)
class ReplaySpec:
    prop_delay: Timestamp = 20_000
    queue_limit: int = 1000
    inject_loss: float = 0.0
    wrap: bool = True
    horizon: Timestamp = 60 * US_PER_S  # how long workloads may run, independent of record length


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    duration: Timestamp
    seed: int
    medium: MediumConfig
    flows: tuple[FlowSpec, ...]
    workload: tuple[FlowSpec, ...] = ()
    replay: ReplaySpec = field(default_factory=ReplaySpec)
    description: str = ""
    output_dir: Optional[str] = None
    medium_profile: str = "symmetric"
    checks: tuple[str, ...] = ()

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, seed=seed, medium=replace(self.medium, seed=seed))

    def with_profile(self, profile: str) -> "ScenarioConfig":
        flows = tuple(replace(f, profile=profile) if f.type == "saturator" else f for f in self.flows)
        return replace(self, flows=flows)


def _flow_issues(f: FlowSpec, path: str) -> list[ConfigIssue]:
    out = []

    def bad(key, msg):
        out.append(ConfigIssue(f"{path}.{key}", msg))

    if f.type not in FLOW_TYPES:
        bad("type", f"must be one of {', '.join(FLOW_TYPES)}")
        return out
    if f.count < 1:
        bad("count", "must be >= 1")
    if not 1 <= f.packet_size <= MAX_PACKET_BYTES:
        bad("packet_size", f"must be in [1, {MAX_PACKET_BYTES}]")
    if f.start < 0:
        bad("start", "must be >= 0")
    if f.stop is not None and f.stop <= f.start:
        bad("stop", "must be after start")
    if f.type == "saturator":
        if f.mode not in ("one-way", "two-way"):
            bad("mode", "must be one-way or two-way")
        if f.profile not in SATURATOR_PROFILES:
            bad("profile", "must be cellular or wifi")
        if f.watchdog_timeout <= 0:
            bad("watchdog_timeout", "must be positive")
        if not 0 <= f.feedback_loss <= 1:
            bad("feedback_loss", "must be in [0, 1]")
        if f.feedback_delay < 0:
            bad("feedback_delay", "must be >= 0")
    if f.type == "cbr" and (f.rate_bps is None or f.rate_bps <= 0):
        bad("rate_mbps", "cbr flows need a positive rate")
    if f.type == "aimd" and f.rate_bps is not None and f.rate_bps <= 0:
        bad("rate_mbps", "rate cap must be positive")
    if f.type == "aimd" and f.initial_cwnd < 1:
        bad("initial_cwnd", "must be >= 1")
    if f.type == "aimd" and f.rwnd_bytes < f.packet_size:
        bad("rwnd_bytes", "must hold at least one packet")
    if f.type == "bulk":
        if f.bytes < 0:
            bad("bytes", "must be >= 0")
        if f.window < 1:
            bad("window", "must be >= 1")
    return out


def scenario_issues(c: ScenarioConfig) -> list[ConfigIssue]:
    issues = []
    if c.duration <= 0:
        issues.append(ConfigIssue("scenario.duration", "duration must be positive"))
    if not c.flows:
        issues.append(ConfigIssue("flows", "at least one flow is required"))
    m = c.medium
    for key, steps in (("capacity", m.capacity.steps), ("loss", m.loss.steps)):
        for msg in schedule_problems([t for t, _ in steps]):
            issues.append(ConfigIssue(f"medium.{key}", msg))
    if any(r <= 0 for _, r in m.capacity.steps):
        issues.append(ConfigIssue("medium.capacity", "rates must be positive"))
    if any(not 0 <= p <= 1 for _, p in m.loss.steps):
        issues.append(ConfigIssue("medium.loss", "probabilities must be in [0, 1]"))
    for key in ("buffer_up", "buffer_down", "weight_up", "weight_down"):
        if getattr(m, key) < 1:
            issues.append(ConfigIssue(f"medium.{key}", "must be >= 1"))
    names = set()
    for group, specs in (("flow", c.flows), ("workload", c.workload)):
        for f in specs:
            path = f"{group}.{f.name}"
            if path in names:
                issues.append(ConfigIssue(path, "duplicate name"))
            names.add(path)
            issues.extend(_flow_issues(f, path))
    r = c.replay
    if r.queue_limit < 1:
        issues.append(ConfigIssue("replay.queue_limit", "must be >= 1"))
    if not 0 <= r.inject_loss <= 1:
        issues.append(ConfigIssue("replay.inject_loss", "must be in [0, 1]"))
    if r.horizon <= 0:
        issues.append(ConfigIssue("replay.horizon", "must be positive"))
    return issues


def validate_scenario(c: ScenarioConfig) -> ScenarioConfig:
    """Return ``c`` unchanged if valid, else raise ConfigError listing every problem."""
    issues = scenario_issues(c)
    if issues:
        raise ConfigError(issues)
    return c


def parse_schedule(text: str) -> list[tuple[Timestamp, Fraction]]:
    steps = []
    for tok in text.split():
        start, sep, value = tok.partition(":")
        if not sep:
            raise ValueError(f"expected start_s:value, got {tok!r}")
        steps.append((seconds(start), Fraction(value)))
    return steps


_BOOL = {"true": True, "yes": True, "on": True, "1": True, "false": False, "no": False, "off": False, "0": False}


class _Reader:
    """Pulls typed values out of a section and records every failure with its path."""

    def __init__(self, section, path: str, issues: list[ConfigIssue]):
        self.section = section
        self.path = path
        self.issues = issues
        self.used = set()

    def get(self, key, conv, default=None):
        self.used.add(key)
        if key not in self.section:
            return default
        raw = self.section[key].strip()
        try:
            return conv(raw)
        except (ValueError, ArithmeticError, KeyError) as e:
            self.issues.append(ConfigIssue(f"{self.path}.{key}", f"invalid value {raw!r}: {e}"))
            return default

    def unknown(self):
        for key in self.section:
            if key not in self.used:
                self.issues.append(ConfigIssue(f"{self.path}.{key}", "unknown key"))


def _boolean(s: str) -> bool:
    return _BOOL[s.lower()]


def _prob_pct(s: str) -> float:
    return float(Fraction(s) / 100)


def _parse_flow(name: str, sec, path: str, issues) -> FlowSpec:
    r = _Reader(sec, path, issues)
    spec = FlowSpec(
        name=name,
        type=r.get("type", str.lower, ""),
        count=r.get("count", int, 1),
        mode=r.get("mode", str.lower, "one-way"),
        direction=r.get("direction", Direction.parse, UP),
        profile=r.get("profile", str.lower, "cellular"),
        rate_bps=r.get("rate_mbps", mbps, None),
        packet_size=r.get("packet_size", int, DEFAULT_PACKET_BYTES),
        start=r.get("start_s", seconds, 0),
        stop=r.get("stop_s", seconds, None),
        reverse_start=r.get("reverse_start_s", seconds, None),
        bytes=r.get("bytes", int, 0),
        window=r.get("window", int, 256),
        initial_cwnd=r.get("initial_cwnd", int, 2),
        rwnd_bytes=r.get("rwnd_bytes", int, 65_535),
        feedback_delay=r.get("feedback_delay_ms", millis, 1000),
        feedback_loss=r.get("feedback_loss_pct", _prob_pct, 0.0),
        feedback_via_link=r.get("feedback_via_link", _boolean, False),
        watchdog_timeout=r.get("watchdog_s", seconds, US_PER_S),
    )
    r.unknown()
    return spec


def parse_scenario(text: str, source: str = "<string>") -> ScenarioConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError([ConfigIssue("file", str(e))]) from None
    issues: list[ConfigIssue] = []

    known = {"scenario", "medium", "replay"}
    for sec in cp.sections():
        if sec not in known and not sec.startswith(("flow ", "workload ")):
            issues.append(ConfigIssue(sec, "unknown section"))

    if "scenario" not in cp:
        issues.append(ConfigIssue("scenario", "missing section"))
    sc = _Reader(cp["scenario"] if "scenario" in cp else {}, "scenario", issues)
    name = sc.get("name", str, os.path.splitext(os.path.basename(source))[0])
    description = sc.get("description", str, "")
    duration = sc.get("duration_s", seconds, 60 * US_PER_S)
    seed = sc.get("seed", int, 1)
    output_dir = sc.get("output_dir", str, None)
    checks = sc.get("checks", lambda v: tuple(c.strip() for c in v.split(",") if c.strip()), ())
    if "scenario" in cp:
        sc.unknown()

    if "medium" not in cp:
        issues.append(ConfigIssue("medium", "missing section"))
    md = _Reader(cp["medium"] if "medium" in cp else {}, "medium", issues)
    profile = md.get("profile", str.lower, "symmetric")
    base = MEDIUM_PROFILES.get(profile)
    if base is None:
        issues.append(ConfigIssue("medium.profile", f"must be one of {', '.join(MEDIUM_PROFILES)}"))
        base = MEDIUM_PROFILES["symmetric"]

    def schedule(key, cls, scale):
        steps = md.get(key, parse_schedule, None)
        if steps is None:
            return None
        steps = [(t, scale(v)) for t, v in steps]
        try:
            return cls(tuple(steps))
        except ScheduleError as e:
            for msg in str(e).split("; "):
                issues.append(ConfigIssue(f"medium.{key.split('_')[0]}", msg))
            return None

    capacity = schedule("capacity_mbps", CapacitySchedule, lambda v: int(v * 1_000_000))
    if capacity is None and "capacity_mbps" not in md.section:
        issues.append(ConfigIssue("medium.capacity", "missing capacity_mbps"))
    loss = schedule("loss_pct", LossSchedule, lambda v: v / 100) or LossSchedule.none()
    medium_kwargs = dict(
        prop_delay=md.get("prop_delay_ms", millis, 1000),
        buffer_up=md.get("buffer_up", int, base["buffer_up"]),
        buffer_down=md.get("buffer_down", int, base["buffer_down"]),
        weight_up=md.get("weight_up", int, base.get("weight_up", 1)),
        weight_down=md.get("weight_down", int, base.get("weight_down", 1)),
        switch_overhead=md.get("switch_overhead_us", int, 0),
    )
    md.unknown()

    flows, workload = [], []
    for sec in cp.sections():
        for prefix, bucket in (("flow ", flows), ("workload ", workload)):
            if sec.startswith(prefix):
                fname = sec[len(prefix):].strip()
                bucket.append(_parse_flow(fname, cp[sec], f"{prefix.strip()}.{fname}", issues))

    rp = _Reader(cp["replay"] if "replay" in cp else {}, "replay", issues)
    replay = ReplaySpec(
        prop_delay=rp.get("prop_delay_ms", millis, 20_000),
        queue_limit=rp.get("queue_limit", int, 1000),
        inject_loss=rp.get("inject_loss_pct", _prob_pct, 0.0),
        wrap=rp.get("wrap", _boolean, True),
        horizon=rp.get("horizon_s", seconds, 60 * US_PER_S),
    )
    if "replay" in cp:
        rp.unknown()

    for key in ("buffer_up", "buffer_down", "weight_up", "weight_down"):
        if medium_kwargs[key] < 1:
            issues.append(ConfigIssue(f"medium.{key}", "must be >= 1"))
    if medium_kwargs["prop_delay"] < 0 or medium_kwargs["switch_overhead"] < 0:
        issues.append(ConfigIssue("medium", "delays must be >= 0"))
    if duration is not None and duration <= 0:
        issues.append(ConfigIssue("scenario.duration", "duration must be positive"))
    if not flows:
        issues.append(ConfigIssue("flows", "at least one flow is required"))
    if issues or capacity is None:
        raise ConfigError(issues)

    cfg = ScenarioConfig(
        name=name, duration=duration, seed=seed,
        medium=MediumConfig(capacity=capacity, loss=loss, seed=seed, **medium_kwargs),
        flows=tuple(flows), workload=tuple(workload), replay=replay,
        description=description, output_dir=output_dir, medium_profile=profile, checks=checks,
    )
    return validate_scenario(cfg)


def load_scenario(path: str | os.PathLike) -> ScenarioConfig:
    with open(path) as f:
        return parse_scenario(f.read(), source=str(path))
