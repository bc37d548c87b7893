"""Record-and-replay toolkit for wireless links.

A windowed saturator records what a link delivers, the trace codec turns receiver
logs into millisecond delivery-opportunity traces, and the replay shell plays them
back. A deterministic half-duplex medium simulator stands in for the real link.
"""

from .core import (
    DOWN, UP, CapacitySchedule, Direction, LossSchedule, Packet, capacity_at, loss_at,
    step_capacity_schedule, step_loss_schedule,
)
from .medium import MediumConfig, Simulator
from .replay import ReplayConfig, ReplayShell, replay_run
from .scenario import ConfigError, ScenarioConfig, load_scenario, parse_scenario, validate_scenario
from .trace import DeliveryTrace, parse_trace, format_trace

__version__ = "0.1.0"
