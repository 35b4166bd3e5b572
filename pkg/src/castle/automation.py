"""Desktop-automation model: commands to timed click sequences.

The real channel drives the game through synthetic mouse/keyboard input,
so throughput is bounded by how fast the automation tool can click.  This
module turns a command into the input events the tool would emit and
predicts achievable command/byte rates for a given timing profile.  All
times are simulated milliseconds.
"""

from __future__ import annotations

from dataclasses import dataclass
from random import Random
from typing import Optional, Union

from .codec import ChannelConfig, GameCommand, Mode, rate_breakdown
from .mapgen import MapSpec

# Mean time one command takes with the stock setup (clicking every
# selected building plus the rally target).
DEFAULT_COMMAND_MS = 325.0

# Fastest click the automation tool is modeled to sustain; at one byte
# per click this caps the channel at a few KB/s.
MAX_CLICK_MS = 0.25

# Sentinel commands/second returned when a profile degenerates to a
# zero-length command cycle.
MAX_COMMANDS_PER_SECOND = 1e6

MULTI_SELECT_KEY = "shift"


@dataclass(frozen=True)
class ClickObject:
    object_id: int


@dataclass(frozen=True)
class ClickCell:
    x: int
    y: int


@dataclass(frozen=True)
class KeyHold:
    modifier: str


Action = Union[ClickObject, ClickCell, KeyHold]


@dataclass(frozen=True)
class InputEvent:
    at: float  # ms on the session clock
    action: Action


@dataclass(frozen=True)
class TimingProfile:
    """Input pacing knobs.

    per_event_ms           -- spacing between consecutive clicks
    inter_command_delay_ms -- extra idle time after each command
    jitter_ms              -- half-width of uniform jitter added to each
                              inter-event gap (clamped so gaps stay >= 0,
                              which keeps schedules monotone)
    """

    per_event_ms: float
    inter_command_delay_ms: float = 0.0
    jitter_ms: float = 0.0

    def __post_init__(self) -> None:
        if min(self.per_event_ms, self.inter_command_delay_ms, self.jitter_ms) < 0:
            raise ValueError("timing profile fields must be non-negative")

    @staticmethod
    def for_command_ms(
        target_ms: float,
        cfg: ChannelConfig,
        inter_command_delay_ms: float = 0.0,
        jitter_ms: float = 0.0,
    ) -> "TimingProfile":
        """Profile whose mean command duration equals ``target_ms``."""
        per_event = target_ms / mean_events_per_command(cfg)
        return TimingProfile(per_event, inter_command_delay_ms, jitter_ms)


@dataclass(frozen=True)
class CommandSchedule:
    events: tuple[InputEvent, ...]
    done_ms: float  # when the next command may start (includes the delay)


@dataclass(frozen=True)
class RateEstimate:
    commands_per_second: float
    bytes_per_second: float


def mean_events_per_command(cfg: ChannelConfig) -> float:
    """Expected clicks per command: E[r] object clicks plus a target click."""
    if cfg.mode is Mode.BYTE_CLICK:
        return 1.0
    return (cfg.k + 1) / 2 + 1


def schedule_command(
    cmd: GameCommand,
    map_spec: MapSpec,
    profile: TimingProfile,
    clock_ms: float,
    rng: Optional[Random] = None,
) -> CommandSchedule:
    """Lay out the input events for one command starting at ``clock_ms``.

    One click per selected object (multi-select modifier held across
    them) and, for targeted commands, one click on the target cell.
    Selection-only commands (byte-per-click) are a single click.
    """
    n = map_spec.n
    for oid in cmd.selected:
        if not 0 <= oid < n:
            raise ValueError(f"object id {oid} not on the map")
    actions: list[Action] = [ClickObject(oid) for oid in cmd.selected]
    if cmd.target is not None:
        actions.append(ClickCell(*cmd.target))
    events = []
    at = clock_ms
    for action in actions:
        gap = profile.per_event_ms
        if rng is not None and profile.jitter_ms > 0:
            gap = max(0.0, gap + rng.uniform(-profile.jitter_ms, profile.jitter_ms))
        at += gap
        events.append(InputEvent(at, action))
    return CommandSchedule(tuple(events), at + profile.inter_command_delay_ms)


def expected_rate(cfg: ChannelConfig, profile: TimingProfile) -> RateEstimate:
    """Predicted sustained command and payload rates.

    Uses the mean command duration (jitter averages out) and the
    floor-width bytes per command this codec actually transfers.
    """
    cycle_ms = (mean_events_per_command(cfg) * profile.per_event_ms
                + profile.inter_command_delay_ms)
    if cycle_ms <= 0:
        rate = MAX_COMMANDS_PER_SECOND
    else:
        rate = min(1000.0 / cycle_ms, MAX_COMMANDS_PER_SECOND)
    bytes_per_cmd = rate_breakdown(cfg).bytes_per_command
    return RateEstimate(rate, rate * bytes_per_cmd)
