"""Deterministic lockstep session engine with encrypted reliable links."""

from .clock import EventLoop, RealtimeLoop
from .engine import (
    ChannelClosedError,
    CovertContext,
    HostNode,
    ClientNode,
    JoinRejectedError,
    JoinTimeoutError,
    LockstepNetwork,
    NodeStats,
    ReliableLink,
    SessionConfig,
    SessionError,
    SessionHandle,
    SessionLostError,
    Transport,
    knock_verify,
    random_legal_command,
)
from .loss import InProcessNet, LossModel, TraceRecorder, UdpTransport
from .wire import DEFAULT_PORT, Packet, WireFormatError, pack_packet, parse_packet
from . import crypto, wire

__all__ = [
    "ChannelClosedError",
    "ClientNode",
    "CovertContext",
    "DEFAULT_PORT",
    "EventLoop",
    "HostNode",
    "InProcessNet",
    "JoinRejectedError",
    "JoinTimeoutError",
    "LockstepNetwork",
    "LossModel",
    "NodeStats",
    "Packet",
    "RealtimeLoop",
    "ReliableLink",
    "SessionConfig",
    "SessionError",
    "SessionHandle",
    "SessionLostError",
    "TraceRecorder",
    "Transport",
    "UdpTransport",
    "WireFormatError",
    "crypto",
    "knock_verify",
    "pack_packet",
    "parse_packet",
    "random_legal_command",
    "wire",
]
