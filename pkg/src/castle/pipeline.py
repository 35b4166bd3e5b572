"""End-to-end wiring: full covert transfers and experiment runs.

A transfer travels the whole path: map generation, frame encoding into
game commands, automation-paced submission, the lockstep session over a
lossy datagram channel, replay logging, tailing, and decoding on the far
side.  Runs are deterministic given a RunConfig plus seed, and every
report echoes its configuration.
"""

from __future__ import annotations

import math
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

from . import trafficlab
from .automation import DEFAULT_COMMAND_MS, TimingProfile, expected_rate
from .codec import ChannelConfig, Mode, rate_breakdown
from .mapgen import MapSpec, generate_map, load_map
from .netsim import (
    CovertContext,
    HostNode,
    ClientNode,
    LockstepNetwork,
    LossModel,
    RealtimeLoop,
    SessionConfig,
    SessionHandle,
    TraceRecorder,
    Transport,
    UdpTransport,
    knock_verify,
)
from .netsim import crypto
from .session import CovertPeer, TransferError, drive

DEFAULT_PASSWORD = "rally-point"


@dataclass(frozen=True)
class RunConfig:
    """Everything an experiment needs; mirrors the CLI surface."""

    mode: str = "comb"  # comb | byte
    n: int = 1600
    k: int = 200
    region_bits: int = 16
    m_bits: int = 8
    grid: Optional[tuple[int, int]] = None
    kind: str = "building"
    map_path: Optional[str] = None

    per_event_ms: Optional[float] = None  # None: derive from command_ms
    command_ms: float = DEFAULT_COMMAND_MS
    delay_ms: float = 0.0  # added inter-command delay
    jitter_ms: float = 0.0

    drop: float = 0.0
    reorder: float = 0.0
    duplicate: float = 0.0
    net_delay_ms: float = 5.0

    tick_ms: float = 100.0
    password: Optional[str] = DEFAULT_PASSWORD
    require_knock: bool = False
    kdf_cost: int = crypto.DEFAULT_KDF_COST
    seed: int = 0
    transport: str = "inprocess"  # inprocess | loopback
    port: int = 35701

    def channel_config(self, map_spec: MapSpec) -> ChannelConfig:
        region = map_spec.rally_region
        mode = Mode.BYTE_CLICK if self.mode == "byte" else Mode.COMBINATORIAL
        return ChannelConfig(
            n=map_spec.n,
            k=min(self.k, map_spec.n),
            x_max=region.x_max,
            y_max=region.y_max,
            mode=mode,
            m_bits=self.m_bits,
        )

    def map_spec(self) -> MapSpec:
        if self.map_path:
            return load_map(self.map_path)
        n = self.n if self.mode != "byte" else max(self.n, 1 << self.m_bits)
        grid = self.grid if self.grid else (64, max(1, math.ceil(n / 64)))
        return generate_map(n, grid, self.region_bits, kind=self.kind)

    def timing_profile(self, channel: ChannelConfig) -> TimingProfile:
        if self.per_event_ms is not None:
            return TimingProfile(self.per_event_ms, self.delay_ms, self.jitter_ms)
        return TimingProfile.for_command_ms(self.command_ms, channel,
                                            self.delay_ms, self.jitter_ms)

    def session_config(self) -> SessionConfig:
        return SessionConfig(
            tick_ms=self.tick_ms,
            players=2,
            transport=(Transport.DATAGRAM_LOOPBACK if self.transport == "loopback"
                       else Transport.IN_PROCESS),
            password=self.password,
            loss=LossModel(
                drop_prob=self.drop,
                delay_ms=self.net_delay_ms,
                reorder_prob=self.reorder,
                duplicate_prob=self.duplicate,
            ),
            require_knock=self.require_knock,
            kdf_cost=self.kdf_cost,
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TransferReport:
    ok: bool
    payload_bytes: int
    sim_seconds: float
    wall_seconds: float
    goodput_bps: float  # covert payload bytes per second
    commands: int
    retransmits: int
    auth_failures: int
    packets_sent: int
    packets_dropped: int
    bytes_delivered: int
    config: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [
            f"ok           : {self.ok}",
            f"payload      : {self.payload_bytes} B",
            f"sim time     : {self.sim_seconds:.3f} s",
            f"wall time    : {self.wall_seconds:.3f} s",
            f"goodput      : {self.goodput_bps:.1f} B/s",
            f"commands     : {self.commands}",
            f"retransmits  : {self.retransmits}",
            f"auth failures: {self.auth_failures}",
            f"packets sent : {self.packets_sent}",
            f"packets lost : {self.packets_dropped}",
        ]
        cfg = ", ".join(f"{k}={v}" for k, v in sorted(self.config.items()))
        return "\n".join(lines) + f"\nconfig       : {cfg}"

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items()}
        return d


def _expected_duration_ms(run: RunConfig, channel: ChannelConfig,
                          profile: TimingProfile, payload_len: int) -> float:
    est = expected_rate(channel, profile)
    if est.bytes_per_second <= 0:
        return 60000.0
    return (payload_len + 64) / est.bytes_per_second * 1000.0


def run_transfer(
    run: RunConfig,
    payload: bytes,
    trace_out=None,
    recorder: Optional[TraceRecorder] = None,
    workdir=None,
) -> TransferReport:
    """Transfer ``payload`` host-to-client through the full stack."""
    if run.transport == "loopback":
        return _run_transfer_loopback(run, payload)
    map_spec = run.map_spec()
    channel = run.channel_config(map_spec)
    profile = run.timing_profile(channel)
    covert = CovertContext(channel, map_spec)
    trace = recorder if recorder is not None else TraceRecorder()
    net = LockstepNetwork(run.session_config(), seed=run.seed, covert=covert,
                          trace=trace, replay_dir=workdir)
    t_wall = time.perf_counter()
    client = net.join(1, run.password)
    sender = CovertPeer(net.host, covert, profile, net.loop, seed=run.seed)
    receiver = CovertPeer(client, covert, profile, net.loop, seed=run.seed + 1)
    if run.require_knock:
        receiver.send_knock(run.password, net.cfg.salt, run.kdf_cost)
        knock_verify(net, 1)
    drive(net.loop, lambda: net.host.covert_clear and client.covert_clear,
          timeout_ms=60000.0)

    t0 = net.loop.now_ms
    sender.send_message(1, payload)
    budget = max(120000.0, 5 * _expected_duration_ms(run, channel, profile,
                                                     len(payload)))
    try:
        _stream, got = receiver.recv_message(timeout_ms=budget)
        ok = got == payload
        delivered = len(got)
    except (TransferError, TimeoutError):
        ok = False
        delivered = 0
    t1 = net.loop.now_ms
    elapsed_s = max((t1 - t0) / 1000.0, 1e-9)

    if trace_out is not None:
        trafficlab.save_trace(
            trafficlab.from_recorder_records(trace.records, label="transfer"),
            trace_out,
        )
    report = TransferReport(
        ok=ok,
        payload_bytes=len(payload),
        sim_seconds=elapsed_s,
        wall_seconds=time.perf_counter() - t_wall,
        goodput_bps=len(payload) / elapsed_s,
        commands=sender.sender.commands_sent,
        retransmits=(net.host.stats.link.retransmits
                     + client.stats.link.retransmits),
        auth_failures=(net.host.stats.link.auth_failures
                       + client.stats.link.auth_failures),
        packets_sent=net.net.stats.sent,
        packets_dropped=net.net.stats.dropped,
        bytes_delivered=delivered,
        config=run.to_dict(),
    )
    receiver.close()
    sender.handle.close()
    return report


def run_transfer_traced(
    run: RunConfig, payload: bytes
) -> tuple[TransferReport, trafficlab.PacketTrace]:
    recorder = TraceRecorder()
    report = run_transfer(run, payload, recorder=recorder)
    label = f"n{run.n}k{run.k}d{run.delay_ms}s{run.seed}"
    return report, trafficlab.from_recorder_records(recorder.records, label=label)


def collect_trace(run: RunConfig, payload: bytes,
                  label: str = "") -> trafficlab.PacketTrace:
    """Run a transfer and return its wire trace for analysis."""
    _report, trace = run_transfer_traced(run, payload)
    if label:
        trace = trafficlab.PacketTrace(trace.records, label=label)
    return trace


def decoy_session_trace(run: RunConfig, duration_ms: float,
                        label: str = "decoy") -> trafficlab.PacketTrace:
    """A session that never goes covert-clear: pure AI traffic."""
    map_spec = run.map_spec()
    channel = run.channel_config(map_spec)
    covert = CovertContext(channel, map_spec)
    trace = TraceRecorder()
    net = LockstepNetwork(run.session_config(), seed=run.seed, covert=covert,
                          trace=trace)
    observer = net.join(1, "not-the-password")
    net.run_for(duration_ms)
    observer.close()
    net.host.close()
    return trafficlab.from_recorder_records(trace.records, label=label)


# -- loopback (real UDP) -----------------------------------------------------


class LoopbackPeer:
    """One endpoint of a real-socket session on 127.0.0.1."""

    def __init__(
        self,
        role: str,  # "host" | "client"
        run: RunConfig,
        bind_port: int,
        host_port: Optional[int] = None,
        player_id: Optional[int] = None,
        replay_dir=None,
        password: Optional[str] = None,
    ):
        self.run = run
        self.map_spec = run.map_spec()
        self.channel = run.channel_config(self.map_spec)
        self.profile = run.timing_profile(self.channel)
        self.covert = CovertContext(self.channel, self.map_spec)
        self.loop = RealtimeLoop()
        self.transport = UdpTransport(self.loop, ("127.0.0.1", bind_port))
        self.replay_dir = replay_dir or tempfile.mkdtemp(prefix="castle-loopback-")
        cfg = replace(run.session_config(), transport=Transport.DATAGRAM_LOOPBACK)
        pid = player_id if player_id is not None else (0 if role == "host" else 1)
        path = os.path.join(self.replay_dir, f"player{pid}.creplay")
        from random import Random

        if role == "host":
            self.node = HostNode(self.loop, self.transport, cfg, pid, path,
                                 Random(f"{run.seed}/host"), covert=self.covert)
        else:
            self.node = ClientNode(
                self.loop, self.transport, cfg, pid,
                ("127.0.0.1", host_port), path,
                Random(f"{run.seed}/client{pid}"),
                password_attempt=password if password is not None else run.password,
            )
        self.handle = SessionHandle(self.node)
        self.peer = CovertPeer(self.handle, self.covert, self.profile, self.loop,
                               seed=run.seed + pid)
        self.loop.start()
        self.transport.start()

    def wait_joined(self, timeout_ms: float = 10000.0) -> bool:
        if isinstance(self.node, HostNode):
            return drive(self.loop, lambda: bool(self.node.peers), timeout_ms)
        return drive(self.loop, lambda: self.node.join_state != "joining",
                     timeout_ms) and self.node.join_state == "joined"

    def wait_clear(self, timeout_ms: float = 10000.0) -> bool:
        return drive(self.loop, lambda: self.node.covert_clear, timeout_ms)

    def close(self) -> None:
        self.peer.receiver.stop()
        try:
            self.node.close()
        finally:
            self.transport.close()
            self.loop.stop()


def _run_transfer_loopback(run: RunConfig, payload: bytes) -> TransferReport:
    client_port = 0 if run.port == 0 else run.port + 1
    host = LoopbackPeer("host", run, bind_port=run.port)
    client = LoopbackPeer("client", run, bind_port=client_port,
                          host_port=host.transport.addr[1])
    t_wall = time.perf_counter()
    got = b""
    ok = False
    try:
        if not client.wait_joined() or not client.wait_clear():
            raise TransferError("loopback join failed", 0)
        host.wait_clear()
        t0 = time.monotonic()
        host.peer.send_message(1, payload)
        budget = max(60000.0, 5 * _expected_duration_ms(run, host.channel,
                                                        host.profile, len(payload)))
        _stream, got = client.peer.recv_message(timeout_ms=budget)
        ok = got == payload
        elapsed = max(time.monotonic() - t0, 1e-9)
        return TransferReport(
            ok=ok,
            payload_bytes=len(payload),
            sim_seconds=elapsed,
            wall_seconds=time.perf_counter() - t_wall,
            goodput_bps=len(payload) / elapsed,
            commands=host.peer.sender.commands_sent,
            retransmits=(host.node.stats.link.retransmits
                         + client.node.stats.link.retransmits),
            auth_failures=(host.node.stats.link.auth_failures
                           + client.node.stats.link.auth_failures),
            packets_sent=0,
            packets_dropped=0,
            bytes_delivered=len(got),
            config=run.to_dict(),
        )
    finally:
        client.close()
        host.close()


# -- parameter sweeps ---------------------------------------------------------


@dataclass(frozen=True)
class SweepCell:
    k: int
    delay_ms: float
    goodput_bps: float
    predicted_bps: float
    sim_seconds: float
    ks_size_vs_baseline: float


def sweep(
    run: RunConfig,
    payload: bytes,
    k_values: list[int],
    delay_values: list[float],
) -> list[SweepCell]:
    """Grid of transfers; KS compares packet sizes against the first cell."""
    cells: list[SweepCell] = []
    baseline_sizes: Optional[list[int]] = None
    for k in k_values:
        for delay in delay_values:
            cfg = replace(run, k=k, delay_ms=delay)
            map_spec = cfg.map_spec()
            channel = cfg.channel_config(map_spec)
            profile = cfg.timing_profile(channel)
            report, trace = run_transfer_traced(cfg, payload)
            est = expected_rate(channel, profile)
            sizes = trace.sizes()
            if baseline_sizes is None:
                baseline_sizes = sizes
            ks = trafficlab.ks_statistic(baseline_sizes, sizes) if sizes else 1.0
            cells.append(SweepCell(k, delay, report.goodput_bps,
                                   est.bytes_per_second, report.sim_seconds, ks))
    return cells
