"""Lossy datagram transports and on-the-wire trace capture.

The in-process transport delivers datagrams through the session's event
loop after applying an adversarial loss model (drop, delay, reorder,
duplicate); the UDP transport sends real datagrams on loopback.  Both
expose the same send/register surface so the engine does not care which
one it is running over.
"""

from __future__ import annotations

import socket
import threading
from dataclasses import dataclass, field
from random import Random
from typing import Callable, Hashable, Optional

from .clock import EventLoop, RealtimeLoop

Address = Hashable
Receiver = Callable[[Address, bytes], None]


@dataclass(frozen=True)
class LossModel:
    """Per-datagram mangling probabilities for the simulated path."""

    drop_prob: float = 0.0
    delay_ms: float = 5.0
    delay_jitter_ms: float = 2.0
    reorder_prob: float = 0.0
    reorder_extra_ms: float = 30.0
    duplicate_prob: float = 0.0

    def __post_init__(self) -> None:
        for p in (self.drop_prob, self.reorder_prob, self.duplicate_prob):
            if not 0.0 <= p < 1.0:
                raise ValueError(f"probability {p} outside [0, 1)")
        if min(self.delay_ms, self.delay_jitter_ms, self.reorder_extra_ms) < 0:
            raise ValueError("delays must be non-negative")


@dataclass
class TraceRecorder:
    """Records every datagram put on the wire.

    ``host_addr`` labels direction: host-to-peer traffic is ``a>b``,
    everything flowing toward the host is ``b>a``.  Payload capture is
    optional and only used by leak checks.
    """

    host_addr: Address = None
    capture_payloads: bool = False
    records: list[tuple[float, int, str]] = field(default_factory=list)
    payloads: list[bytes] = field(default_factory=list)

    def record(self, now_ms: float, src: Address, data: bytes) -> None:
        direction = "a>b" if src == self.host_addr else "b>a"
        self.records.append((now_ms, len(data), direction))
        if self.capture_payloads:
            self.payloads.append(data)


@dataclass
class LinkStats:
    sent: int = 0
    delivered: int = 0
    dropped: int = 0
    duplicated: int = 0
    reordered: int = 0


class InProcessNet:
    """Virtual datagram network shared by every endpoint of one session."""

    def __init__(
        self,
        loop: EventLoop,
        loss: LossModel,
        rng: Random,
        trace: Optional[TraceRecorder] = None,
    ):
        self.loop = loop
        self.loss = loss
        self.rng = rng
        self.trace = trace
        self.stats = LinkStats()
        self._endpoints: dict[Address, Receiver] = {}

    def register(self, addr: Address, receiver: Receiver) -> None:
        self._endpoints[addr] = receiver

    def unregister(self, addr: Address) -> None:
        self._endpoints.pop(addr, None)

    def send(self, src: Address, dst: Address, data: bytes) -> None:
        self.stats.sent += 1
        if self.trace is not None:
            self.trace.record(self.loop.now_ms, src, data)
        if self.rng.random() < self.loss.drop_prob:
            self.stats.dropped += 1
            return
        copies = 1
        if self.rng.random() < self.loss.duplicate_prob:
            copies = 2
            self.stats.duplicated += 1
        for _ in range(copies):
            delay = self.loss.delay_ms
            if self.loss.delay_jitter_ms > 0:
                delay += self.rng.uniform(0, self.loss.delay_jitter_ms)
            if self.rng.random() < self.loss.reorder_prob:
                delay += self.rng.uniform(0, self.loss.reorder_extra_ms)
                self.stats.reordered += 1
            self.loop.schedule(delay, self._deliver(dst, src, bytes(data)))

    def _deliver(self, dst: Address, src: Address, data: bytes) -> Callable[[], None]:
        def deliver() -> None:
            receiver = self._endpoints.get(dst)
            if receiver is not None:
                self.stats.delivered += 1
                receiver(src, data)

        return deliver


class UdpTransport:
    """Loopback UDP endpoint feeding datagrams into a realtime loop."""

    def __init__(self, loop: RealtimeLoop, bind: tuple[str, int],
                 trace: Optional[TraceRecorder] = None):
        self.loop = loop
        self.trace = trace
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.bind(bind)
        self.sock.settimeout(0.2)
        self.addr = self.sock.getsockname()
        self._receiver: Optional[Receiver] = None
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def register(self, addr: Address, receiver: Receiver) -> None:
        self._receiver = receiver

    def unregister(self, addr: Address) -> None:
        self._receiver = None

    def start(self) -> None:
        self._thread = threading.Thread(target=self._read_loop, daemon=True)
        self._thread.start()

    def send(self, src: Address, dst: Address, data: bytes) -> None:
        if self.trace is not None:
            self.trace.record(self.loop.now_ms, src, data)
        self.sock.sendto(data, dst)

    def _read_loop(self) -> None:
        while not self._stop.is_set():
            try:
                data, src = self.sock.recvfrom(65536)
            except socket.timeout:
                continue
            except OSError:
                return
            receiver = self._receiver
            if receiver is not None:
                # hop onto the loop thread so engine state stays single-threaded
                self.loop.schedule(0, lambda s=src, d=data: receiver(s, d))

    def close(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2.0)
        self.sock.close()
