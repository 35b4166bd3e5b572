"""Covert stream framing and the proxy relay.

Messages travel as frames packed into the bit stream that the codec
spreads across game commands:

    frame_type u8 (DATA=1 REQUEST=2 RESPONSE=3 CLOSE=4)
    stream_id  u16
    length     u32
    payload    length bytes
    checksum   u32 crc32 over type..payload

A frame type of zero is reserved: the encoder zero-pads the tail of the
final command of every message (and realigns to a byte boundary before
the next one), so on the receive side runs of 0x00 bytes between frames
are padding and get skipped.  The checksum is an end-to-end backstop;
the transport already authenticates every packet.

Each session member runs a sender pump (encode bits into commands, pace
them through the automation model, submit to the game) and a receiver
(tail the replay log, decode remote commands, reassemble frames).  Both
stay quiet until the session reports covert-clear, so an unverified
observer only ever sees ordinary game traffic.
"""

from __future__ import annotations

import struct
import time
import zlib
from collections import deque
from dataclasses import dataclass
from random import Random
from typing import Callable, Optional

from .automation import TimingProfile, schedule_command
from .codec import (
    BitStream,
    ChannelConfig,
    CodecError,
    GameCommand,
    Mode,
    Opcode,
    encode_command,
    payload_bits,
)
from .netsim import crypto
from .netsim.clock import EventLoop
from .netsim.engine import CovertContext, SessionHandle
from .replay import ReplayRecord, ReplayTailer

FRAME_DATA = 1
FRAME_REQUEST = 2
FRAME_RESPONSE = 3
FRAME_CLOSE = 4
_FRAME_TYPES = (FRAME_DATA, FRAME_REQUEST, FRAME_RESPONSE, FRAME_CLOSE)

_HEAD = struct.Struct("<BHI")  # type, stream_id, length
_CRC = struct.Struct("<I")
FRAME_OVERHEAD = _HEAD.size + _CRC.size  # 11
MAX_FRAME_PAYLOAD = 4 * 1024 * 1024

STATUS_OK = 0
STATUS_NOT_FOUND = 1
STATUS_ERROR = 2

DEFAULT_RECV_POLL_MS = 10.0


class SessionStreamError(Exception):
    pass


class FrameCorruptError(SessionStreamError):
    pass


class TransferError(SessionStreamError):
    def __init__(self, message: str, bytes_delivered: int = 0):
        self.bytes_delivered = bytes_delivered
        super().__init__(f"{message} (bytes delivered: {bytes_delivered})")


@dataclass(frozen=True)
class Frame:
    frame_type: int
    stream_id: int
    payload: bytes

    def encode(self) -> bytes:
        if self.frame_type not in _FRAME_TYPES:
            raise SessionStreamError(f"bad frame type {self.frame_type}")
        if len(self.payload) > MAX_FRAME_PAYLOAD:
            raise SessionStreamError("frame payload too large")
        head = _HEAD.pack(self.frame_type, self.stream_id, len(self.payload))
        crc = zlib.crc32(head + self.payload) & 0xFFFFFFFF
        return head + self.payload + _CRC.pack(crc)


class FrameParser:
    """Reassembles frames from a decoded byte stream.

    Skips zero padding between frames; anything else that fails to parse
    is counted and resynchronized past, one byte at a time (only
    reachable when decoding a stream that was never covert framing, e.g.
    a censor decoding decoy AI moves).
    """

    def __init__(self) -> None:
        self._buf = bytearray()
        self.frames: deque[Frame] = deque()
        self.corrupt_frames = 0
        self.resync_bytes = 0
        self.bytes_fed = 0

    def feed(self, data: bytes) -> None:
        self._buf.extend(data)
        self.bytes_fed += len(data)
        self._scan()

    def _scan(self) -> None:
        buf = self._buf
        pos = 0
        while True:
            while pos < len(buf) and buf[pos] == 0:
                pos += 1
            if len(buf) - pos < _HEAD.size:
                break
            ftype, stream_id, length = _HEAD.unpack_from(buf, pos)
            if ftype not in _FRAME_TYPES or length > MAX_FRAME_PAYLOAD:
                self.resync_bytes += 1
                pos += 1
                continue
            end = pos + _HEAD.size + length + _CRC.size
            if len(buf) < end:
                break
            body = bytes(buf[pos:end - _CRC.size])
            (crc,) = _CRC.unpack_from(buf, end - _CRC.size)
            if zlib.crc32(body) & 0xFFFFFFFF != crc:
                self.corrupt_frames += 1
                self.resync_bytes += 1
                pos += 1
                continue
            self.frames.append(Frame(ftype, stream_id, body[_HEAD.size:]))
            pos = end
        del buf[:pos]


def drive(loop, predicate: Callable[[], bool], timeout_ms: float) -> bool:
    """Run the loop (or wait on it) until ``predicate()`` or timeout."""
    if isinstance(loop, EventLoop):
        deadline = loop.now_ms + timeout_ms
        while not predicate():
            if loop.now_ms >= deadline:
                return predicate()
            if not loop.step():
                return predicate()
        return True
    deadline = time.monotonic() + timeout_ms / 1000.0
    while not predicate():
        if time.monotonic() >= deadline:
            break
        time.sleep(0.002)
    return predicate()


class CovertSender:
    """Encodes queued frames into commands paced by the automation model."""

    def __init__(
        self,
        handle: SessionHandle,
        covert: CovertContext,
        profile: TimingProfile,
        rng: Random,
        loop,
    ):
        self.handle = handle
        self.covert = covert
        self.profile = profile
        self.rng = rng
        self.loop = loop
        self._out = BitStream()
        self._knock_out: Optional[BitStream] = None
        self._emitted_bits = 0
        self._inflight = False
        self.commands_sent = 0
        self.payload_bytes_queued = 0
        self.error: Optional[str] = None
        handle.node.on_covert_clear.append(self._kick)

    @property
    def opcode(self) -> Opcode:
        kind = self.covert.map_spec.objects[0].kind
        return Opcode.SET_RALLY_POINT if kind == "building" else Opcode.MOVE

    @property
    def idle(self) -> bool:
        knock_left = self._knock_out.remaining if self._knock_out else 0
        return not self._inflight and self._out.remaining <= 0 and knock_left <= 0

    def send_knock(self, auth_secret: bytes) -> None:
        """Queue the password-derived opening bits, bypassing the clear gate."""
        self._knock_out = BitStream(crypto.knock_bytes(auth_secret))
        self._kick()

    def send_frame(self, frame: Frame) -> None:
        if self.handle.closed:
            raise TransferError("session closed", 0)
        data = frame.encode()
        if self._out.remaining > 0:
            self._out.write_bytes(data)
        else:
            # previous chunk drained (tail zero-padded): realign the new
            # frame to a byte boundary of the emitted stream
            fresh = BitStream()
            align = (8 - self._emitted_bits % 8) % 8
            if align:
                fresh.write(0, align)
            fresh.write_bytes(data)
            self._out = fresh
        self.payload_bytes_queued += len(data)
        self._kick()

    def send_message(self, stream_id: int, payload: bytes,
                     frame_type: int = FRAME_DATA) -> int:
        """Queue one message; returns the number of frames (always 1)."""
        self.send_frame(Frame(frame_type, stream_id, payload))
        return 1

    def _kick(self) -> None:
        if self._inflight or self.handle.closed:
            return
        knocking = self._knock_out is not None and self._knock_out.remaining > 0
        if not knocking:
            if not self.handle.covert_clear or self._out.remaining <= 0:
                return
        self._inflight = True
        source = self._knock_out if knocking else self._out
        cmd = encode_command(source, self.covert.channel, self.rng, self.opcode)
        submit_cmd = self._to_map(cmd)
        sched = schedule_command(submit_cmd, self.covert.map_spec, self.profile,
                                 self.loop.now_ms, rng=self.rng)
        if not knocking:
            self._emitted_bits += payload_bits(cmd, self.covert.channel)

        def finish() -> None:
            self._inflight = False
            if self.handle.closed:
                self.error = "session closed mid-stream"
                return
            self.handle.submit_commands([submit_cmd])
            self.commands_sent += 1
            self._kick()

        self.loop.schedule_at(sched.done_ms, finish)

    def _to_map(self, cmd: GameCommand) -> GameCommand:
        if cmd.target is None:
            return cmd
        return GameCommand(cmd.opcode, cmd.selected,
                           self.covert.map_spec.rally_region.to_map(cmd.target))

    def wait_idle(self, timeout_ms: float) -> bool:
        """Drive the loop until everything queued has been submitted."""
        return drive(self.loop, lambda: self.idle or self.handle.closed, timeout_ms)


class _SenderStream:
    """Bit accumulator plus frame parser for one remote sender."""

    def __init__(self) -> None:
        self.bits = BitStream()
        self.parser = FrameParser()

    def push(self, fields: list[tuple[int, int]]) -> None:
        for value, width in fields:
            self.bits.write(value, width)
        whole = self.bits.bit_length // 8
        if whole:
            self.parser.feed(self.bits.to_bytes()[:whole])
            # keep only the trailing partial byte pending
            leftover = self.bits.bit_length - 8 * whole
            fresh = BitStream()
            if leftover:
                self.bits.cursor = 8 * whole
                fresh.write(self.bits.read(leftover), leftover)
            self.bits = fresh


class CovertReceiver:
    """Tails the local replay log and reassembles remote covert frames.

    Decoding starts at the covert-clear point (everything before it is
    joining noise, knocks, or decoy AI) and keeps one bit stream and
    frame parser per remote sender, since the lockstep log interleaves
    everyone's commands.
    """

    def __init__(
        self,
        handle: SessionHandle,
        covert: CovertContext,
        loop,
        poll_ms: float = DEFAULT_RECV_POLL_MS,
    ):
        self.handle = handle
        self.covert = covert
        self.loop = loop
        self.poll_ms = poll_ms
        self.frames: deque[tuple[int, Frame]] = deque()
        self.decode_errors = 0
        self._streams: dict[int, _SenderStream] = {}
        self._tailer: Optional[ReplayTailer] = None
        self._min_tick = 0
        self._stopped = False
        handle.node.on_covert_clear.append(self._on_clear)
        if handle.node.covert_clear:
            self._on_clear()

    def _on_clear(self) -> None:
        if self._tailer is not None:
            return
        node = self.handle.node
        self._tailer = ReplayTailer(node.replay_path,
                                    from_offset=node.covert_start_offset or 0)
        clear_tick = node.covert_clear_tick
        self._min_tick = (clear_tick if clear_tick is not None
                          else node.tick_index) + 1
        self._schedule_poll()

    def _schedule_poll(self) -> None:
        if not self._stopped:
            self.loop.schedule(self.poll_ms, self._poll)

    def _poll(self) -> None:
        if self._stopped:
            return
        for rec in self._tailer.poll():
            self._consume(rec)
        if not self.handle.closed:
            self._schedule_poll()

    def _consume(self, rec: ReplayRecord) -> None:
        if rec.player == self.handle.player_id or rec.tick < self._min_tick:
            return
        stream = self._streams.get(rec.player)
        if stream is None:
            stream = self._streams[rec.player] = _SenderStream()
        try:
            fields = self.covert.decode_bits(rec)
        except CodecError:
            self.decode_errors += 1
            return
        stream.push(fields)
        while stream.parser.frames:
            self.frames.append((rec.player, stream.parser.frames.popleft()))

    @property
    def corrupt_frames(self) -> int:
        return sum(s.parser.corrupt_frames for s in self._streams.values())

    def recv_frame(self, timeout_ms: float = 60000.0) -> tuple[int, Frame]:
        """Block (drive the loop) until a complete frame is available."""
        drive(self.loop, lambda: bool(self.frames) or self.handle.closed,
              timeout_ms)
        if self.frames:
            return self.frames.popleft()
        if self.handle.closed:
            raise TransferError(
                self.handle.node.close_reason or "session lost",
                sum(s.parser.bytes_fed for s in self._streams.values()),
            )
        raise TimeoutError("no frame within timeout")

    def recv_message(self, timeout_ms: float = 60000.0) -> tuple[int, bytes]:
        """Next DATA frame as (stream_id, payload)."""
        while True:
            _sender, frame = self.recv_frame(timeout_ms)
            if frame.frame_type == FRAME_DATA:
                return frame.stream_id, frame.payload

    def stop(self) -> None:
        self._stopped = True


class CovertPeer:
    """One covert-aware session member: sender pump plus receiver."""

    def __init__(
        self,
        handle: SessionHandle,
        covert: CovertContext,
        profile: TimingProfile,
        loop,
        seed: int = 0,
        poll_ms: float = DEFAULT_RECV_POLL_MS,
    ):
        self.handle = handle
        self.covert = covert
        self.loop = loop
        rng = Random(f"{seed}/peer{handle.player_id}")
        self.sender = CovertSender(handle, covert, profile, rng, loop)
        self.receiver = CovertReceiver(handle, covert, loop, poll_ms=poll_ms)

    def send_knock(self, password: Optional[str], session_salt: bytes,
                   kdf_cost: int) -> None:
        secret = crypto.derive_auth_secret(password, session_salt, kdf_cost)
        self.sender.send_knock(secret)

    def send_message(self, stream_id: int, payload: bytes,
                     frame_type: int = FRAME_DATA) -> int:
        return self.sender.send_message(stream_id, payload, frame_type)

    def recv_message(self, timeout_ms: float = 60000.0) -> tuple[int, bytes]:
        return self.receiver.recv_message(timeout_ms)

    def close(self) -> None:
        self.receiver.stop()
        self.handle.close()


# -- proxy -----------------------------------------------------------------

Resolver = Callable[[bytes], tuple[int, bytes]]


def document_store_resolver(store: dict[str, bytes]) -> Resolver:
    """Test resolver: requests of the form b"doc:<key>" hit a local store."""

    def resolve(request: bytes) -> tuple[int, bytes]:
        if not request.startswith(b"doc:"):
            return STATUS_ERROR, b"unsupported request"
        key = request[4:].decode("utf-8", "replace")
        if key not in store:
            return STATUS_NOT_FOUND, b"no such document"
        return STATUS_OK, store[key]

    return resolve


def url_fetch_resolver(timeout_s: float = 10.0) -> Resolver:
    """Live fetcher behind the same narrow interface; optional."""
    from urllib.request import urlopen

    def resolve(request: bytes) -> tuple[int, bytes]:
        url = request.decode("utf-8", "replace")
        try:
            with urlopen(url, timeout=timeout_s) as resp:
                return STATUS_OK, resp.read()
        except Exception as exc:
            return STATUS_ERROR, str(exc).encode()

    return resolve


class ProxyService:
    """Event-driven request answerer attached to a peer's receive queue.

    Polls the peer's reassembled frames on its loop, so it coexists with
    other work on the same (virtual or realtime) scheduler.  The response
    payload is one status byte followed by the resolver output; resolver
    failures become STATUS_ERROR responses rather than taking the proxy
    down.
    """

    def __init__(self, peer: CovertPeer, resolver: Resolver,
                 poll_ms: float = 20.0):
        self.peer = peer
        self.resolver = resolver
        self.poll_ms = poll_ms
        self.served = 0
        self.stopped = False
        peer.loop.schedule(poll_ms, self._poll)

    def _poll(self) -> None:
        if self.stopped:
            return
        queue = self.peer.receiver.frames
        while queue:
            _sender, frame = queue.popleft()
            if frame.frame_type == FRAME_CLOSE:
                self.stopped = True
                return
            if frame.frame_type != FRAME_REQUEST:
                continue
            try:
                status, body = self.resolver(frame.payload)
            except Exception as exc:
                status, body = STATUS_ERROR, str(exc).encode()
            self.peer.send_message(frame.stream_id,
                                   bytes([status & 0xFF]) + body,
                                   FRAME_RESPONSE)
            self.served += 1
        if not self.peer.handle.closed:
            self.peer.loop.schedule(self.poll_ms, self._poll)
        else:
            self.stopped = True

    def stop(self) -> None:
        self.stopped = True


def proxy_serve(
    peer: CovertPeer,
    resolver: Resolver,
    max_requests: Optional[int] = None,
    timeout_ms: float = 120000.0,
) -> int:
    """Serve REQUEST frames until CLOSE, ``max_requests``, or timeout."""
    service = ProxyService(peer, resolver)
    drive(
        peer.loop,
        lambda: service.stopped or (max_requests is not None
                                    and service.served >= max_requests),
        timeout_ms,
    )
    service.stop()
    return service.served


def fetch_document(peer: CovertPeer, request: bytes, stream_id: int = 1,
                   timeout_ms: float = 60000.0) -> tuple[int, bytes]:
    """Client side of the proxy exchange: one REQUEST, one RESPONSE."""
    peer.send_message(stream_id, request, FRAME_REQUEST)
    while True:
        _sender, frame = peer.receiver.recv_frame(timeout_ms)
        if frame.frame_type == FRAME_RESPONSE and frame.stream_id == stream_id:
            if not frame.payload:
                raise SessionStreamError("empty proxy response")
            return frame.payload[0], frame.payload[1:]
