"""Lockstep game-session engine.

Stands in for the off-the-shelf game: peers join a hosted session, the
host collects submitted commands and rebroadcasts them in fixed-interval
tick batches, and every node appends the agreed command stream to its
replay log.  All traffic rides an encrypted, reliable, ordered packet
stream per link (cumulative-ack ARQ over lossy datagrams), so the
channel survives drops, reordering, duplication, and injected garbage.

Membership is gated by the session password and, optionally, by a knock:
an opening command sequence whose decoded bits must match a
password-derived string.  While any admitted peer is unverified the host
plays scripted AI moves and no covert frames are transmitted, so an
observing censor sees an ordinary game.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field, replace
from enum import Enum
from random import Random
from typing import Callable, Optional

from ..codec import (
    BitStream,
    ChannelConfig,
    CodecError,
    GameCommand,
    Mode,
    Opcode,
    decode_command,
)
from ..mapgen import MapSpec
from ..replay import ReplayError, ReplayRecord, ReplayWriter, decode_record, encode_record
from . import crypto, wire
from .clock import EventLoop
from .loss import InProcessNet, LossModel, TraceRecorder

MSG_JOIN = 1
MSG_ACCEPT = 2
MSG_REJECT = 3
MSG_BATCH = 4
MSG_SUBMIT = 5
MSG_KEEPALIVE = 6
MSG_STATUS = 7

# Serialized batches stay well under the 64 KiB datagram ciphertext cap.
MAX_BATCH_BYTES = 32768
MAX_OOO_BUFFER = 4096
MAX_RETRANSMITS = 25


class Transport(Enum):
    IN_PROCESS = "in_process"
    DATAGRAM_LOOPBACK = "datagram_loopback"


class SessionError(Exception):
    pass


class JoinRejectedError(SessionError):
    pass


class JoinTimeoutError(SessionError):
    pass


class ChannelClosedError(SessionError):
    pass


class SessionLostError(SessionError):
    pass


@dataclass(frozen=True)
class SessionConfig:
    """Session-wide parameters, shared by host and joiners."""

    tick_ms: float = 100.0
    players: int = 2
    transport: Transport = Transport.IN_PROCESS
    password: Optional[str] = None
    loss: LossModel = field(default_factory=LossModel)
    session_name: str = "default"
    reject_wrong_password: bool = False  # False: admit as decoy observer
    require_knock: bool = False
    knock_timeout_ticks: int = 200
    max_commands_per_tick: int = 512
    dead_interval_ms: float = 30000.0
    join_timeout_ms: float = 10000.0
    kdf_cost: int = crypto.DEFAULT_KDF_COST

    def __post_init__(self) -> None:
        if self.tick_ms <= 0:
            raise ValueError("tick_ms must be positive")
        if not 2 <= self.players <= 8:
            raise ValueError("sessions support 2..8 players")
        if self.max_commands_per_tick < 1:
            raise ValueError("max_commands_per_tick must be positive")

    @property
    def salt(self) -> bytes:
        return crypto.derive_salt(self.session_name)


@dataclass(frozen=True)
class CovertContext:
    """What a covert-aware node needs to interpret logged commands."""

    channel: ChannelConfig
    map_spec: MapSpec

    def record_to_command(self, rec: ReplayRecord) -> GameCommand:
        cmd = rec.to_command()
        if self.channel.mode is Mode.BYTE_CLICK:
            return GameCommand(cmd.opcode, cmd.selected, None)
        rel = self.map_spec.rally_region.from_map((rec.x, rec.y))
        return GameCommand(cmd.opcode, cmd.selected, rel)

    def decode_bits(self, rec: ReplayRecord) -> list[tuple[int, int]]:
        fields = decode_command(self.record_to_command(rec), self.channel)
        return [f for f in fields if f[1] > 0]


@dataclass
class LinkCounters:
    packets_sent: int = 0
    packets_received: int = 0
    retransmits: int = 0
    auth_failures: int = 0
    duplicates: int = 0


class ReliableLink:
    """One encrypted, ordered, exactly-once packet stream to a peer.

    Every outgoing packet gets a fresh sequence number and carries a
    cumulative ack.  Retransmissions resend the original sealed bytes
    verbatim so a nonce is never reused with different content.  Packet
    sequence 1 is the handshake (sealed under the public hello key);
    everything after uses the per-link key.
    """

    RTO_MIN_MS = 50.0
    RTO_MAX_MS = 2000.0

    def __init__(
        self,
        loop,
        send_raw: Callable[[bytes], None],
        local_id: int,
        salt: bytes,
        tick_ms: float,
        on_message: Callable[[int, bytes], None],
        counters: Optional[LinkCounters] = None,
        on_dead: Optional[Callable[[], None]] = None,
    ):
        self.loop = loop
        self.send_raw = send_raw
        self.local_id = local_id
        self.salt = salt
        self.tick_ms = tick_ms
        self.on_message = on_message
        self.on_dead = on_dead
        self.hello_key = crypto.hello_key(salt)
        self._link_key: Optional[bytes] = None
        self._prekey_stash: list[bytes] = []
        self.counters = counters if counters is not None else LinkCounters()
        self.dead = False

        self._next_seq = 1
        self._unacked: dict[int, bytes] = {}
        self._send_times: dict[int, float] = {}
        self._retx_counts: dict[int, int] = {}
        self._srtt: Optional[float] = None
        self._rtt_samples = 0
        self._backoff = 1.0
        self._timer = None

        self._next_expected = 1
        self._ooo: dict[int, tuple[int, bytes]] = {}
        self.last_heard_ms: Optional[float] = None

    @property
    def link_key(self) -> Optional[bytes]:
        return self._link_key

    @link_key.setter
    def link_key(self, key: bytes) -> None:
        self._link_key = key
        stash, self._prekey_stash = self._prekey_stash, []
        for datagram in stash:
            self.on_datagram(datagram)

    # -- sending ---------------------------------------------------------

    def _key_for(self, seq: int) -> Optional[bytes]:
        return self.hello_key if seq == 1 else self.link_key

    def send_message(self, msg: bytes, tick: int) -> int:
        if self.dead:
            raise SessionLostError("link is dead")
        seq = self._next_seq
        key = self._key_for(seq)
        if key is None:
            raise SessionError("link key not established")
        self._next_seq += 1
        nonce = wire.make_nonce(self.local_id, seq)
        ack = self.ack_value()
        # the header authenticates as associated data; ct_len is known
        # from the plaintext length before sealing (tag adds 16 bytes)
        shell = wire.Packet(self.local_id, seq, ack, tick, nonce,
                            b"\x00" * (len(msg) + 16))
        ct = crypto.seal(key, nonce, self.salt + shell.header_bytes(), msg)
        datagram = wire.pack_packet(replace(shell, ciphertext=ct))
        self._unacked[seq] = datagram
        self._send_times[seq] = self.loop.now_ms
        self.counters.packets_sent += 1
        self.send_raw(datagram)
        self._arm_timer()
        return seq

    def ack_value(self) -> int:
        return self._next_expected - 1

    def _rto_ms(self) -> float:
        base = self.tick_ms if self._srtt is None else max(2 * self._srtt, self.tick_ms)
        if self._rtt_samples < 8:
            # acks piggyback on the peer's tick cadence; until the RTT
            # estimate has absorbed that, hold a two-tick floor
            base = max(base, 2 * self.tick_ms)
        return min(max(base * self._backoff, self.RTO_MIN_MS), self.RTO_MAX_MS)

    def _arm_timer(self) -> None:
        if self._timer is None and self._unacked and not self.dead:
            self._timer = self.loop.schedule(self._rto_ms(), self._on_timeout)

    def _on_timeout(self) -> None:
        self._timer = None
        if not self._unacked or self.dead:
            return
        seq = min(self._unacked)
        count = self._retx_counts.get(seq, 0) + 1
        if count > MAX_RETRANSMITS:
            self._go_dead()
            return
        self._retx_counts[seq] = count
        self.counters.retransmits += 1
        self.counters.packets_sent += 1
        self.send_raw(self._unacked[seq])
        self._backoff = min(self._backoff * 2, 16.0)
        self._arm_timer()

    def _go_dead(self) -> None:
        self.dead = True
        self._unacked.clear()
        if self._timer is not None:
            self._timer.cancel()
            self._timer = None
        if self.on_dead is not None:
            self.on_dead()

    def _process_ack(self, ack: int) -> None:
        advanced = False
        for seq in sorted(self._unacked):
            if seq > ack:
                break
            self._unacked.pop(seq)
            sent = self._send_times.pop(seq, None)
            if sent is not None and seq not in self._retx_counts:
                sample = self.loop.now_ms - sent
                self._srtt = sample if self._srtt is None else (
                    0.875 * self._srtt + 0.125 * sample
                )
                self._rtt_samples += 1
            self._retx_counts.pop(seq, None)
            advanced = True
        if advanced:
            self._backoff = 1.0
            if self._timer is not None:
                self._timer.cancel()
                self._timer = None
            self._arm_timer()

    # -- receiving -------------------------------------------------------

    def on_datagram(self, data: bytes) -> None:
        if self.dead:
            return
        try:
            pkt = wire.parse_packet(data)
        except wire.WireFormatError:
            self.counters.auth_failures += 1
            return
        if pkt.nonce != wire.make_nonce(pkt.sender, pkt.seq):
            self.counters.auth_failures += 1
            return
        key = self._key_for(pkt.seq)
        if key is None:
            # handshake not finished: stash and replay once the key lands
            if len(self._prekey_stash) < 64:
                self._prekey_stash.append(data)
            return
        msg = crypto.open_sealed(key, pkt.nonce, self.salt + pkt.header_bytes(),
                                 pkt.ciphertext)
        if msg is None:
            self.counters.auth_failures += 1
            return
        self.counters.packets_received += 1
        self.last_heard_ms = self.loop.now_ms
        self._process_ack(pkt.ack)
        seq = pkt.seq
        if seq < self._next_expected or seq in self._ooo:
            self.counters.duplicates += 1
            return
        if seq > self._next_expected:
            if len(self._ooo) < MAX_OOO_BUFFER:
                self._ooo[seq] = (pkt.tick, msg)
            return
        self._deliver(pkt.tick, msg)

    def _deliver(self, tick: int, msg: bytes) -> None:
        self._next_expected += 1
        self.on_message(tick, msg)
        while self._next_expected in self._ooo:
            tick2, msg2 = self._ooo.pop(self._next_expected)
            self._next_expected += 1
            self.on_message(tick2, msg2)

    def close(self) -> None:
        if self._timer is not None:
            self._timer.cancel()
            self._timer = None
        self._unacked.clear()
        self.dead = True


def _pack_records(msg_type: int, records: list[ReplayRecord]) -> bytes:
    out = bytearray(struct.pack("<BH", msg_type, len(records)))
    for rec in records:
        out.extend(encode_record(rec))
    return bytes(out)


def _unpack_records(msg: bytes) -> list[ReplayRecord]:
    (count,) = struct.unpack_from("<H", msg, 1)
    records = []
    pos = 3
    for _ in range(count):
        rec, pos = decode_record(msg, pos)
        if rec is None:
            raise SessionError("truncated record batch")
        records.append(rec)
    return records


class _KnockState:
    def __init__(self, expected: bytes, deadline_tick: int):
        self.expected = expected
        self.deadline_tick = deadline_tick
        self.bits = BitStream()
        self.result: Optional[bool] = None

    def feed(self, fields: list[tuple[int, int]]) -> None:
        if self.result is not None:
            return
        for value, width in fields:
            self.bits.write(value, width)
        if self.bits.bit_length >= 8 * len(self.expected):
            got = self.bits.to_bytes()[: len(self.expected)]
            self.result = crypto.tokens_match(self.expected, got)

    def expire(self, tick: int) -> None:
        if self.result is None and tick > self.deadline_tick:
            self.result = False


class _PeerState:
    def __init__(self, player_id: int, addr, link: ReliableLink):
        self.player_id = player_id
        self.addr = addr
        self.link = link
        self.joined = False
        self.pw_verified = False
        self.knock: Optional[_KnockState] = None
        self.pending: list[ReplayRecord] = []  # submitted, awaiting a tick
        self.sent_this_tick = False

    def fully_verified(self, require_knock: bool) -> bool:
        if not self.pw_verified:
            return False
        if require_knock:
            return self.knock is not None and self.knock.result is True
        return True


@dataclass
class NodeStats:
    commands_submitted: int = 0
    commands_logged: int = 0
    batches: int = 0
    link: LinkCounters = field(default_factory=LinkCounters)


class _NodeBase:
    """State and behavior shared by host and client nodes."""

    def __init__(self, loop, cfg: SessionConfig, player_id: int,
                 replay_path, rng: Random):
        self.loop = loop
        self.cfg = cfg
        self.player_id = player_id
        self.addr = ("player", player_id)
        self.rng = rng
        self.replay = ReplayWriter(replay_path)
        self.replay_path = replay_path
        self.stats = NodeStats()
        self.closed = False
        self.close_reason: Optional[str] = None
        self.tick_index = 0
        self.covert_clear = False
        self.covert_start_offset: Optional[int] = None
        self.covert_clear_tick: Optional[int] = None
        self.on_records: Optional[Callable[[list[ReplayRecord]], None]] = None
        self.on_covert_clear: list[Callable[[], None]] = []

    def _append_records(self, records: list[ReplayRecord]) -> None:
        for rec in records:
            self.replay.append(rec)
            self.stats.commands_logged += 1
        self.stats.batches += 1
        if self.on_records is not None:
            self.on_records(records)

    def _require_open(self) -> None:
        if self.closed:
            raise ChannelClosedError(self.close_reason or "session closed")

    def _mark_covert_clear(self, tick: int) -> None:
        if not self.covert_clear:
            self.covert_clear = True
            self.covert_start_offset = _file_size(self.replay_path)
            self.covert_clear_tick = tick
            for fn in list(self.on_covert_clear):
                fn()

    def _shutdown(self, reason: str) -> None:
        if self.closed:
            return
        self.closed = True
        self.close_reason = reason
        self.replay.close()


class HostNode(_NodeBase):
    """Session host: admits peers, runs the tick loop, rebroadcasts batches."""

    def __init__(self, loop, net, cfg: SessionConfig, player_id: int,
                 replay_path, rng: Random,
                 covert: Optional[CovertContext] = None,
                 decoy_ai: bool = True):
        super().__init__(loop, cfg, player_id, replay_path, rng)
        self.net = net
        self.covert = covert
        self.decoy_ai_enabled = decoy_ai and covert is not None
        self.auth_secret = crypto.derive_auth_secret(cfg.password, cfg.salt,
                                                     cfg.kdf_cost)
        self.expected_knock = crypto.knock_bytes(self.auth_secret)
        self.peers: dict[int, _PeerState] = {}
        self._by_addr: dict = {}
        self.own_pending: list[ReplayRecord] = []
        self._ai_rng = Random(f"{rng.randbytes(8).hex()}/host-ai")
        self._next_ai_ms: Optional[float] = None
        net.register(self.addr, self.on_datagram)
        self._tick_timer = loop.schedule(cfg.tick_ms, self._tick)

    # -- membership ------------------------------------------------------

    def on_datagram(self, src, data: bytes) -> None:
        if self.closed:
            return
        state = self._by_addr.get(src)
        if state is None:
            state = self._try_admit(src, data)
            if state is None:
                return
        state.link.on_datagram(data)

    def _try_admit(self, src, data: bytes) -> Optional[_PeerState]:
        try:
            pkt = wire.parse_packet(data)
        except wire.WireFormatError:
            return None
        if pkt.seq != 1:
            return None
        link = ReliableLink(
            self.loop,
            lambda d, s=src: self.net.send(self.addr, s, d),
            self.player_id, self.cfg.salt, self.cfg.tick_ms,
            on_message=lambda tick, msg, s=src: self._on_peer_message(s, msg),
            counters=self.stats.link,
            on_dead=lambda s=src: self._drop_peer(s),
        )
        state = _PeerState(pkt.sender, src, link)
        self._by_addr[src] = state
        return state

    def _drop_peer(self, src) -> None:
        state = self._by_addr.pop(src, None)
        if state is None:
            return
        state.link.close()
        self.peers.pop(state.player_id, None)
        self._update_covert_clear()

    def _on_peer_message(self, src, msg: bytes) -> None:
        state = self._by_addr.get(src)
        if state is None or not msg:
            return
        kind = msg[0]
        if kind == MSG_JOIN:
            self._handle_join(state, msg)
        elif kind == MSG_SUBMIT and state.joined:
            self._handle_submit(state, msg)
        # keepalives only refresh liveness, which the link already tracked

    def _handle_join(self, state: _PeerState, msg: bytes) -> None:
        if state.joined or len(msg) != 1 + 16 + 32 + crypto.TOKEN_LEN:
            return
        nonce_c, pub_c, token = msg[1:17], msg[17:49], msg[49:]
        pid = state.player_id
        full = len(self.peers) >= self.cfg.players - 1
        if pid == self.player_id or pid in self.peers or full:
            state.link.send_message(bytes([MSG_REJECT]), self.tick_index)
            return
        expected = crypto.join_token(self.auth_secret, nonce_c, pub_c, pid)
        verified = crypto.tokens_match(expected, token)
        if not verified and self.cfg.reject_wrong_password:
            state.link.send_message(bytes([MSG_REJECT]), self.tick_index)
            return
        priv, pub_h = crypto.new_keypair(self.rng)
        state.link.send_message(bytes([MSG_ACCEPT]) + pub_h, self.tick_index)
        state.link.link_key = crypto.link_key(
            priv, pub_c, self.cfg.salt, self.player_id, pid, nonce_c
        )
        state.joined = True
        state.pw_verified = verified
        state.sent_this_tick = True
        if self.cfg.require_knock and verified:
            state.knock = _KnockState(
                self.expected_knock,
                self.tick_index + self.cfg.knock_timeout_ticks,
            )
        self.peers[pid] = state
        self._update_covert_clear()

    # -- commands --------------------------------------------------------

    def submit_commands(self, commands: list[GameCommand]) -> int:
        self._require_open()
        for cmd in commands:
            self.own_pending.append(ReplayRecord.from_command(cmd, 0, self.player_id))
        self.stats.commands_submitted += len(commands)
        return len(commands)

    def _handle_submit(self, state: _PeerState, msg: bytes) -> None:
        try:
            records = _unpack_records(msg)
        except (SessionError, ReplayError, struct.error):
            return
        for rec in records:
            state.pending.append(
                ReplayRecord(0, state.player_id, rec.opcode, rec.ids, rec.x, rec.y)
            )

    # -- tick loop -------------------------------------------------------

    def _tick(self) -> None:
        if self.closed:
            return
        self.tick_index += 1
        tick = self.tick_index
        cap = self.cfg.max_commands_per_tick

        self._run_decoy_ai()

        batch: list[ReplayRecord] = []
        budget = MAX_BATCH_BYTES
        sources: list[tuple[int, list[ReplayRecord], Optional[_PeerState]]] = [
            (self.player_id, self.own_pending, None)
        ]
        for pid in sorted(self.peers):
            sources.append((pid, self.peers[pid].pending, self.peers[pid]))
        for pid, pending, state in sources:
            taken: list[ReplayRecord] = []
            while pending and len(taken) < cap:
                nxt = pending[0]
                if (batch or taken) and nxt.byte_length > budget:
                    break
                pending.pop(0)
                budget -= nxt.byte_length
                taken.append(replace(nxt, tick=tick))
            batch.extend(taken)
            if taken and state is not None:
                self._feed_knock(state, taken)

        if batch:
            payload = _pack_records(MSG_BATCH, batch)
            for state in self.peers.values():
                if state.joined:
                    state.link.send_message(payload, tick)
                    state.sent_this_tick = True
            self._append_records(batch)

        self._expire_knocks()

        for state in list(self.peers.values()):
            if not state.sent_this_tick:
                state.link.send_message(bytes([MSG_KEEPALIVE]), tick)
            state.sent_this_tick = False
            heard = state.link.last_heard_ms
            if heard is not None and (
                self.loop.now_ms - heard > self.cfg.dead_interval_ms
            ):
                self._shutdown(f"peer {state.player_id} silent too long")
                return

        self._tick_timer = self.loop.schedule(self.cfg.tick_ms, self._tick)

    def _feed_knock(self, state: _PeerState, records: list[ReplayRecord]) -> None:
        if state.knock is None or state.knock.result is not None or self.covert is None:
            return
        for rec in records:
            try:
                state.knock.feed(self.covert.decode_bits(rec))
            except CodecError:
                state.knock.result = False
                break
        if state.knock.result is not None:
            self._update_covert_clear()

    def _expire_knocks(self) -> None:
        changed = False
        for state in self.peers.values():
            if state.knock is not None and state.knock.result is None:
                state.knock.expire(self.tick_index)
                changed = changed or state.knock.result is not None
        if changed:
            self._update_covert_clear()

    def _update_covert_clear(self) -> None:
        ready = (len(self.peers) == self.cfg.players - 1 and
                 all(p.fully_verified(self.cfg.require_knock)
                     for p in self.peers.values()))
        if ready == self.covert_clear:
            return
        if ready:
            self._mark_covert_clear(self.tick_index)
        else:
            self.covert_clear = False
        status = bytes([MSG_STATUS, 1 if ready else 0])
        for state in self.peers.values():
            if state.joined and state.fully_verified(self.cfg.require_knock):
                state.link.send_message(status, self.tick_index)
                state.sent_this_tick = True

    def _run_decoy_ai(self) -> None:
        """Scripted random moves while the session is not covert-clear."""
        if not self.decoy_ai_enabled or self.covert_clear or not self.peers:
            return
        now = self.loop.now_ms
        if self._next_ai_ms is None:
            self._next_ai_ms = now + self._ai_rng.uniform(1000.0, 3000.0)
        if now < self._next_ai_ms:
            return
        self._next_ai_ms = now + self._ai_rng.uniform(1000.0, 3000.0)
        self.own_pending.append(
            ReplayRecord.from_command(
                random_legal_command(self.covert, self._ai_rng),
                0, self.player_id,
            )
        )

    def peer_verified(self, player_id: int) -> bool:
        state = self.peers.get(player_id)
        return state is not None and state.fully_verified(self.cfg.require_knock)

    def knock_status(self, player_id: int) -> str:
        state = self.peers.get(player_id)
        if state is None or state.knock is None or state.knock.result is None:
            return "pending"
        return "verified" if state.knock.result else "unverified"

    def close(self) -> None:
        for state in self._by_addr.values():
            state.link.close()
        self.net.unregister(self.addr)
        if self._tick_timer is not None:
            self._tick_timer.cancel()
        self._shutdown("closed")


class ClientNode(_NodeBase):
    """Joining peer: submits commands upstream, logs broadcast batches."""

    def __init__(self, loop, net, cfg: SessionConfig, player_id: int,
                 host_addr, replay_path, rng: Random,
                 password_attempt: Optional[str] = None):
        super().__init__(loop, cfg, player_id, replay_path, rng)
        self.net = net
        self.host_addr = host_addr
        self.join_state = "joining"
        self._priv, self._pub = crypto.new_keypair(rng)
        self._nonce_c = rng.randbytes(16)
        attempt_secret = crypto.derive_auth_secret(password_attempt, cfg.salt,
                                                   cfg.kdf_cost)
        self._token = crypto.join_token(attempt_secret, self._nonce_c, self._pub,
                                        player_id)
        self.link = ReliableLink(
            loop, lambda d: net.send(self.addr, host_addr, d),
            player_id, cfg.salt, cfg.tick_ms,
            on_message=lambda tick, msg: self._on_link_message(tick, msg),
            counters=self.stats.link,
            on_dead=lambda: self._shutdown("host unreachable"),
        )
        self.pending: list[ReplayRecord] = []
        net.register(self.addr, lambda src, data: self.link.on_datagram(data))
        self._join_deadline = loop.now_ms + cfg.join_timeout_ms
        self.link.send_message(
            bytes([MSG_JOIN]) + self._nonce_c + self._pub + self._token, 0
        )
        self._tick_timer = loop.schedule(cfg.tick_ms, self._tick)

    def _on_link_message(self, tick: int, msg: bytes) -> None:
        if not msg or self.closed:
            return
        kind = msg[0]
        if kind == MSG_ACCEPT and self.join_state == "joining":
            if len(msg) != 33:
                return
            self.link.link_key = crypto.link_key(
                self._priv, msg[1:33], self.cfg.salt, 0, self.player_id,
                self._nonce_c,
            )
            self.join_state = "joined"
        elif kind == MSG_REJECT and self.join_state == "joining":
            self.join_state = "rejected"
            self.link.close()
            self._shutdown("join rejected")
        elif kind == MSG_BATCH:
            self.tick_index = max(self.tick_index, tick)
            try:
                self._append_records(_unpack_records(msg))
            except (SessionError, ReplayError, struct.error):
                pass  # authenticated stream; treat garbage as a no-op
        elif kind == MSG_STATUS and len(msg) >= 2:
            if msg[1]:
                self._mark_covert_clear(tick)
            else:
                self.covert_clear = False

    def submit_commands(self, commands: list[GameCommand]) -> int:
        self._require_open()
        for cmd in commands:
            self.pending.append(ReplayRecord.from_command(cmd, 0, self.player_id))
        self.stats.commands_submitted += len(commands)
        return len(commands)

    def _tick(self) -> None:
        if self.closed:
            return
        if self.join_state == "joining":
            if self.loop.now_ms > self._join_deadline:
                self.join_state = "timeout"
                self._shutdown("join timed out")
                return
        elif self.join_state == "joined":
            if self.pending:
                take: list[ReplayRecord] = []
                used = 0
                while (self.pending and len(take) < self.cfg.max_commands_per_tick
                       and (not take
                            or used + self.pending[0].byte_length <= MAX_BATCH_BYTES)):
                    rec = self.pending.pop(0)
                    take.append(rec)
                    used += rec.byte_length
                self.link.send_message(_pack_records(MSG_SUBMIT, take),
                                       self.tick_index)
            else:
                self.link.send_message(bytes([MSG_KEEPALIVE]), self.tick_index)
            heard = self.link.last_heard_ms
            if heard is not None and (
                self.loop.now_ms - heard > self.cfg.dead_interval_ms
            ):
                self._shutdown("host silent too long")
                return
        self._tick_timer = self.loop.schedule(self.cfg.tick_ms, self._tick)

    def close(self) -> None:
        self.link.close()
        self.net.unregister(self.addr)
        if self._tick_timer is not None:
            self._tick_timer.cancel()
        self._shutdown("closed")


def random_legal_command(covert: CovertContext, rng: Random) -> GameCommand:
    """Uniform random legal move: the decoy AI's (and a censor's) repertoire."""
    cfg = covert.channel
    if cfg.mode is Mode.BYTE_CLICK:
        return GameCommand(Opcode.MOVE, (rng.randrange(1 << cfg.m_bits),), None)
    r = rng.randint(1, cfg.k)
    ids = tuple(sorted(rng.sample(range(cfg.n), r), reverse=True))
    rel = (rng.randrange(cfg.x_max), rng.randrange(cfg.y_max))
    opcode = (Opcode.SET_RALLY_POINT
              if covert.map_spec.objects[0].kind == "building" else Opcode.MOVE)
    return GameCommand(opcode, ids, covert.map_spec.rally_region.to_map(rel))


def _file_size(path) -> int:
    try:
        return os.path.getsize(path)
    except OSError:
        return 0


class SessionHandle:
    """Caller-facing face of one session member."""

    def __init__(self, node):
        self.node = node

    @property
    def player_id(self) -> int:
        return self.node.player_id

    @property
    def is_host(self) -> bool:
        return isinstance(self.node, HostNode)

    @property
    def covert_clear(self) -> bool:
        return self.node.covert_clear

    @property
    def closed(self) -> bool:
        return self.node.closed

    @property
    def replay_path(self):
        return self.node.replay_path

    @property
    def stats(self) -> NodeStats:
        return self.node.stats

    def submit_commands(self, commands: list[GameCommand]) -> int:
        return self.node.submit_commands(commands)

    def close(self) -> None:
        self.node.close()


class LockstepNetwork:
    """In-process harness: one virtual clock, one lossy net, all members."""

    def __init__(
        self,
        cfg: SessionConfig,
        seed: int = 0,
        covert: Optional[CovertContext] = None,
        trace: Optional[TraceRecorder] = None,
        loop: Optional[EventLoop] = None,
        decoy_ai: bool = True,
        replay_dir=None,
    ):
        self.cfg = cfg
        self.covert = covert
        self.loop = loop if loop is not None else EventLoop()
        self.seed = seed
        self.trace = trace
        self._replay_dir = replay_dir or tempfile.mkdtemp(prefix="castle-replay-")
        if trace is not None:
            trace.host_addr = ("player", 0)
        self.net = InProcessNet(self.loop, cfg.loss, Random(f"{seed}/loss"), trace)
        self.host_node = HostNode(
            self.loop, self.net, cfg, 0, self.replay_path(0),
            Random(f"{seed}/host"), covert=covert, decoy_ai=decoy_ai,
        )
        self.host = SessionHandle(self.host_node)

    def replay_path(self, player_id: int) -> str:
        return os.path.join(self._replay_dir, f"player{player_id}.creplay")

    def join(
        self,
        player_id: int,
        password_attempt: Optional[str] = None,
        max_wait_ms: Optional[float] = None,
    ) -> SessionHandle:
        """Join a new peer and drive the loop until the handshake settles."""
        node = ClientNode(
            self.loop, self.net, self.cfg, player_id, ("player", 0),
            self.replay_path(player_id),
            Random(f"{self.seed}/client{player_id}"),
            password_attempt=password_attempt,
        )
        limit = max_wait_ms if max_wait_ms is not None else self.cfg.join_timeout_ms * 2
        self.loop.run_while(lambda: node.join_state == "joining", max_ms=limit)
        if node.join_state == "rejected":
            raise JoinRejectedError(f"player {player_id} was rejected")
        if node.join_state != "joined":
            raise JoinTimeoutError(f"player {player_id} join timed out")
        return SessionHandle(node)

    def run_for(self, sim_ms: float) -> None:
        self.loop.run_for(sim_ms)


def knock_verify(
    network: LockstepNetwork,
    peer_id: int,
    timeout_ticks: Optional[int] = None,
) -> bool:
    """Drive the session until the peer's knock verdict is final.

    True iff the peer's opening commands decoded to the password-derived
    knock string within the timeout.
    """
    host = network.host_node
    ticks = timeout_ticks if timeout_ticks is not None else host.cfg.knock_timeout_ticks
    deadline = (ticks + 5) * network.cfg.tick_ms + network.loop.now_ms

    def unresolved() -> bool:
        state = host.peers.get(peer_id)
        if state is None or state.knock is None:
            return network.loop.now_ms < deadline
        return state.knock.result is None and network.loop.now_ms < deadline

    network.loop.run_while(unresolved)
    state = host.peers.get(peer_id)
    return (state is not None and state.knock is not None
            and state.knock.result is True)
